//! Trains a reduced classifier on a handful of gesture classes and reports
//! held-out accuracy. The full desk run lives in the CLI:
//! `tactile-dog train-classifier --out clf.bin`.

use std::sync::Arc;

use tactile_dog::classifier::{evaluate, train_classifier, Classifier, ClassifierConfig};
use tactile_dog::frame::GestureWindow;
use tactile_dog::sim::{split_stratified, Fraction, NoiseModel, Synthesizer};
use tactile_dog::taxonomy::{ClassId, Taxonomy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tax = Arc::new(Taxonomy::load_default());
    let synth = Synthesizer::with_defaults(tax.clone());
    let classes = ["stroke_head", "pat_back_front", "poke_hips", "tickle_chin", "none"];
    let mut windows: Vec<GestureWindow> = Vec::new();
    for token in classes {
        let id = tax.class_by_token(token)?;
        for seed in 0..24 {
            windows.push(synth.synthesize(id, seed, &NoiseModel::standard(seed))?);
        }
    }
    let labels: Vec<Option<ClassId>> = windows.iter().map(|w| w.label).collect();
    let (train, test) = split_stratified(&labels, Fraction::new(3, 4).expect("valid"), 0);
    let pick = |idx: &[usize]| idx.iter().map(|&i| windows[i].clone()).collect::<Vec<_>>();
    let (train, test) = (pick(&train), pick(&test));

    let config = ClassifierConfig {
        epochs: 6,
        ..ClassifierConfig::desk()
    };
    let mut clf = Classifier::build(config, &tax)?;
    println!("{} parameters", clf.parameter_count());
    train_classifier(&mut clf, &train, |e| {
        println!(
            "epoch {}: loss {:.3}, train acc {:.3}",
            e.epoch, e.mean_loss, e.running_accuracy
        )
    })?;
    let report = evaluate(&clf, &test, 16)?;
    println!("held-out accuracy {:.3} on {} windows", report.accuracy, report.samples);

    let p = clf.predict(&test[0])?;
    println!(
        "{} predicted as {} ({:.2})",
        tax.class_token(test[0].label.expect("labeled")),
        tax.class_token(p.class),
        p.confidence
    );
    Ok(())
}
