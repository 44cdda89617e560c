//! Runs the deterministic engine over a scripted touch session, logs the
//! session and replays it at 10x against a fresh engine.
//!
//! cargo run --example live_pipeline -- [classifier.bin translator.bin]
//!
//! Without checkpoints the models are untrained, so the gestures and
//! actions are arbitrary; the pipeline mechanics are the same.

use std::fs::File;
use std::io::BufWriter;
use std::sync::Arc;

use tactile_dog::actions::ActionTable;
use tactile_dog::classifier::{Classifier, ClassifierConfig};
use tactile_dog::pipeline::{
    diff_decisions, read_session_log, replay, Engine, Models, Record, SegmenterConfig, SessionLogWriter, TouchSession,
};
use tactile_dog::sim::{NoiseModel, Synthesizer};
use tactile_dog::taxonomy::Taxonomy;
use tactile_dog::translator::{Translator, TranslatorConfig};

fn describe(r: &Record) -> Option<String> {
    Some(match r {
        Record::Frame(_) => return None,
        Record::Gesture(g) => format!("tick {:>4} gesture {} ({:.2})", g.tick, g.class, g.confidence),
        Record::Action(a) => format!("tick {:>4} action  {} for {} ticks", a.tick, a.action, a.duration_ticks),
        Record::Rejection(x) => format!("tick {:>4} reject  {} ({})", x.tick, x.action, x.reason.code()),
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tax = Arc::new(Taxonomy::load_default());
    let (classifier, translator) = match args.as_slice() {
        [c, t] => (Classifier::load(c, &tax)?, Translator::load(t, &tax)?),
        _ => (
            Classifier::build(ClassifierConfig::desk(), &tax)?,
            Translator::build(TranslatorConfig::default(), &tax)?,
        ),
    };
    let models = Models::new(
        tax.clone(),
        classifier,
        translator,
        ActionTable::load_default(tax.clone()),
    )?;

    let synth = Synthesizer::with_defaults(tax.clone());
    let classes = ["stroke_head", "pat_back_front", "scratch_chin", "rub_neck"].map(|t| tax.class_by_token(t).unwrap());
    let session = TouchSession::scripted(&synth, &classes, 10, 11)?;

    let path = std::env::temp_dir().join("live_pipeline.tsl");
    let mut log = SessionLogWriter::new(BufWriter::new(File::create(&path)?))?;
    let mut engine = Engine::new(models.clone(), SegmenterConfig::default());
    for canvas in session.canvases(&NoiseModel::standard(11)) {
        let step = engine.process(canvas)?;
        step.records.iter().filter_map(describe).for_each(|l| println!("{l}"));
        log.append_all(&step.records)?;
    }
    let tail = engine.finish()?;
    tail.iter().filter_map(describe).for_each(|l| println!("{l}"));
    log.append_all(&tail)?;
    println!("logged {} records to {}", log.count(), path.display());
    log.finish()?;

    let recorded = read_session_log(File::open(&path)?)?;
    let mut fresh = Engine::new(models, SegmenterConfig::default());
    let outcome = replay(&recorded, &mut fresh, 10.0, |_| {})?;
    match diff_decisions(&recorded, &outcome.records) {
        None => println!(
            "replay at 10x: decisions identical, {} frames in {:.1} s, max event latency {:.1} ms",
            outcome.frames,
            outcome.elapsed.as_secs_f64(),
            outcome.max_event_latency().as_secs_f64() * 1e3
        ),
        Some(d) => println!("replay diverged: {d}"),
    }
    Ok(())
}
