//! Trains the gesture-to-action translator on the synthetic grammar and
//! decodes a few histories.

use tactile_dog::sim::Fraction;
use tactile_dog::taxonomy::Taxonomy;
use tactile_dog::translator::{
    evaluate_translator, generate_corpus, make_pair_dataset, train_translator, GrammarConfig, Sentence, Translator,
    TranslatorConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tax = Taxonomy::load_default();
    let pairs = generate_corpus(
        &tax,
        &GrammarConfig {
            pairs: 400,
            ..Default::default()
        },
    )?;
    let (train, test) = make_pair_dataset(&pairs, Fraction::new(5, 6).expect("valid"), 0);
    let mut t = Translator::build(
        TranslatorConfig {
            epochs: 40,
            ..Default::default()
        },
        &tax,
    )?;
    train_translator(&mut t, &train, |e| {
        if e.epoch % 10 == 9 {
            println!(
                "epoch {}: loss {:.3}, token acc {:.3}",
                e.epoch + 1,
                e.mean_loss,
                e.token_accuracy
            );
        }
    })?;
    let eval = evaluate_translator(&t, &test)?;
    println!(
        "held-out BLEU-1 {:.3}, last-word accuracy {:.3}",
        eval.bleu[0], eval.last_word_accuracy
    );

    for p in test.iter().take(3) {
        let out = t.translate(&p.source)?.sentence;
        println!(
            "{}\n  -> {}\n  (reference {})",
            p.source.words(tax.gesture_vocab()).join(" "),
            out.words(tax.action_vocab()).join(" "),
            p.target.words(tax.action_vocab()).join(" ")
        );
    }
    let history = Sentence::from_words(&["stroke_head", "pat_back_front"], tax.gesture_vocab())?;
    println!(
        "stroke_head pat_back_front -> {:?}",
        t.translate(&history)?.sentence.words(tax.action_vocab())
    );
    Ok(())
}
