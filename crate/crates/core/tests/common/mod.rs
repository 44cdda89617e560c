#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tactile_dog::actions::ActionTable;
use tactile_dog::classifier::{train_classifier, Classifier, ClassifierConfig};
use tactile_dog::frame::{GestureWindow, TactileCanvas, CANVAS_COLS, CANVAS_PIXELS, WINDOW_LEN};
use tactile_dog::pipeline::{Models, Segmenter, SegmenterConfig, TouchSession};
use tactile_dog::sim::{NoiseModel, Synthesizer};
use tactile_dog::taxonomy::{ClassId, Taxonomy};
use tactile_dog::translator::{train_translator, InteractionPair, Sentence, Translator, TranslatorConfig};

pub fn taxonomy() -> Arc<Taxonomy> {
    Arc::new(Taxonomy::load_default())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One touch event as either segmenter implementation reports it.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub start: u64,
    pub end: u64,
    pub closed_at: u64,
    pub window_start: u64,
    pub window: Vec<Vec<u8>>,
}

pub fn online_events(frames: &[TactileCanvas], cfg: SegmenterConfig) -> Vec<Event> {
    let mut s = Segmenter::new(cfg);
    let mut out: Vec<_> = frames.iter().flat_map(|f| s.push(f.clone())).collect();
    out.extend(s.finish());
    out.into_iter()
        .map(|e| Event {
            start: e.start_tick,
            end: e.end_tick,
            closed_at: e.closed_at,
            window_start: e.window.start_tick(),
            window: e.window.frames().iter().map(|f| f.pixels().to_vec()).collect(),
        })
        .collect()
}

fn mass(frame: &TactileCanvas, threshold: u8) -> u64 {
    frame
        .pixels()
        .iter()
        .filter(|&&p| p > threshold)
        .map(|&p| p as u64)
        .sum()
}

/// Offline scan: every (i, j) pair of active frames is tested against the
/// event definition directly, and the window is the heaviest 20-frame run
/// inside the span, found by recomputing every candidate sum.
///
/// `frames` must have strictly increasing ticks; missing ticks are silent.
pub fn oracle_events(frames: &[TactileCanvas], cfg: SegmenterConfig) -> Vec<Event> {
    let Some(first) = frames.first() else { return Vec::new() };
    let last_tick = frames.last().expect("non-empty").tick;
    let mut dense = Vec::new();
    let mut it = frames.iter().peekable();
    for t in first.tick..=last_tick {
        match it.peek() {
            Some(f) if f.tick == t => dense.push(it.next().expect("peeked").clone()),
            _ => dense.push(TactileCanvas::zeros(t)),
        }
    }
    let n = dense.len();
    let masses: Vec<u64> = dense.iter().map(|f| mass(f, cfg.threshold)).collect();
    let active: Vec<bool> = masses.iter().map(|&m| m > 0 && m >= cfg.min_mass as u64).collect();
    let gap = cfg.idle_gap.max(1);
    let mut events = Vec::new();
    for i in 0..n {
        for j in i..n {
            if !active[i] || !active[j] {
                continue;
            }
            let opens = (0..i).rev().take(gap).all(|k| !active[k]);
            let closes = (j + 1..n).take(gap).all(|k| !active[k]);
            let mut joined = true;
            let mut prev = i;
            for (k, &on) in active.iter().enumerate().take(j + 1).skip(i + 1) {
                if on {
                    if k - prev > gap {
                        joined = false;
                    }
                    prev = k;
                }
            }
            if !(opens && closes && joined) {
                continue;
            }
            let qualified = (i..=j).any(|s| s + cfg.min_active <= j + 1 && (s..s + cfg.min_active).all(|k| active[k]));
            if !qualified {
                continue;
            }
            let closed_at = if j + gap < n { dense[j + gap].tick } else { last_tick };
            let span = j - i + 1;
            let (window_start, window) = if span >= WINDOW_LEN {
                let mut best = i;
                let mut best_mass = None;
                for s in i..=j + 1 - WINDOW_LEN {
                    let m: u64 = (s..s + WINDOW_LEN).map(|k| masses[k]).sum();
                    if best_mass.is_none_or(|b| m > b) {
                        best_mass = Some(m);
                        best = s;
                    }
                }
                (
                    dense[best].tick,
                    (best..best + WINDOW_LEN).map(|k| dense[k].pixels().to_vec()).collect(),
                )
            } else {
                let left = (WINDOW_LEN - span) / 2;
                let mut w = vec![vec![0u8; CANVAS_PIXELS]; left];
                w.extend((i..=j).map(|k| dense[k].pixels().to_vec()));
                w.resize(WINDOW_LEN, vec![0u8; CANVAS_PIXELS]);
                (dense[i].tick.wrapping_sub(left as u64), w)
            };
            events.push(Event {
                start: dense[i].tick,
                end: dense[j].tick,
                closed_at,
                window_start,
                window,
            });
        }
    }
    events
}

/// Random bursts of contact of random size and strength, with occasional
/// tick gaps. Masses straddle the activity thresholds on purpose.
pub fn random_stream(rng: &mut impl Rng, len: usize) -> Vec<TactileCanvas> {
    let mut frames = Vec::with_capacity(len);
    let mut tick = rng.gen_range(0..1000u64);
    let mut burst = 0usize;
    let mut level = 0u8;
    for _ in 0..len {
        let mut c = TactileCanvas::zeros(tick);
        if burst == 0 && rng.gen_bool(0.15) {
            burst = rng.gen_range(1..30);
            level = rng.gen_range(1..=255);
        }
        if burst > 0 {
            burst -= 1;
            let row = rng.gen_range(0..60);
            let col = rng.gen_range(0..CANVAS_COLS - 4);
            let px = rng.gen_range(0..12);
            for k in 0..px {
                let v = level
                    .saturating_add(rng.gen_range(0..20))
                    .saturating_sub(rng.gen_range(0..20));
                c.set(row + k / 4, col + k % 4, v);
            }
            if rng.gen_bool(0.1) {
                burst = 0;
            }
        } else if rng.gen_bool(0.05) {
            c.set(
                rng.gen_range(0..64),
                rng.gen_range(0..CANVAS_COLS),
                rng.gen_range(1..40),
            );
        }
        frames.push(c);
        tick += if rng.gen_bool(0.03) { rng.gen_range(2..12) } else { 1 };
    }
    frames
}

pub fn random_config(rng: &mut impl Rng) -> SegmenterConfig {
    SegmenterConfig {
        threshold: rng.gen_range(0..40),
        min_active: rng.gen_range(1..6),
        idle_gap: rng.gen_range(1..9),
        min_mass: rng.gen_range(0..300),
    }
}

/// Gesture class paired with the action word the test grammar maps it to.
pub const MAPPING: [(&str, &str); 4] = [
    ("stroke_head", "nod"),
    ("rub_neck", "shake_head"),
    ("scratch_chin", "give_paw"),
    ("poke_hips", "lick"),
];
/// Contact the test classifier is taught to call "none".
pub const SPURIOUS: &str = "tickle_chin";

pub fn session(synth: &Synthesizer, tokens: &[&str], gap: u64, seed: u64) -> TouchSession {
    let tax = synth.taxonomy();
    let classes: Vec<ClassId> = tokens.iter().map(|t| tax.class_by_token(t).unwrap()).collect();
    TouchSession::scripted(synth, &classes, gap, seed).unwrap()
}

fn segmented_windows(synth: &Synthesizer, token: &str, seeds: std::ops::Range<u64>) -> Vec<GestureWindow> {
    let mut out = Vec::new();
    for seed in seeds {
        let s = session(synth, &[token], 10, seed);
        let mut seg = Segmenter::new(SegmenterConfig::default());
        let frames: Vec<_> = s.canvases(&NoiseModel::none()).collect();
        let mut events: Vec<_> = frames.into_iter().flat_map(|f| seg.push(f)).collect();
        events.extend(seg.finish());
        out.extend(events.into_iter().map(|e| e.window));
    }
    out
}

/// Classifier and translator memorizing [`MAPPING`] on the exact windows the
/// segmenter cuts from seeds `0..4` of each gesture.
pub fn overfit_models() -> Models {
    let tax = taxonomy();
    let synth = Synthesizer::with_defaults(tax.clone());
    let mut windows = Vec::new();
    for (token, _) in MAPPING {
        let id = tax.class_by_token(token).unwrap();
        for mut w in segmented_windows(&synth, token, 0..4) {
            w.label = Some(id);
            windows.push(w);
        }
    }
    for mut w in segmented_windows(&synth, SPURIOUS, 0..4) {
        w.label = Some(tax.none_class());
        windows.push(w);
    }
    let config = ClassifierConfig {
        epochs: 30,
        batch_size: 8,
        augment_shift: 0,
        ..ClassifierConfig::desk()
    };
    let mut classifier = Classifier::build(config, &tax).unwrap();
    train_classifier(&mut classifier, &windows, |_| {}).unwrap();
    for w in &windows {
        assert_eq!(
            classifier.predict(w).unwrap().class,
            w.label.unwrap(),
            "classifier failed to memorize"
        );
    }

    let mut r = rng(7);
    let mut pairs = Vec::new();
    for len in 1..=6 {
        for _ in 0..12 {
            let idx: Vec<usize> = (0..len).map(|_| r.gen_range(0..MAPPING.len())).collect();
            let src: Vec<&str> = idx.iter().map(|&i| MAPPING[i].0).collect();
            let tgt: Vec<&str> = idx.iter().map(|&i| MAPPING[i].1).collect();
            pairs.push(InteractionPair {
                source: Sentence::from_words(&src, tax.gesture_vocab()).unwrap(),
                target: Sentence::from_words(&tgt, tax.action_vocab()).unwrap(),
            });
        }
    }
    let mut translator = Translator::build(
        TranslatorConfig {
            epochs: 60,
            ..Default::default()
        },
        &tax,
    )
    .unwrap();
    train_translator(&mut translator, &pairs, |_| {}).unwrap();

    let actions = ActionTable::load_default(tax.clone());
    Models::new(tax, classifier, translator, actions).unwrap()
}

/// Untrained models; enough for anything that does not check decisions.
pub fn fresh_models() -> Models {
    let tax = taxonomy();
    let classifier = Classifier::build(ClassifierConfig::desk(), &tax).unwrap();
    let translator = Translator::build(TranslatorConfig::default(), &tax).unwrap();
    let actions = ActionTable::load_default(tax.clone());
    Models::new(tax, classifier, translator, actions).unwrap()
}
