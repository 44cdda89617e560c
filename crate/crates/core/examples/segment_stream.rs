//! Cuts a stream of simulated touches into gesture windows.

use std::sync::Arc;

use tactile_dog::pipeline::{frame_mass, Segmenter, SegmenterConfig, TouchSession};
use tactile_dog::sim::{NoiseModel, Synthesizer};
use tactile_dog::taxonomy::Taxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tax = Arc::new(Taxonomy::load_default());
    let synth = Synthesizer::with_defaults(tax.clone());
    let classes = ["pat_head", "stroke_back_rear", "none", "handshake_right_forelimb"]
        .map(|t| tax.class_by_token(t).expect("known token"));
    let session = TouchSession::scripted(&synth, &classes, 12, 3)?;
    for g in session.gestures() {
        println!(
            "placed {:<14} ticks {}..={}",
            tax.class_token(g.class),
            g.start_tick,
            g.end_tick
        );
    }

    let config = SegmenterConfig::default();
    let mut seg = Segmenter::new(config);
    let mut events = Vec::new();
    for canvas in session.canvases(&NoiseModel::standard(3)) {
        events.extend(seg.push(canvas));
    }
    events.extend(seg.finish());
    for e in &events {
        let mass: u32 = e.window.frames().iter().map(|f| frame_mass(f, config.threshold)).sum();
        println!(
            "event ticks {}..={}, closed at {}, window from {} (mass {mass})",
            e.start_tick,
            e.end_tick,
            e.closed_at,
            e.window.start_tick()
        );
    }
    Ok(())
}
