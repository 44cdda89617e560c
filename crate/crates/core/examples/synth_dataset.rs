//! Synthesizes a small labeled dataset, writes it to a container file and
//! reads it back.
//!
//! cargo run --example synth_dataset -- /tmp/windows.tdw

use std::fs::File;
use std::io::BufWriter;
use std::sync::Arc;

use tactile_dog::frame::container::{read_dataset, write_dataset};
use tactile_dog::pipeline::{frame_mass, SegmenterConfig};
use tactile_dog::sim::{generate_dataset, NoiseModel, Synthesizer};
use tactile_dog::taxonomy::Taxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "windows.tdw".into());
    let tax = Arc::new(Taxonomy::load_default());
    let synth = Arc::new(Synthesizer::with_defaults(tax.clone()));
    let plan = generate_dataset(synth, 2, 2, 7, NoiseModel::standard(7));
    println!("{} windows planned", plan.items().len());

    let windows = plan.materialize(0);
    let written = write_dataset(BufWriter::new(File::create(&path)?), windows.clone())?;
    let back = read_dataset(File::open(&path)?)?;
    assert_eq!(back, windows);
    println!("wrote and re-read {written} windows at {path}");

    let w = &back[0];
    let label = tax.class_token(w.label.expect("labeled"));
    let seg = SegmenterConfig::default();
    let active = w
        .frames()
        .iter()
        .filter(|f| seg.is_active(frame_mass(f, seg.threshold)))
        .count();
    let noisy = w.frames().iter().filter(|f| !f.is_silent()).count();
    println!("first window: {label}, {active} active frames, {noisy} with any nonzero pixel");
    Ok(())
}
