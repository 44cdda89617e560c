//! Sensor-bus simulation and procedural gesture synthesis.

mod dataset;
mod script;

use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{
    layout, quantize_pressure, BoardFrame, GestureWindow, TactileCanvas, CANVAS_COLS, CANVAS_PIXELS, CANVAS_ROWS,
    WINDOW_LEN,
};
use crate::taxonomy::{ClassId, Region, Taxonomy};

pub use dataset::{
    generate_dataset, split_stratified, DatasetPlan, Fraction, ItemSpec, Manifest, Subset, WindowSource,
};
pub use script::{GestureScript, MotionFamily, ScriptError, ScriptSet, DEFAULT_SCRIPTS};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("class {0} is not in the taxonomy")]
    UnknownClass(usize),
    #[error(transparent)]
    Script(#[from] ScriptError),
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One contact ellipse at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSample {
    pub frame: u32,
    pub row: f64,
    pub col: f64,
    pub radius_row: f64,
    pub radius_col: f64,
    pub peak_kg: f64,
}

/// A single contact path, clipped to one body-part region.
#[derive(Debug, Clone, PartialEq)]
pub struct TouchTrajectory {
    pub clip: Region,
    pub samples: Vec<ContactSample>,
    pub duration_frames: u32,
}

impl TouchTrajectory {
    fn at(&self, frame: u32) -> Option<&ContactSample> {
        self.samples
            .binary_search_by_key(&frame, |s| s.frame)
            .ok()
            .map(|i| &self.samples[i])
    }

    pub fn shifted(mut self, frames: u32) -> Self {
        for s in &mut self.samples {
            s.frame += frames;
        }
        self
    }
}

/// Trajectories placed on the tick axis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scene {
    entries: Vec<(u64, TouchTrajectory)>,
}

impl Scene {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, start_tick: u64, trajectory: TouchTrajectory) {
        self.entries.push((start_tick, trajectory));
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Last tick with any contact, if any.
    pub fn last_tick(&self) -> Option<u64> {
        self.entries
            .iter()
            .filter_map(|(t, tr)| tr.samples.last().map(|s| t + s.frame as u64))
            .max()
    }

    /// Noise-free canvas at `tick`.
    pub fn render(&self, tick: u64) -> TactileCanvas {
        let mut force = vec![0.0; CANVAS_PIXELS];
        for (start, tr) in &self.entries {
            if tick < *start || tick - start > u32::MAX as u64 {
                continue;
            }
            if let Some(s) = tr.at((tick - start) as u32) {
                stamp(&mut force, &tr.clip, s);
            }
        }
        quantize_canvas(tick, &force)
    }
}

fn stamp(force: &mut [f64], clip: &Region, s: &ContactSample) {
    let r0 = ((s.row - s.radius_row).floor().max(clip.row as f64)) as usize;
    let r1 = ((s.row + s.radius_row).ceil() as usize).min(clip.row + clip.height);
    let c0 = ((s.col - s.radius_col).floor().max(clip.col as f64)) as usize;
    let c1 = ((s.col + s.radius_col).ceil() as usize).min(clip.col + clip.width);
    for r in r0..r1 {
        let dr = (r as f64 + 0.5 - s.row) / s.radius_row;
        for c in c0..c1 {
            let dc = (c as f64 + 0.5 - s.col) / s.radius_col;
            let d2 = dr * dr + dc * dc;
            if d2 < 1.0 {
                force[r * CANVAS_COLS + c] += s.peak_kg * (1.0 - d2);
            }
        }
    }
}

/// Full-scale force per canvas pixel (0 for padding).
fn range_map() -> &'static [f64] {
    static MAP: OnceLock<Vec<f64>> = OnceLock::new();
    MAP.get_or_init(|| {
        let mut m = vec![0.0; CANVAS_PIXELS];
        for r in 0..CANVAS_ROWS {
            for c in 0..CANVAS_COLS {
                if let Some(p) = layout::sensor_at(r, c) {
                    m[r * CANVAS_COLS + c] = p.range_kg;
                }
            }
        }
        m
    })
}

/// Full-scale force of the sensor under a region's top-left pixel.
pub fn region_range_kg(region: &Region) -> f64 {
    range_map()[region.row * CANVAS_COLS + region.col]
}

fn quantize_canvas(tick: u64, force: &[f64]) -> TactileCanvas {
    let ranges = range_map();
    let pixels = force
        .iter()
        .zip(ranges)
        .map(|(&f, &range)| {
            if range == 0.0 || f <= 0.0 {
                0
            } else {
                quantize_pressure(f, range).expect("non-negative force")
            }
        })
        .collect();
    TactileCanvas::from_pixels(tick, pixels).expect("canvas size")
}

/// Residual sensor noise: rectified Gaussian baseline plus rare spikes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub baseline_std: f64,
    pub spike_probability: f64,
    pub seed: u64,
}

/// Spike amplitudes are drawn from this range of quantized units.
pub const SPIKE_RANGE: (u8, u8) = (12, 30);

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            baseline_std: 0.0,
            spike_probability: 0.0,
            seed: 0,
        }
    }

    pub fn standard(seed: u64) -> Self {
        Self {
            baseline_std: 2.0,
            spike_probability: 1e-4,
            seed,
        }
    }

    /// `none`, `standard` or `heavy`.
    pub fn profile(name: &str, seed: u64) -> Option<Self> {
        match name {
            "none" => Some(Self::none()),
            "standard" | "default" => Some(Self::standard(seed)),
            "heavy" => Some(Self {
                baseline_std: 4.0,
                spike_probability: 1e-3,
                seed,
            }),
            _ => None,
        }
    }

    pub fn is_silent(&self) -> bool {
        self.baseline_std == 0.0 && self.spike_probability == 0.0
    }

    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }

    /// Adds noise to sensor pixels; deterministic in `(seed, canvas.tick)`.
    pub fn apply(&self, canvas: &mut TactileCanvas) {
        if self.is_silent() {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed ^ mix(canvas.tick)));
        let normal = (self.baseline_std > 0.0).then(|| Normal::new(0.0, self.baseline_std).expect("finite std"));
        let ranges = range_map();
        for (px, &range) in canvas.pixels_mut().iter_mut().zip(ranges) {
            if range == 0.0 {
                continue;
            }
            let mut v = *px as f64;
            if let Some(n) = &normal {
                v += n.sample(&mut rng);
            }
            if self.spike_probability > 0.0 && rng.gen::<f64>() < self.spike_probability {
                v += rng.gen_range(SPIKE_RANGE.0..=SPIKE_RANGE.1) as f64;
            }
            *px = v.round().clamp(0.0, 255.0) as u8;
        }
    }
}

/// One broadcast-synchronized reading of all 8 boards.
pub fn simulate_tick(scene: &Scene, tick: u64, noise: &NoiseModel) -> Vec<BoardFrame> {
    let mut canvas = scene.render(tick);
    noise.apply(&mut canvas);
    let frames = canvas.disassemble();
    debug_assert!(frames.iter().all(|f| f.tick() == tick));
    frames
}

/// Per-actor multiplicative jitter on script speed and pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorProfile {
    pub speed: f64,
    pub pressure: f64,
}

pub const ACTOR_JITTER: f64 = 0.15;

impl ActorProfile {
    pub fn neutral() -> Self {
        Self {
            speed: 1.0,
            pressure: 1.0,
        }
    }

    pub fn for_actor(seed: u64, actor: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(seed ^ 0xAC70_2000) ^ actor as u64));
        Self {
            speed: 1.0 + rng.gen_range(-ACTOR_JITTER..=ACTOR_JITTER),
            pressure: 1.0 + rng.gen_range(-ACTOR_JITTER..=ACTOR_JITTER),
        }
    }
}

/// Generates labeled gesture windows from the taxonomy and motion scripts.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    taxonomy: Arc<Taxonomy>,
    scripts: ScriptSet,
}

impl Synthesizer {
    pub fn new(taxonomy: Arc<Taxonomy>, scripts: ScriptSet) -> Self {
        Self { taxonomy, scripts }
    }

    pub fn with_defaults(taxonomy: Arc<Taxonomy>) -> Self {
        let scripts = ScriptSet::from_toml(DEFAULT_SCRIPTS, &taxonomy).expect("shipped scripts are valid");
        Self::new(taxonomy, scripts)
    }

    pub fn taxonomy(&self) -> &Arc<Taxonomy> {
        &self.taxonomy
    }

    pub fn scripts(&self) -> &ScriptSet {
        &self.scripts
    }

    /// Contact trajectories of one gesture, frames counted from 0.
    pub fn gesture_trajectories(
        &self,
        class: ClassId,
        seed: u64,
        actor: &ActorProfile,
    ) -> Result<(Vec<TouchTrajectory>, u32), SimError> {
        let c = *self.taxonomy.class(class).ok_or(SimError::UnknownClass(class.0))?;
        let Some(part) = c.part else {
            return Ok((Vec::new(), 0));
        };
        let region = self.taxonomy.part(part).region;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed));
        let script = self.scripts.script(c.kind);
        Ok(script.generate(&region, region_range_kg(&region), actor, &mut rng))
    }

    pub fn synthesize(&self, class: ClassId, seed: u64, noise: &NoiseModel) -> Result<GestureWindow, SimError> {
        self.synthesize_as(class, seed, noise, &ActorProfile::neutral())
    }

    /// A 20-frame window (ticks 0..20) holding one gesture at a seeded offset.
    pub fn synthesize_as(
        &self,
        class: ClassId,
        seed: u64,
        noise: &NoiseModel,
        actor: &ActorProfile,
    ) -> Result<GestureWindow, SimError> {
        let (trajectories, duration) = self.gesture_trajectories(class, seed, actor)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x000F_F5E7));
        let slack = WINDOW_LEN as u32 - duration.min(WINDOW_LEN as u32);
        let offset = rng.gen_range(0..=slack);
        let mut scene = Scene::new();
        for t in trajectories {
            scene.add(offset as u64, t);
        }
        let noise = noise.reseeded(mix(noise.seed ^ seed));
        let frames = (0..WINDOW_LEN as u64)
            .map(|tick| {
                let mut c = scene.render(tick);
                noise.apply(&mut c);
                c
            })
            .collect();
        Ok(GestureWindow::new(frames, Some(class)).expect("consecutive ticks"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth() -> Synthesizer {
        Synthesizer::with_defaults(Arc::new(Taxonomy::load_default()))
    }

    #[test]
    fn empty_scene_is_silent_and_synchronized() {
        let frames = simulate_tick(&Scene::new(), 12, &NoiseModel::none());
        assert_eq!(frames.len(), 8);
        assert!(frames
            .iter()
            .all(|f| f.tick() == 12 && f.samples().iter().all(|&s| s == 0)));
    }

    #[test]
    fn noise_is_deterministic_and_spares_padding() {
        let n = NoiseModel::standard(9);
        let (mut a, mut b) = (TactileCanvas::zeros(4), TactileCanvas::zeros(4));
        n.apply(&mut a);
        n.apply(&mut b);
        assert_eq!(a, b);
        assert!(!a.is_silent());
        for r in 0..CANVAS_ROWS {
            for c in 0..CANVAS_COLS {
                if layout::sensor_at(r, c).is_none() {
                    assert_eq!(a.get(r, c), 0);
                }
            }
        }
    }

    #[test]
    fn none_class_is_silent() {
        let s = synth();
        let w = s.synthesize(ClassId(0), 77, &NoiseModel::none()).unwrap();
        assert!(w.frames().iter().all(TactileCanvas::is_silent));
        assert_eq!(w.label, Some(ClassId(0)));
    }

    #[test]
    fn same_seed_same_window() {
        let s = synth();
        let n = NoiseModel::standard(3);
        assert_eq!(
            s.synthesize(ClassId(5), 11, &n).unwrap(),
            s.synthesize(ClassId(5), 11, &n).unwrap()
        );
        assert_ne!(
            s.synthesize(ClassId(5), 11, &n).unwrap(),
            s.synthesize(ClassId(5), 12, &n).unwrap()
        );
    }

    #[test]
    fn unknown_class_is_an_error() {
        assert!(matches!(
            synth().synthesize(ClassId(81), 0, &NoiseModel::none()),
            Err(SimError::UnknownClass(81))
        ));
    }

    #[test]
    fn actor_profiles_stay_in_band() {
        for a in 0..50 {
            let p = ActorProfile::for_actor(1, a);
            assert!((0.85..=1.15).contains(&p.speed) && (0.85..=1.15).contains(&p.pressure));
        }
        assert_ne!(ActorProfile::for_actor(1, 0), ActorProfile::for_actor(1, 1));
    }
}
