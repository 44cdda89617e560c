//! Simulated touch streams: scripted gesture sequences separated by
//! silence, and an endless random source for the demo server.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::runtime::Runtime;
use crate::frame::{TactileCanvas, TICK_HZ};
use crate::sim::{mix, ActorProfile, NoiseModel, Scene, SimError, Synthesizer};
use crate::taxonomy::ClassId;

/// Where a gesture sits in a [`TouchSession`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacedGesture {
    pub class: ClassId,
    pub start_tick: u64,
    /// Last tick with contact; equals `start_tick` for contact-free classes.
    pub end_tick: u64,
}

#[derive(Debug, Clone)]
pub struct TouchSession {
    scene: Scene,
    gestures: Vec<PlacedGesture>,
    len: u64,
}

impl TouchSession {
    /// `gap` silent ticks before, between and after the gestures.
    pub fn scripted(synth: &Synthesizer, classes: &[ClassId], gap: u64, seed: u64) -> Result<Self, SimError> {
        let mut scene = Scene::new();
        let mut gestures = Vec::with_capacity(classes.len());
        let mut cursor = gap;
        for (i, &class) in classes.iter().enumerate() {
            let (trajectories, _) =
                synth.gesture_trajectories(class, mix(seed ^ i as u64), &ActorProfile::neutral())?;
            let last = trajectories
                .iter()
                .filter_map(|t| t.samples.last().map(|s| s.frame as u64))
                .max();
            let first = trajectories
                .iter()
                .filter_map(|t| t.samples.first().map(|s| s.frame as u64))
                .min()
                .unwrap_or(0);
            for t in trajectories {
                scene.add(cursor, t);
            }
            gestures.push(PlacedGesture {
                class,
                start_tick: cursor + first,
                end_tick: cursor + last.unwrap_or(first),
            });
            cursor += last.map_or(1, |l| l + 1) + gap;
        }
        Ok(Self {
            scene,
            gestures,
            len: cursor,
        })
    }

    pub fn gestures(&self) -> &[PlacedGesture] {
        &self.gestures
    }

    /// Ticks in the session, trailing silence included.
    pub fn len_ticks(&self) -> u64 {
        self.len
    }

    pub fn canvas(&self, tick: u64, noise: &NoiseModel) -> TactileCanvas {
        let mut c = self.scene.render(tick);
        noise.apply(&mut c);
        c
    }

    pub fn canvases<'a>(&'a self, noise: &'a NoiseModel) -> impl Iterator<Item = TactileCanvas> + 'a {
        (0..self.len).map(move |t| self.canvas(t, noise))
    }
}

/// Endless random gestures with random pauses.
#[derive(Debug, Clone)]
pub struct DemoSource {
    synth: Synthesizer,
    noise: NoiseModel,
    rng: ChaCha8Rng,
    current: Option<(u64, TouchSession)>,
}

impl DemoSource {
    pub fn new(synth: Synthesizer, noise: NoiseModel, seed: u64) -> Self {
        Self {
            synth,
            noise,
            rng: ChaCha8Rng::seed_from_u64(mix(seed ^ 0xDE30)),
            current: None,
        }
    }

    /// Canvas for `tick`; ticks must not decrease between calls.
    pub fn canvas(&mut self, tick: u64) -> TactileCanvas {
        let expired = self
            .current
            .as_ref()
            .is_none_or(|(start, s)| tick >= start + s.len_ticks());
        if expired {
            let classes = self.synth.taxonomy().classes().len();
            let class = ClassId(self.rng.gen_range(0..classes));
            let gap = self.rng.gen_range(8..=20);
            let seed = self.rng.gen();
            let session = TouchSession::scripted(&self.synth, &[class], gap, seed).expect("class is in the taxonomy");
            log::debug!(
                "demo gesture {} at tick {tick}",
                self.synth.taxonomy().class_token(class)
            );
            self.current = Some((tick, session));
        }
        let (start, session) = self.current.as_ref().expect("set above");
        let mut c = session.canvas(tick - start, &NoiseModel::none());
        c.tick = tick;
        self.noise.apply(&mut c);
        c
    }
}

/// Feeds `source` into the runtime at the tick rate, as 8 board frames per
/// tick. Pauses while a client has sent frames within the last second.
pub fn spawn_demo(
    runtime: Arc<Runtime>,
    mut source: DemoSource,
    stop: Arc<AtomicBool>,
) -> std::io::Result<JoinHandle<()>> {
    std::thread::Builder::new().name("demo".into()).spawn(move || {
        let period = Duration::from_secs(1) / TICK_HZ;
        let mut next = Instant::now();
        while !stop.load(Ordering::Relaxed) {
            next += period;
            let ingest = runtime.ingest();
            if !ingest.client_active(Duration::from_secs(1)) {
                let tick = ingest.last_tick().map_or(0, |t| t + 1);
                for board in source.canvas(tick).disassemble() {
                    if let Err(e) = ingest.push_board(board) {
                        log::warn!("demo frame rejected: {e}");
                    }
                }
            }
            if let Some(wait) = next.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            } else {
                next = Instant::now();
            }
        }
    })
}
