use std::borrow::Cow;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix, ActorProfile, NoiseModel, Synthesizer};
use crate::frame::GestureWindow;
use crate::taxonomy::ClassId;

/// Random-access labeled windows, materialized or generated on demand.
pub trait WindowSource: Sync {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> Option<ClassId>;
    fn window(&self, index: usize) -> Cow<'_, GestureWindow>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl WindowSource for [GestureWindow] {
    fn len(&self) -> usize {
        <[GestureWindow]>::len(self)
    }

    fn label(&self, index: usize) -> Option<ClassId> {
        self[index].label
    }

    fn window(&self, index: usize) -> Cow<'_, GestureWindow> {
        Cow::Borrowed(&self[index])
    }
}

impl WindowSource for Vec<GestureWindow> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn label(&self, index: usize) -> Option<ClassId> {
        self[index].label
    }

    fn window(&self, index: usize) -> Cow<'_, GestureWindow> {
        Cow::Borrowed(&self[index])
    }
}

/// A view of selected indices of another source.
pub struct Subset<'a, S: WindowSource + ?Sized> {
    source: &'a S,
    indices: Vec<usize>,
}

impl<'a, S: WindowSource + ?Sized> Subset<'a, S> {
    pub fn new(source: &'a S, indices: Vec<usize>) -> Self {
        assert!(indices.iter().all(|&i| i < source.len()), "subset index out of range");
        Self { source, indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

impl<S: WindowSource + ?Sized> WindowSource for Subset<'_, S> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn label(&self, index: usize) -> Option<ClassId> {
        self.source.label(self.indices[index])
    }

    fn window(&self, index: usize) -> Cow<'_, GestureWindow> {
        self.source.window(self.indices[index])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItemSpec {
    pub class: ClassId,
    pub actor: u32,
    pub repetition: u32,
    pub seed: u64,
}

/// Generation record written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub per_class: u32,
    pub actors: u32,
    pub classes: usize,
    pub count: usize,
    pub noise: NoiseModel,
    pub actor_profiles: Vec<ActorProfile>,
}

/// Every (class, actor, repetition) item of a dataset, synthesized lazily.
#[derive(Debug, Clone)]
pub struct DatasetPlan {
    synth: Arc<Synthesizer>,
    noise: NoiseModel,
    items: Vec<ItemSpec>,
    profiles: Vec<ActorProfile>,
    manifest: Manifest,
}

/// Class-major plan of `classes x per_class x actors` windows.
pub fn generate_dataset(
    synth: Arc<Synthesizer>,
    per_class: u32,
    actors: u32,
    seed: u64,
    noise: NoiseModel,
) -> DatasetPlan {
    let classes = synth.taxonomy().classes().len();
    let profiles: Vec<ActorProfile> = (0..actors).map(|a| ActorProfile::for_actor(seed, a)).collect();
    let mut items = Vec::with_capacity(classes * per_class as usize * actors as usize);
    for c in 0..classes {
        for actor in 0..actors {
            for repetition in 0..per_class {
                let s = mix(mix(mix(mix(seed) ^ c as u64) ^ actor as u64) ^ repetition as u64);
                items.push(ItemSpec {
                    class: ClassId(c),
                    actor,
                    repetition,
                    seed: s,
                });
            }
        }
    }
    let manifest = Manifest {
        seed,
        per_class,
        actors,
        classes,
        count: items.len(),
        noise,
        actor_profiles: profiles.clone(),
    };
    DatasetPlan {
        synth,
        noise,
        items,
        profiles,
        manifest,
    }
}

impl DatasetPlan {
    pub fn items(&self) -> &[ItemSpec] {
        &self.items
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn labels(&self) -> Vec<ClassId> {
        self.items.iter().map(|i| i.class).collect()
    }

    pub fn synthesize(&self, index: usize) -> GestureWindow {
        let it = &self.items[index];
        self.synth
            .synthesize_as(it.class, it.seed, &self.noise, &self.profiles[it.actor as usize])
            .expect("planned classes exist")
    }

    /// Synthesizes every item, fanning out over `threads` workers.
    /// The result does not depend on the thread count.
    pub fn materialize(&self, threads: usize) -> Vec<GestureWindow> {
        let n = self.items.len();
        let threads = threads.clamp(1, n.max(1));
        let chunk = n.div_ceil(threads).max(1);
        let mut out: Vec<Option<GestureWindow>> = vec![None; n];
        std::thread::scope(|s| {
            for (ci, slot) in out.chunks_mut(chunk).enumerate() {
                s.spawn(move || {
                    for (j, w) in slot.iter_mut().enumerate() {
                        *w = Some(self.synthesize(ci * chunk + j));
                    }
                });
            }
        });
        out.into_iter().map(|w| w.expect("filled")).collect()
    }
}

impl WindowSource for DatasetPlan {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn label(&self, index: usize) -> Option<ClassId> {
        Some(self.items[index].class)
    }

    fn window(&self, index: usize) -> Cow<'_, GestureWindow> {
        Cow::Owned(self.synthesize(index))
    }
}

/// A rational in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    num: u64,
    den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Option<Self> {
        (den > 0 && num <= den).then_some(Self { num, den })
    }

    /// `floor(n * num / den)`.
    pub fn of(&self, n: usize) -> usize {
        (n as u128 * self.num as u128 / self.den as u128) as usize
    }
}

impl std::str::FromStr for Fraction {
    type Err = String;

    /// `9/10`, `1` or `0`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (n, d) = s.split_once('/').unwrap_or((s, "1"));
        let parse = |x: &str| x.trim().parse::<u64>().map_err(|e| format!("{s:?}: {e}"));
        Self::new(parse(n)?, parse(d)?).ok_or_else(|| format!("{s:?} is not a fraction in [0, 1]"))
    }
}

/// Stratified split: each class keeps `floor(count * fraction)` items for
/// training, chosen by a seeded shuffle. Returns sorted index lists.
pub fn split_stratified(labels: &[Option<ClassId>], fraction: Fraction, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: std::collections::BTreeMap<Option<ClassId>, Vec<usize>> = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(*l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x5911_7000));
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        let k = fraction.of(idx.len());
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}
