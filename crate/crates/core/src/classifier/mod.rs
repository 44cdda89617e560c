//! Residual CNN over 20-frame windows with 81 output classes.

mod eval;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tactile_nn::checkpoint::{decode_checkpoint, encode_checkpoint};
use tactile_nn::layers::{ChannelNorm, Conv2d, Linear, ResidualBlock};
use tactile_nn::{Graph, NnError, ParamStore, Tensor, Var};
use thiserror::Error;

use crate::frame::{GestureWindow, TactileCanvas, CANVAS_COLS, CANVAS_PIXELS, CANVAS_ROWS, WINDOW_LEN};
use crate::taxonomy::{ClassId, Taxonomy};

pub use eval::{evaluate, render_confusion_png, EvalReport};
pub(crate) use train::cosine_lr;
pub use train::{train_classifier, EpochStats, TrainReport};

const CHECKPOINT_KIND: &str = "gesture-classifier";

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("window has {0} frames, expected 20")]
    Shape(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Linear layer over the whole final feature map.
    Flatten,
    /// Global average pooling, then a linear layer.
    GlobalAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub class_count: usize,
    pub stage_block_counts: Vec<usize>,
    pub base_channel_width: usize,
    pub stem_kernel: usize,
    pub head: Head,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Final learning rate of the cosine schedule, as a fraction of the initial one.
    pub final_lr_fraction: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Random temporal shift of up to this many frames during training (0 disables).
    pub augment_shift: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ClassifierConfig {
    /// Shallow stages for CPU training.
    pub fn desk() -> Self {
        Self {
            input_height: CANVAS_ROWS,
            input_width: CANVAS_COLS,
            input_channels: WINDOW_LEN,
            class_count: 81,
            stage_block_counts: vec![1, 1, 1, 1],
            base_channel_width: 16,
            stem_kernel: 3,
            head: Head::Flatten,
            epochs: 10,
            batch_size: 16,
            learning_rate: 2e-3,
            final_lr_fraction: 0.02,
            grad_clip: 5.0,
            seed: 0,
            augment_shift: 2,
        }
    }

    /// ResNet34 stage layout with a 7x7 stem and average-pooled head.
    pub fn resnet34() -> Self {
        Self {
            stage_block_counts: vec![3, 4, 6, 3],
            base_channel_width: 64,
            stem_kernel: 7,
            head: Head::GlobalAverage,
            ..Self::desk()
        }
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), ClassifierError> {
        let fail = |m: String| Err(ClassifierError::Config(m));
        if self.class_count != taxonomy.classes().len() {
            return fail(format!(
                "class_count {} does not match the taxonomy's {} classes",
                self.class_count,
                taxonomy.classes().len()
            ));
        }
        if (self.input_height, self.input_width, self.input_channels) != (CANVAS_ROWS, CANVAS_COLS, WINDOW_LEN) {
            return fail(format!(
                "input must be {WINDOW_LEN} x {CANVAS_ROWS} x {CANVAS_COLS}, got {} x {} x {}",
                self.input_channels, self.input_height, self.input_width
            ));
        }
        if self.stage_block_counts.is_empty() || self.stage_block_counts.contains(&0) {
            return fail("every stage needs at least one block".into());
        }
        if self.base_channel_width == 0 || self.stem_kernel.is_multiple_of(2) {
            return fail("base width must be positive and the stem kernel odd".into());
        }
        if self.batch_size == 0 || !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("batch size and learning rate must be positive".into());
        }
        let (h, w) = self.feature_map();
        if h == 0 || w == 0 {
            return fail("too many stages for the input size".into());
        }
        Ok(())
    }

    /// Spatial size after the stem, pooling and every stage.
    fn feature_map(&self) -> (usize, usize) {
        let conv = |n: usize, k: usize, s: usize, p: usize| (n + 2 * p).saturating_sub(k) / s + 1;
        let (mut h, mut w) = (
            conv(self.input_height, self.stem_kernel, 2, self.stem_kernel / 2),
            conv(self.input_width, self.stem_kernel, 2, self.stem_kernel / 2),
        );
        h = conv(h, 3, 2, 1);
        w = conv(w, 3, 2, 1);
        for _ in 1..self.stage_block_counts.len() {
            h = conv(h, 3, 2, 1);
            w = conv(w, 3, 2, 1);
        }
        (h, w)
    }

    fn final_channels(&self) -> usize {
        self.base_channel_width << (self.stage_block_counts.len() - 1)
    }
}

/// Scaled input for one window: channel `i` is frame `i`, pixels / 255.
pub fn window_to_tensor(window: &GestureWindow) -> Tensor<f32> {
    frames_to_tensor(window.frames()).expect("windows hold 20 frames")
}

pub fn frames_to_tensor(frames: &[TactileCanvas]) -> Result<Tensor<f32>, ClassifierError> {
    if frames.len() != WINDOW_LEN {
        return Err(ClassifierError::Shape(frames.len()));
    }
    let mut data = Vec::with_capacity(WINDOW_LEN * CANVAS_PIXELS);
    for f in frames {
        fill_scaled(f, &mut data);
    }
    Ok(Tensor::new(vec![WINDOW_LEN, CANVAS_ROWS, CANVAS_COLS], data)?)
}

fn fill_scaled(frame: &TactileCanvas, out: &mut Vec<f32>) {
    out.extend(frame.pixels().iter().map(|&p| p as f32 / 255.0));
}

/// `N x 20 x 64 x 128` batch; `shift[i]` moves window `i` later in time
/// by that many frames (negative: earlier), zero-filling.
pub(crate) fn batch_tensor(windows: &[&GestureWindow], shift: Option<&[isize]>) -> Tensor<f32> {
    let mut data = Vec::with_capacity(windows.len() * WINDOW_LEN * CANVAS_PIXELS);
    for (i, w) in windows.iter().enumerate() {
        let s = shift.map_or(0, |s| s[i]);
        for t in 0..WINDOW_LEN as isize {
            let src = t - s;
            if (0..WINDOW_LEN as isize).contains(&src) {
                fill_scaled(&w.frames()[src as usize], &mut data);
            } else {
                data.extend(std::iter::repeat_n(0.0, CANVAS_PIXELS));
            }
        }
    }
    Tensor::new(vec![windows.len(), WINDOW_LEN, CANVAS_ROWS, CANVAS_COLS], data).expect("batch shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: ClassId,
    pub confidence: f64,
    pub probabilities: Vec<f64>,
}

/// The gesture classifier with its parameters.
#[derive(Debug, Clone)]
pub struct Classifier {
    config: ClassifierConfig,
    store: ParamStore<f32>,
    stem: Conv2d,
    stem_norm: ChannelNorm,
    blocks: Vec<ResidualBlock>,
    head: Linear,
    head_in: usize,
}

impl Classifier {
    pub fn build(config: ClassifierConfig, taxonomy: &Taxonomy) -> Result<Self, ClassifierError> {
        config.validate(taxonomy)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let base = config.base_channel_width;
        let k = config.stem_kernel;
        let stem = Conv2d::new(&mut store, "stem", config.input_channels, base, k, 2, k / 2, &mut rng)?;
        let stem_norm = ChannelNorm::new(&mut store, "stem_norm", base)?;
        let mut blocks = Vec::new();
        let mut cin = base;
        for (stage, &count) in config.stage_block_counts.iter().enumerate() {
            let cout = base << stage;
            for b in 0..count {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(ResidualBlock::new(
                    &mut store,
                    &format!("stage{stage}.block{b}"),
                    cin,
                    cout,
                    stride,
                    &mut rng,
                )?);
                cin = cout;
            }
        }
        let (h, w) = config.feature_map();
        let head_in = match config.head {
            Head::Flatten => config.final_channels() * h * w,
            Head::GlobalAverage => config.final_channels(),
        };
        let head = Linear::new(&mut store, "head", head_in, config.class_count, true, &mut rng)?;
        Ok(Self {
            config,
            store,
            stem,
            stem_norm,
            blocks,
            head,
            head_in,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Records the forward pass; `input` is `N x 20 x 64 x 128`, the result `N x classes`.
    pub fn forward(&self, g: &mut Graph<f32>, input: Var) -> Result<Var, ClassifierError> {
        let n = g.shape(input)[0];
        let s = &self.store;
        let mut h = self.stem.forward(g, s, input)?;
        h = self.stem_norm.forward(g, s, h)?;
        h = g.relu(h);
        h = g.max_pool2d(h, 3, 2, 1)?;
        for b in &self.blocks {
            h = b.forward(g, s, h)?;
        }
        let features = match self.config.head {
            Head::Flatten => g.reshape(h, vec![n, self.head_in])?,
            Head::GlobalAverage => {
                let shape = g.shape(h).to_vec();
                let (c, hw) = (shape[1], shape[2] * shape[3]);
                let flat = g.reshape(h, vec![n * c, hw])?;
                let ones = g.input(Tensor::full(vec![hw, 1], 1.0 / hw as f32));
                let pooled = g.matmul(flat, ones)?;
                g.reshape(pooled, vec![n, c])?
            }
        };
        let logits = self.head.forward(g, s, features)?;
        if g.shape(logits) != [n, self.config.class_count] {
            return Err(ClassifierError::Config(format!(
                "logits shape {:?}, expected [{n}, {}]",
                g.shape(logits),
                self.config.class_count
            )));
        }
        Ok(logits)
    }

    /// Logits for a batch of windows.
    pub fn logits(&self, windows: &[&GestureWindow]) -> Result<Tensor<f32>, ClassifierError> {
        self.logits_of(batch_tensor(windows, None))
    }

    /// Logits for an already assembled `N x 20 x 64 x 128` tensor.
    pub fn logits_of(&self, input: Tensor<f32>) -> Result<Tensor<f32>, ClassifierError> {
        let mut g = Graph::new();
        let x = g.input(input);
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    pub fn predict_batch(&self, windows: &[&GestureWindow]) -> Result<Vec<Prediction>, ClassifierError> {
        let logits = self.logits(windows)?;
        let c = self.config.class_count;
        Ok(logits.data().chunks(c).map(prediction_from_logits).collect())
    }

    pub fn predict(&self, window: &GestureWindow) -> Result<Prediction, ClassifierError> {
        Ok(self.predict_batch(&[window])?.remove(0))
    }

    pub fn to_bytes(&self, taxonomy: &Taxonomy) -> Vec<u8> {
        let meta = CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            taxonomy: taxonomy.vocabulary_fingerprint(),
            config: self.config.clone(),
        };
        encode_checkpoint(&self.store, &toml::to_string(&meta).expect("meta serializes"))
    }

    pub fn save(&self, path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<(), ClassifierError> {
        std::fs::write(path, self.to_bytes(taxonomy))?;
        Ok(())
    }

    /// Rebuilds the model from a checkpoint, rejecting one made for a
    /// different taxonomy.
    pub fn from_bytes(bytes: &[u8], taxonomy: &Taxonomy) -> Result<Self, ClassifierError> {
        let ckpt = decode_checkpoint(bytes)?;
        let meta: CheckpointMeta =
            toml::from_str(&ckpt.meta).map_err(|e| ClassifierError::Checkpoint(format!("metadata: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(ClassifierError::Checkpoint(format!(
                "not a classifier checkpoint ({})",
                meta.kind
            )));
        }
        if meta.taxonomy != taxonomy.vocabulary_fingerprint() {
            return Err(ClassifierError::Checkpoint("trained for a different taxonomy".into()));
        }
        let mut model = Self::build(meta.config, taxonomy)?;
        ckpt.load_into(&mut model.store)?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Self, ClassifierError> {
        Self::from_bytes(&std::fs::read(path)?, taxonomy)
    }
}

pub(crate) fn prediction_from_logits(row: &[f32]) -> Prediction {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exp: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    let probabilities: Vec<f64> = exp.iter().map(|e| e / z).collect();
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    Prediction {
        class: ClassId(best),
        confidence: probabilities[best],
        probabilities,
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    taxonomy: u32,
    config: ClassifierConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ClassifierConfig {
        ClassifierConfig {
            base_channel_width: 4,
            ..ClassifierConfig::desk()
        }
    }

    #[test]
    fn desk_feature_map_is_2_by_4() {
        assert_eq!(ClassifierConfig::desk().feature_map(), (2, 4));
        assert_eq!(ClassifierConfig::resnet34().feature_map(), (2, 4));
    }

    #[test]
    fn class_count_must_match_taxonomy() {
        let t = Taxonomy::load_default();
        let cfg = ClassifierConfig {
            class_count: 80,
            ..tiny()
        };
        assert!(matches!(Classifier::build(cfg, &t), Err(ClassifierError::Config(_))));
    }

    #[test]
    fn window_scaling() {
        let mut w = GestureWindow::silent(0, None);
        assert!(window_to_tensor(&w).data().iter().all(|&v| v == 0.0));
        w.frames_mut()[2].set(1, 1, 255);
        let t = window_to_tensor(&w);
        assert_eq!(t.shape(), &[20, 64, 128]);
        assert_eq!(t.data()[2 * CANVAS_PIXELS + CANVAS_COLS + 1], 1.0);
        assert!(matches!(
            frames_to_tensor(&w.frames()[..5]),
            Err(ClassifierError::Shape(5))
        ));
    }

    #[test]
    fn frame_order_matters() {
        let mut w = GestureWindow::silent(0, None);
        w.frames_mut()[0].set(3, 3, 200);
        let mut rev = w.clone();
        let frames: Vec<_> = w.frames().iter().rev().cloned().collect();
        for (dst, src) in rev.frames_mut().iter_mut().zip(frames) {
            dst.pixels_mut().copy_from_slice(src.pixels());
        }
        assert_ne!(window_to_tensor(&w), window_to_tensor(&rev));
    }

    #[test]
    fn shift_moves_frames() {
        let mut w = GestureWindow::silent(0, None);
        w.frames_mut()[0].set(0, 0, 255);
        let b = batch_tensor(&[&w], Some(&[2]));
        assert_eq!(b.data()[2 * CANVAS_PIXELS], 1.0);
        assert_eq!(b.data()[0], 0.0);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let p = prediction_from_logits(&[1.0, 3.0, 3.0, 0.0]);
        assert_eq!(p.class, ClassId(1));
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let t = Taxonomy::load_default();
        let m = Classifier::build(tiny(), &t).unwrap();
        let back = Classifier::from_bytes(&m.to_bytes(&t), &t).unwrap();
        assert_eq!(back.params(), m.params());
        let other =
            Taxonomy::from_toml(&crate::taxonomy::DEFAULT_TAXONOMY.replace("\"nuzzle\"", "\"snuggle\"")).unwrap();
        assert!(matches!(
            Classifier::from_bytes(&m.to_bytes(&t), &other),
            Err(ClassifierError::Checkpoint(_))
        ));
    }
}
