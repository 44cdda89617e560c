use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tactile_nn::optim::{adam_step, clip_grad_norm, AdamConfig, AdamState};
use tactile_nn::Graph;

use super::{batch_tensor, Classifier, ClassifierError};
use crate::sim::{mix, WindowSource};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy on the training batches as they were seen during the epoch.
    pub running_accuracy: f64,
    pub learning_rate: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub step_losses: Vec<f64>,
}

impl TrainReport {
    pub fn epoch_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

pub(crate) fn cosine_lr(base: f64, final_fraction: f64, step: usize, total: usize) -> f64 {
    let floor = base * final_fraction;
    let t = step as f64 / total.max(1) as f64;
    floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Mini-batch Adam with a cosine learning-rate schedule. Every window
/// must be labeled. `on_epoch` sees the statistics after each epoch.
pub fn train_classifier<S: WindowSource + ?Sized>(
    model: &mut Classifier,
    data: &S,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::Usage("training set is empty".into()));
    }
    let labels: Vec<usize> = (0..data.len())
        .map(|i| {
            data.label(i)
                .map(|c| c.0)
                .ok_or_else(|| ClassifierError::Usage(format!("training window {i} is unlabeled")))
        })
        .collect::<Result<_, _>>()?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.config.class_count) {
        return Err(ClassifierError::Usage(format!("label {bad} outside the class range")));
    }
    let cfg = model.config.clone();
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ 0x7EA1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let windows: Vec<_> = batch.iter().map(|&i| data.window(i)).collect();
            let refs: Vec<_> = windows.iter().map(|w| w.as_ref()).collect();
            let shifts: Option<Vec<isize>> = (cfg.augment_shift > 0).then(|| {
                let m = cfg.augment_shift as isize;
                batch.iter().map(|_| rng.gen_range(-m..=m)).collect()
            });
            let input = batch_tensor(&refs, shifts.as_deref());
            let targets: Vec<Option<usize>> = batch.iter().map(|&i| Some(labels[i])).collect();

            let mut g = Graph::new();
            let x = g.input(input);
            let logits = model.forward(&mut g, x)?;
            let loss = g.cross_entropy(logits, &targets)?;
            let loss_value = g.value(loss).item() as f64;
            correct += g
                .value(logits)
                .argmax_rows()
                .iter()
                .zip(&targets)
                .filter(|(p, t)| Some(**p) == **t)
                .count();

            let store = model.params_mut();
            store.zero_grad();
            g.backward(loss, store)?;
            if cfg.grad_clip > 0.0 {
                clip_grad_norm(store, cfg.grad_clip);
            }
            adam.config.learning_rate = cosine_lr(cfg.learning_rate, cfg.final_lr_fraction, step, total);
            adam_step(store, &mut adam)?;
            step += 1;
            loss_sum += loss_value * batch.len() as f64;
            report.step_losses.push(loss_value);
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: loss_sum / data.len() as f64,
            running_accuracy: correct as f64 / data.len() as f64,
            learning_rate: adam.config.learning_rate,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {}/{}: loss {:.4}, running accuracy {:.3}, lr {:.2e}, {:.1}s",
            stats.epoch,
            cfg.epochs,
            stats.mean_loss,
            stats.running_accuracy,
            stats.learning_rate,
            stats.seconds
        );
        on_epoch(&stats);
        report.epochs.push(stats);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert!((cosine_lr(1.0, 0.1, 0, 10) - 1.0).abs() < 1e-12);
        assert!((cosine_lr(1.0, 0.1, 10, 10) - 0.1).abs() < 1e-12);
        assert!((cosine_lr(1.0, 0.0, 5, 10) - 0.5).abs() < 1e-12);
    }
}
