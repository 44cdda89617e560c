use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;

use super::{Classifier, ClassifierError};
use crate::sim::WindowSource;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u32>>,
    /// `None` where the class was never predicted.
    pub precision: Vec<Option<f64>>,
    /// `None` where the class never occurs.
    pub recall: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut confusion = vec![vec![0u32; classes]; classes];
        let mut samples = 0;
        for (t, p) in pairs {
            confusion[t][p] += 1;
            samples += 1;
        }
        let correct: u32 = (0..classes).map(|c| confusion[c][c]).sum();
        let ratio = |num: u32, den: u32| (den > 0).then(|| num as f64 / den as f64);
        let precision = (0..classes)
            .map(|c| ratio(confusion[c][c], confusion.iter().map(|r| r[c]).sum()))
            .collect();
        let recall = (0..classes)
            .map(|c| ratio(confusion[c][c], confusion[c].iter().sum()))
            .collect();
        Self {
            samples,
            accuracy: if samples == 0 {
                0.0
            } else {
                correct as f64 / samples as f64
            },
            confusion,
            precision,
            recall,
        }
    }
}

/// Classifies every labeled window. Unlabeled windows are a usage error.
pub fn evaluate<S: WindowSource + ?Sized>(
    model: &Classifier,
    data: &S,
    batch_size: usize,
) -> Result<EvalReport, ClassifierError> {
    let classes = model.config().class_count;
    let mut pairs = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for batch in idx.chunks(batch_size.max(1)) {
        let windows: Vec<_> = batch.iter().map(|&i| data.window(i)).collect();
        let refs: Vec<_> = windows.iter().map(|w| w.as_ref()).collect();
        for (&i, p) in batch.iter().zip(model.predict_batch(&refs)?) {
            let truth = data
                .label(i)
                .ok_or_else(|| ClassifierError::Usage(format!("evaluation window {i} is unlabeled")))?;
            if truth.0 >= classes {
                return Err(ClassifierError::Usage(format!(
                    "label {} outside the class range",
                    truth.0
                )));
            }
            pairs.push((truth.0, p.class.0));
        }
    }
    Ok(EvalReport::from_pairs(classes, pairs))
}

/// Row-normalized confusion heatmap, `cell` pixels per entry.
pub fn render_confusion_png(report: &EvalReport, path: impl AsRef<Path>, cell: u32) -> Result<(), ClassifierError> {
    let n = report.confusion.len() as u32;
    let cell = cell.max(1);
    let mut img = RgbImage::from_pixel(n * cell, n * cell, Rgb([255, 255, 255]));
    for (t, row) in report.confusion.iter().enumerate() {
        let total: u32 = row.iter().sum();
        if total == 0 {
            continue;
        }
        for (p, &count) in row.iter().enumerate() {
            let v = count as f64 / total as f64;
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let color = if t == p {
                Rgb([shade, shade, 255])
            } else {
                Rgb([255, shade, shade])
            };
            for y in 0..cell {
                for x in 0..cell {
                    img.put_pixel(p as u32 * cell + x, t as u32 * cell + y, color);
                }
            }
        }
    }
    img.save(path)
        .map_err(|e| ClassifierError::Io(std::io::Error::other(e)))
}
