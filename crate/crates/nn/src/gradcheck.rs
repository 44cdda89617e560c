//! Central finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Graph, ParamStore, Tensor, Var};

/// Finite-difference step.
pub const STEP: f64 = 1e-4;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-3;

/// Tensor with entries uniform in [-1, 1).
pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Reduces any output to a scalar through a fixed random projection so
/// every output element contributes to the checked gradient.
pub fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let shape = g.shape(out).to_vec();
    let weights = random_tensor(&shape, &mut ChaCha8Rng::seed_from_u64(seed));
    let w = g.input(weights);
    let prod = g.mul(out, w).expect("same shape");
    g.sum(prod)
}

/// Max |analytic - numeric| over the larger of the two gradient magnitudes.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(1e-8, f64::max);
    diff / scale
}

/// Compares backprop against central differences for every parameter in
/// `store` and returns the worst relative error (NaN if any gradient is
/// non-finite).
pub fn check_store(store: &mut ParamStore<f64>, loss_fn: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Var) -> f64 {
    store.zero_grad();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store);
    g.backward(loss, store).expect("scalar loss");
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = store
            .get(id)
            .grad
            .as_ref()
            .map_or_else(|| vec![0.0; store.get(id).tensor.len()], |t| t.data().to_vec());
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = store.get(id).tensor.data()[i];
            let mut eval = |v: f64| {
                store.get_mut(id).tensor.data_mut()[i] = v;
                let mut g = Graph::new();
                let l = loss_fn(&mut g, store);
                g.value(l).item()
            };
            let (up, down) = (eval(orig + STEP), eval(orig - STEP));
            store.get_mut(id).tensor.data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * STEP);
        }
        let err = relative_error(&analytic, &numeric);
        if !err.is_finite() {
            return f64::NAN;
        }
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_scale() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn square_passes() {
        let mut store = ParamStore::new();
        let w = store
            .add("w", Tensor::from_f64(vec![2], &[0.3, -0.4]).unwrap())
            .unwrap();
        let ok = check_store(&mut store, |g, s| {
            let x = g.param(s, w);
            let y = g.mul(x, x).unwrap();
            g.sum(y)
        });
        assert!(ok < TOLERANCE);
    }
}
