//! Row normalization shared by layer norm and channel norm.
//!
//! Both normalize contiguous rows of length `d`; they differ only in which
//! affine coefficient applies to element `(row, col)`.

use crate::Real;

pub(crate) fn forward<T: Real>(
    x: &[T],
    d: usize,
    gidx: impl Fn(usize, usize) -> usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, Vec<(T, T)>) {
    let n = T::from_usize(d).expect("row length fits");
    let mut out = vec![T::zero(); x.len()];
    let mut stats = Vec::with_capacity(x.len() / d.max(1));
    for (r, (row, orow)) in x.chunks(d).zip(out.chunks_mut(d)).enumerate() {
        let mean = row.iter().fold(T::zero(), |s, &v| s + v) / n;
        let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / n;
        let rstd = (var + eps).sqrt().recip();
        for (c, (o, &v)) in orow.iter_mut().zip(row).enumerate() {
            let i = gidx(r, c);
            *o = (v - mean) * rstd * gamma[i] + beta[i];
        }
        stats.push((mean, rstd));
    }
    (out, stats)
}

pub(crate) fn backward<T: Real>(
    x: &[T],
    dy: &[T],
    d: usize,
    gidx: impl Fn(usize, usize) -> usize,
    gamma: &[T],
    stats: &[(T, T)],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::from_usize(d).expect("row length fits");
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); gamma.len()];
    let mut dbeta = vec![T::zero(); gamma.len()];
    let mut dxhat = vec![T::zero(); d];
    for (r, ((row, grow), dxrow)) in x.chunks(d).zip(dy.chunks(d)).zip(dx.chunks_mut(d)).enumerate() {
        let (mean, rstd) = stats[r];
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for (c, (&v, &g)) in row.iter().zip(grow).enumerate() {
            let i = gidx(r, c);
            let xhat = (v - mean) * rstd;
            dgamma[i] += g * xhat;
            dbeta[i] += g;
            dxhat[c] = g * gamma[i];
            sum_dxhat += dxhat[c];
            sum_dxhat_xhat += dxhat[c] * xhat;
        }
        let mean_dxhat = sum_dxhat / n;
        let mean_dxhat_xhat = sum_dxhat_xhat / n;
        for (c, (o, &v)) in dxrow.iter_mut().zip(row).enumerate() {
            let xhat = (v - mean) * rstd;
            *o = rstd * (dxhat[c] - mean_dxhat - xhat * mean_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}
