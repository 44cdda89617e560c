use crate::error::{shape_err, NnError, Result};
use crate::graph::{softmax_in_place, AttentionMask};
use crate::Real;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub n: usize,
    pub lq: usize,
    pub lk: usize,
    pub d: usize,
    pub heads: usize,
    pub dh: usize,
}

impl Dims {
    pub fn new(q: &[usize], k: &[usize], v: &[usize], heads: usize) -> Result<Self> {
        if q.len() != 3 || k.len() != 3 || k != v || q[0] != k[0] || q[2] != k[2] {
            return Err(shape_err("attention", q, k));
        }
        let d = q[2];
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(NnError::Config(format!(
                "model dimension {d} is not divisible by head count {heads}"
            )));
        }
        Ok(Self {
            n: q[0],
            lq: q[1],
            lk: k[1],
            d,
            heads,
            dh: d / heads,
        })
    }

    fn scale<T: Real>(&self) -> T {
        T::of(1.0 / (self.dh as f64).sqrt())
    }

    #[inline]
    fn prob_index(&self, n: usize, h: usize, i: usize) -> usize {
        ((n * self.heads + h) * self.lq + i) * self.lk
    }
}

fn masked(mask: &AttentionMask, d: &Dims, n: usize, i: usize, j: usize) -> bool {
    (mask.causal && j > i) || mask.key_padding.as_ref().is_some_and(|m| m[n * d.lk + j])
}

pub(crate) fn forward<T: Real>(d: &Dims, q: &[T], k: &[T], v: &[T], mask: &AttentionMask) -> (Vec<T>, Vec<T>) {
    let scale: T = d.scale();
    let mut out = vec![T::zero(); d.n * d.lq * d.d];
    let mut probs = vec![T::zero(); d.n * d.heads * d.lq * d.lk];
    for n in 0..d.n {
        let (qb, kb) = (n * d.lq * d.d, n * d.lk * d.d);
        for h in 0..d.heads {
            let off = h * d.dh;
            for i in 0..d.lq {
                let pi = d.prob_index(n, h, i);
                let row = &mut probs[pi..pi + d.lk];
                let qi = &q[qb + i * d.d + off..qb + i * d.d + off + d.dh];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = if masked(mask, d, n, i, j) {
                        T::neg_infinity()
                    } else {
                        let kj = &k[kb + j * d.d + off..kb + j * d.d + off + d.dh];
                        qi.iter().zip(kj).fold(T::zero(), |acc, (&a, &b)| acc + a * b) * scale
                    };
                }
                softmax_in_place(row);
                let o = &mut out[qb + i * d.d + off..qb + i * d.d + off + d.dh];
                for (j, &p) in row.iter().enumerate() {
                    if p == T::zero() {
                        continue;
                    }
                    let vj = &v[kb + j * d.d + off..kb + j * d.d + off + d.dh];
                    for (ov, &vv) in o.iter_mut().zip(vj) {
                        *ov += p * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

pub(crate) fn backward<T: Real>(
    d: &Dims,
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let scale: T = d.scale();
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut ds = vec![T::zero(); d.lk];
    for n in 0..d.n {
        let (qb, kb) = (n * d.lq * d.d, n * d.lk * d.d);
        for h in 0..d.heads {
            let off = h * d.dh;
            for i in 0..d.lq {
                let pi = d.prob_index(n, h, i);
                let p = &probs[pi..pi + d.lk];
                let go = &dout[qb + i * d.d + off..qb + i * d.d + off + d.dh];
                // dP[j] = dO_i . V_j, and dV_j += P[j] dO_i
                let mut dot = T::zero();
                for j in 0..d.lk {
                    let vb = kb + j * d.d + off;
                    let dp = go
                        .iter()
                        .zip(&v[vb..vb + d.dh])
                        .fold(T::zero(), |s, (&a, &b)| s + a * b);
                    ds[j] = dp;
                    dot += dp * p[j];
                    if p[j] != T::zero() {
                        for (t, &g) in dv[vb..vb + d.dh].iter_mut().zip(go) {
                            *t += p[j] * g;
                        }
                    }
                }
                for j in 0..d.lk {
                    let s = p[j] * (ds[j] - dot) * scale;
                    if s == T::zero() {
                        continue;
                    }
                    let (qi, kj) = (qb + i * d.d + off, kb + j * d.d + off);
                    for t in 0..d.dh {
                        dq[qi + t] += s * k[kj + t];
                        dk[kj + t] += s * q[qi + t];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
