//! im2col convolution and max pooling kernels.

use crate::error::{shape_err, Result};
use crate::graph::mm;
use crate::Real;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Geometry {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 || x[1] != w[1] || stride == 0 {
            return Err(shape_err("conv2d", x, w));
        }
        let (h, wd, kh, kw) = (x[2], x[3], w[2], w[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw || kh == 0 || kw == 0 {
            return Err(shape_err("conv2d", x, w));
        }
        Ok(Self {
            n: x[0],
            ci: x[1],
            h,
            w: wd,
            co: w[0],
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.n, self.co, self.ho, self.wo]
    }

    fn patch(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Input coordinate for output `o` and kernel offset `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

fn im2col<T: Real>(g: &Geometry, x: &[T], col: &mut [T]) {
    let p = g.positions();
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let line = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    match g.src(oi, ki, g.h) {
                        Some(si) => {
                            for (oj, d) in line.iter_mut().enumerate() {
                                *d = match g.src(oj, kj, g.w) {
                                    Some(sj) => plane[si * g.w + sj],
                                    None => T::zero(),
                                };
                            }
                        }
                        None => line.iter_mut().for_each(|d| *d = T::zero()),
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &Geometry, col: &[T], dx: &mut [T]) {
    let p = g.positions();
    for c in 0..g.ci {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let Some(si) = g.src(oi, ki, g.h) else { continue };
                    for oj in 0..g.wo {
                        if let Some(sj) = g.src(oj, kj, g.w) {
                            plane[si * g.w + sj] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(g: &Geometry, x: &[T], w: &[T]) -> Vec<T> {
    let (patch, p) = (g.patch(), g.positions());
    let in_len = g.ci * g.h * g.w;
    let out_len = g.co * p;
    let mut out = vec![T::zero(); g.n * out_len];
    let mut col = vec![T::zero(); patch * p];
    for s in 0..g.n {
        im2col(g, &x[s * in_len..(s + 1) * in_len], &mut col);
        mm(
            g.co,
            patch,
            p,
            w,
            false,
            &col,
            false,
            &mut out[s * out_len..(s + 1) * out_len],
            false,
        );
    }
    out
}

pub(crate) fn backward<T: Real>(
    g: &Geometry,
    x: &[T],
    w: &[T],
    dout: &[T],
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (patch, p) = (g.patch(), g.positions());
    let in_len = g.ci * g.h * g.w;
    let out_len = g.co * p;
    let mut dx = want_x.then(|| vec![T::zero(); x.len()]);
    let mut dw = want_w.then(|| vec![T::zero(); w.len()]);
    let mut col = vec![T::zero(); patch * p];
    for s in 0..g.n {
        let ds = &dout[s * out_len..(s + 1) * out_len];
        if let Some(dw) = dw.as_mut() {
            im2col(g, &x[s * in_len..(s + 1) * in_len], &mut col);
            // dW[co, patch] += dOut[co, p] * col^T[p, patch]
            mm(g.co, p, patch, ds, false, &col, true, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            // dcol[patch, p] = W^T[patch, co] * dOut[co, p]
            mm(patch, g.co, p, w, true, ds, false, &mut col, false);
            col2im(g, &col, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    (dx, dw)
}

/// Returns pooled values, the in-plane source index of each output and the
/// output shape.
pub(crate) fn max_pool<T: Real>(
    x: &[T],
    shape: &[usize],
    kernel: usize,
    stride: usize,
    pad: usize,
) -> (Vec<T>, Vec<usize>, Vec<usize>) {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let ho = (h + 2 * pad - kernel) / stride + 1;
    let wo = (w + 2 * pad - kernel) / stride + 1;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in x.chunks(h * w) {
        for oi in 0..ho {
            for oj in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ki in 0..kernel {
                    let si = (oi * stride + ki) as isize - pad as isize;
                    if si < 0 || si as usize >= h {
                        continue;
                    }
                    for kj in 0..kernel {
                        let sj = (oj * stride + kj) as isize - pad as isize;
                        if sj < 0 || sj as usize >= w {
                            continue;
                        }
                        let idx = si as usize * w + sj as usize;
                        if best_idx == usize::MAX || plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax, vec![n, c, ho, wo])
}
