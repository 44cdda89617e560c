//! Define-by-run tape.
//!
//! Every op appends a node holding its forward value; [`Graph::gradients`]
//! walks the tape in reverse. Parameters enter the tape as copies of the
//! values in a [`ParamStore`], so one store can back many concurrent graphs.

use crate::error::{shape_err, NnError, Result};
use crate::ops::{attention, conv, norm};
use crate::params::{ParamId, ParamStore};
use crate::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Param(usize),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Reshape(Var),
    Relu(Var),
    Softmax(Var),
    Sum(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Vec<(T, T)>,
    },
    ChannelNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Vec<(T, T)>,
    },
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Masking applied inside [`Graph::attention`].
#[derive(Debug, Clone, Default)]
pub struct AttentionMask {
    /// Query position `i` may only attend to key positions `j <= i`.
    pub causal: bool,
    /// Row-major `N x Lk` flags; `true` hides that key position.
    pub key_padding: Option<Vec<bool>>,
}

impl AttentionMask {
    pub fn causal() -> Self {
        Self {
            causal: true,
            key_padding: None,
        }
    }
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads[var.0].as_ref()
    }

    /// Adds parameter gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(node, pid) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.accumulate(pid, g);
            }
        }
        let trainable: Vec<usize> = store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id.index())
            .collect();
        for pid in trainable {
            store.ensure_grad(pid);
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is tracked (used by input-sensitivity checks).
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.tensor.clone(), Op::Param(id.index()), p.trainable)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Adds a length-`C` bias along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let c = *vx.shape().last().unwrap_or(&0);
        if vb.shape() != [c] {
            return Err(shape_err("add_bias", vx.shape(), vb.shape()));
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            for (v, &b) in row.iter_mut().zip(vb.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.needs(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        mm(m, k, n, va.data(), false, vb.data(), false, &mut out, false);
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.needs(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let c = *vx.shape().last().unwrap_or(&1);
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        let out = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(out, Op::Softmax(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().fold(T::zero(), |acc, &v| acc + v);
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let vx = self.value(x);
        let d = *vx.shape().last().unwrap_or(&0);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layer_norm", vx.shape(), self.shape(gamma)));
        }
        let (out, stats) = norm::forward(
            vx.data(),
            d,
            |_, col| col,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, stats }, rg))
    }

    /// Per-sample, per-channel normalization over the spatial axes of an
    /// `N x C x H x W` tensor, with a per-channel affine transform.
    pub fn channel_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let vx = self.value(x);
        let s = vx.shape();
        if s.len() != 4 || self.shape(gamma) != [s[1]] || self.shape(beta) != [s[1]] {
            return Err(shape_err("channel_norm", s, self.shape(gamma)));
        }
        let (c, hw) = (s[1], s[2] * s[3]);
        let (out, stats) = norm::forward(
            vx.data(),
            hw,
            |row, _| row % c,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let out = Tensor::new(s.to_vec(), out)?;
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(out, Op::ChannelNorm { x, gamma, beta, stats }, rg))
    }

    /// 2-D cross-correlation without bias. `x: N x Ci x H x W`, `w: Co x Ci x Kh x Kw`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = conv::Geometry::new(self.shape(x), self.shape(w), stride, pad)?;
        let out = conv::forward(&geom, self.value(x).data(), self.value(w).data());
        let out = Tensor::new(geom.output_shape(), out)?;
        let rg = self.needs(&[x, w]);
        Ok(self.push(out, Op::Conv2d { x, w, stride, pad }, rg))
    }

    /// Max pooling with implicit `-inf` padding.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4
            || kernel == 0
            || stride == 0
            || pad >= kernel
            || s[2] + 2 * pad < kernel
            || s[3] + 2 * pad < kernel
        {
            return Err(shape_err("max_pool2d", &s, &[kernel, stride, pad]));
        }
        let (out, argmax, shape) = conv::max_pool(self.value(x).data(), &s, kernel, stride, pad);
        let out = Tensor::new(shape, out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::MaxPool2d { x, argmax }, rg))
    }

    /// Gathers rows of `table: V x D`; output is `len(ids) x D`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let s = vt.shape();
        if s.len() != 2 {
            return Err(shape_err("embedding", s, &[ids.len()]));
        }
        let (v, d) = (s[0], s[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(NnError::Usage(format!(
                    "embedding id {id} out of range for table of {v} rows"
                )));
            }
            out.extend_from_slice(&vt.data()[id * d..(id + 1) * d]);
        }
        let out = Tensor::new(vec![ids.len(), d], out)?;
        let rg = self.needs(&[table]);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Mean cross-entropy of `logits: N x C` against class targets.
    ///
    /// Rows whose target is `None` are ignored (padding).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let vl = self.value(logits);
        let s = vl.shape();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(shape_err("cross_entropy", s, &[targets.len()]));
        }
        let c = s[1];
        let mut probs = vl.data().to_vec();
        let mut loss = 0.0f64;
        let mut count = 0usize;
        for (row, target) in probs.chunks_mut(c).zip(targets) {
            let Some(t) = *target else { continue };
            if t >= c {
                return Err(NnError::Usage(format!("target class {t} out of range for {c} logits")));
            }
            // log-softmax via the max-shifted log-sum-exp
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp()).ln() + max;
            loss += (lse - row[t]).to_f64_lossy();
            count += 1;
            softmax_in_place(row);
        }
        if count == 0 {
            return Err(NnError::Usage("cross_entropy with no counted targets".into()));
        }
        let out = Tensor::scalar(T::of(loss / count as f64));
        let rg = self.needs(&[logits]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention core.
    ///
    /// `q: N x Lq x D`, `k, v: N x Lk x D`; the model dimension is split into
    /// `heads` contiguous slices. Fully masked rows produce zero output.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &AttentionMask) -> Result<Var> {
        let dims = attention::Dims::new(self.shape(q), self.shape(k), self.shape(v), heads)?;
        if let Some(m) = &mask.key_padding {
            if m.len() != dims.n * dims.lk {
                return Err(shape_err("attention mask", &[m.len()], &[dims.n, dims.lk]));
            }
        }
        let (out, probs) = attention::forward(
            &dims,
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            mask,
        );
        let out = Tensor::new(vec![dims.n, dims.lq, dims.d], out)?;
        let rg = self.needs(&[q, k, v]);
        Ok(self.push(out, Op::Attention { q, k, v, heads, probs }, rg))
    }

    /// Attention weights `N x heads x Lq x Lk` recorded by an attention node.
    pub fn attention_weights(&self, var: Var) -> Option<&[T]> {
        match &self.nodes[var.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse pass from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NnError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));
        let mut params = Vec::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else { continue };
            if let Op::Param(pid) = node.op {
                params.push((i, pid));
                continue;
            }
            self.backprop_node(node, g, lower)?;
        }
        Ok(Gradients { grads, params })
    }

    /// Computes gradients of `loss` and accumulates them into `store`.
    ///
    /// Calling this twice without [`ParamStore::zero_grad`] doubles the
    /// stored gradients.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.gradients(loss)?.accumulate_into(store);
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        acc(grads, *v, g.clone());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = gd.iter().zip(vb.data()).map(|(&g, &y)| g * y).collect();
                    acc(grads, *a, Tensor::new(va.shape().to_vec(), d)?);
                }
                if self.wants(*b) {
                    let d = gd.iter().zip(va.data()).map(|(&g, &x)| g * x).collect();
                    acc(grads, *b, Tensor::new(vb.shape().to_vec(), d)?);
                }
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                acc(grads, *a, g.map(|v| v * f));
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    acc(grads, *x, g.clone());
                }
                if self.wants(*b) {
                    let c = self.shape(*b)[0];
                    let mut db = vec![T::zero(); c];
                    for row in gd.chunks(c.max(1)) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(grads, *b, Tensor::new(vec![c], db)?);
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    mm(m, n, k, gd, false, vb.data(), true, &mut da, false);
                    acc(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    mm(k, m, n, va.data(), true, gd, false, &mut db, false);
                    acc(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                acc(grads, *x, g.clone().reshape(shape)?);
            }
            Op::Relu(x) => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                acc(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let c = *g.shape().last().unwrap_or(&1);
                let mut d = vec![T::zero(); y.len()];
                for ((drow, yrow), grow) in d.chunks_mut(c).zip(y.chunks(c)).zip(gd.chunks(c)) {
                    let dot = yrow.iter().zip(grow).fold(T::zero(), |s, (&y, &g)| s + y * g);
                    for ((dv, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dv = yv * (gv - dot);
                    }
                }
                acc(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Sum(x) => {
                let shape = self.shape(*x).to_vec();
                acc(grads, *x, Tensor::full(shape, gd[0]));
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let d = self.shape(*gamma)[0];
                let back = norm::backward(
                    self.value(*x).data(),
                    gd,
                    d,
                    |_, col| col,
                    self.value(*gamma).data(),
                    stats,
                );
                self.norm_grads(grads, *x, *gamma, *beta, back)?;
            }
            Op::ChannelNorm { x, gamma, beta, stats } => {
                let s = self.shape(*x);
                let (c, hw) = (s[1], s[2] * s[3]);
                let back = norm::backward(
                    self.value(*x).data(),
                    gd,
                    hw,
                    |row, _| row % c,
                    self.value(*gamma).data(),
                    stats,
                );
                self.norm_grads(grads, *x, *gamma, *beta, back)?;
            }
            Op::Conv2d { x, w, stride, pad } => {
                let geom = conv::Geometry::new(self.shape(*x), self.shape(*w), *stride, *pad)?;
                let (dx, dw) = conv::backward(
                    &geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    self.wants(*x),
                    self.wants(*w),
                );
                if let Some(dx) = dx {
                    acc(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?);
                }
                if let Some(dw) = dw {
                    acc(grads, *w, Tensor::new(self.shape(*w).to_vec(), dw)?);
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let s = self.shape(*x);
                let plane_in = s[2] * s[3];
                let plane_out = node.value.shape()[2] * node.value.shape()[3];
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (o, (&gv, &src)) in gd.iter().zip(argmax).enumerate() {
                    let plane = o / plane_out;
                    dx[plane * plane_in + src] += gv;
                }
                acc(grads, *x, Tensor::new(s.to_vec(), dx)?);
            }
            Op::Embedding { table, ids } => {
                let s = self.shape(*table);
                let d = s[1];
                let mut dt = vec![T::zero(); s[0] * d];
                for (row, &id) in gd.chunks(d).zip(ids) {
                    for (t, &v) in dt[id * d..(id + 1) * d].iter_mut().zip(row) {
                        *t += v;
                    }
                }
                acc(grads, *table, Tensor::new(s.to_vec(), dt)?);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let c = self.shape(*logits)[1];
                let scale = gd[0] / T::from_usize(*count).expect("count fits");
                let mut d = vec![T::zero(); probs.len()];
                for ((drow, prow), target) in d.chunks_mut(c).zip(probs.chunks(c)).zip(targets) {
                    let Some(t) = *target else { continue };
                    for (dv, &p) in drow.iter_mut().zip(prow) {
                        *dv = p * scale;
                    }
                    drow[t] -= scale;
                }
                acc(grads, *logits, Tensor::new(self.shape(*logits).to_vec(), d)?);
            }
            Op::Attention { q, k, v, heads, probs } => {
                let dims = attention::Dims::new(self.shape(*q), self.shape(*k), self.shape(*v), *heads)?;
                let (dq, dk, dv) = attention::backward(
                    &dims,
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    gd,
                );
                for (var, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if self.wants(var) {
                        acc(grads, var, Tensor::new(self.shape(var).to_vec(), d)?);
                    }
                }
            }
        }
        Ok(())
    }

    fn norm_grads(
        &self,
        grads: &mut [Option<Tensor<T>>],
        x: Var,
        gamma: Var,
        beta: Var,
        (dx, dgamma, dbeta): (Vec<T>, Vec<T>, Vec<T>),
    ) -> Result<()> {
        if self.wants(x) {
            acc(grads, x, Tensor::new(self.shape(x).to_vec(), dx)?);
        }
        if self.wants(gamma) {
            acc(grads, gamma, Tensor::new(self.shape(gamma).to_vec(), dgamma)?);
        }
        if self.wants(beta) {
            acc(grads, beta, Tensor::new(self.shape(beta).to_vec(), dbeta)?);
        }
        Ok(())
    }
}

fn acc<T: Real>(grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Row-major product `out (+)= op(a) * op(b)` where `op(a)` is `m x k` and
/// `op(b)` is `k x n`. A transposed operand is stored as its transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    out: &mut [T],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, out, n as isize, 1);
}
