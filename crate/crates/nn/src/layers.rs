//! Parameterized building blocks.
//!
//! A layer owns only [`ParamId`]s; values live in the model's
//! [`ParamStore`], and every forward call records onto a caller-supplied
//! [`Graph`].

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graph::{AttentionMask, Graph, Var};
use crate::init::{kaiming_uniform, normal};
use crate::params::{ParamId, ParamStore};
use crate::{Real, Tensor};

const NORM_EPS: f64 = 1e-5;

/// Affine map over the last axis; weight is stored `in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[in_features, out_features], in_features, rng),
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(vec![out_features]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.last() != Some(&self.in_features) {
            return Err(shape_err("linear", &shape, &[self.in_features, self.out_features]));
        }
        let rows = shape[..shape.len() - 1].iter().product();
        let flat = g.reshape(x, vec![rows, self.in_features])?;
        let w = g.param(store, self.weight);
        let mut y = g.matmul(flat, w)?;
        if let Some(b) = self.bias {
            let b = g.param(store, b);
            y = g.add_bias(y, b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("non-empty") = self.out_features;
        g.reshape(y, out_shape)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
        )?;
        Ok(Self { weight, stride, pad })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        g.conv2d(x, w, self.stride, self.pad)
    }
}

/// Per-sample, per-channel normalization over spatial axes.
#[derive(Debug, Clone)]
pub struct ChannelNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl ChannelNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(vec![channels], T::one()))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]))?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.channel_norm(x, gamma, beta, T::of(NORM_EPS))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(vec![dim], T::one()))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![dim]))?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, T::of(NORM_EPS))
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = (dim as f64).powf(-0.5);
        let table = store.add(format!("{name}.table"), normal(&[vocab, dim], std, rng))?;
        Ok(Self { table, dim })
    }

    /// Looks up `ids` and shapes the result as `prefix x dim`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        ids: &[usize],
        prefix: &[usize],
    ) -> Result<Var> {
        let t = g.param(store, self.table);
        let e = g.embedding(t, ids)?;
        let mut shape = prefix.to_vec();
        shape.push(self.dim);
        g.reshape(e, shape)
    }
}

/// Two 3x3 convolutions with a residual connection:
/// `relu(F(x) + shortcut(x))`, `F = norm(conv(relu(norm(conv(x)))))`.
///
/// The shortcut is the identity when shapes match and a strided 1x1
/// projection followed by normalization otherwise.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub norm1: ChannelNorm,
    pub conv2: Conv2d,
    pub norm2: ChannelNorm,
    pub projection: Option<(Conv2d, ChannelNorm)>,
}

impl ResidualBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let conv1 = Conv2d::new(
            store,
            &format!("{name}.conv1"),
            in_channels,
            out_channels,
            3,
            stride,
            1,
            rng,
        )?;
        let norm1 = ChannelNorm::new(store, &format!("{name}.norm1"), out_channels)?;
        let conv2 = Conv2d::new(
            store,
            &format!("{name}.conv2"),
            out_channels,
            out_channels,
            3,
            1,
            1,
            rng,
        )?;
        let norm2 = ChannelNorm::new(store, &format!("{name}.norm2"), out_channels)?;
        let projection = if stride != 1 || in_channels != out_channels {
            Some((
                Conv2d::new(
                    store,
                    &format!("{name}.proj"),
                    in_channels,
                    out_channels,
                    1,
                    stride,
                    0,
                    rng,
                )?,
                ChannelNorm::new(store, &format!("{name}.proj_norm"), out_channels)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1,
            norm1,
            conv2,
            norm2,
            projection,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, store, x)?;
        let h = self.norm1.forward(g, store, h)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, store, h)?;
        let h = self.norm2.forward(g, store, h)?;
        let shortcut = match &self.projection {
            Some((conv, norm)) => {
                let s = conv.forward(g, store, x)?;
                norm.forward(g, store, s)?
            }
            None => x,
        };
        if g.shape(h) != g.shape(shortcut) {
            return Err(shape_err("residual_block", g.shape(h), g.shape(shortcut)));
        }
        let sum = g.add(h, shortcut)?;
        Ok(g.relu(sum))
    }
}

/// Projected multi-head attention: `Wo * attention(Wq q, Wk k, Wv v)`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

/// Result of [`MultiHeadAttention::forward`].
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    pub output: Var,
    /// The attention core node; its weights are available through
    /// [`Graph::attention_weights`].
    pub core: Var,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(crate::NnError::Config(format!(
                "model dimension {dim} is not divisible by head count {heads}"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, true, rng)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim, true, rng)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim, true, rng)?,
            output: Linear::new(store, &format!("{name}.output"), dim, dim, true, rng)?,
            heads,
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        queries: Var,
        keys: Var,
        values: Var,
        mask: &AttentionMask,
    ) -> Result<AttentionOutput> {
        let q = self.query.forward(g, store, queries)?;
        let k = self.key.forward(g, store, keys)?;
        let v = self.value.forward(g, store, values)?;
        let core = g.attention(q, k, v, self.heads, mask)?;
        let output = self.output.forward(g, store, core)?;
        Ok(AttentionOutput { output, core })
    }
}
