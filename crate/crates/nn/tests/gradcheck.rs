//! Central finite-difference checks (f64, h = 1e-4, relative error < 1e-3)
//! for every differentiable op and layer.

mod common;

use common::{check_store, project, random_tensor, rng, TOLERANCE};
use tactile_nn::layers::{ChannelNorm, Conv2d, Embedding, LayerNorm, Linear, MultiHeadAttention, ResidualBlock};
use tactile_nn::{AttentionMask, ParamStore};

fn assert_ok(name: &str, err: f64) {
    assert!(err < TOLERANCE, "{name}: relative error {err:e}");
}

#[test]
fn elementwise_ops() {
    let mut r = rng(1);
    let mut store = ParamStore::new();
    let a = store.add("a", random_tensor(&[3, 4], &mut r)).unwrap();
    let b = store.add("b", random_tensor(&[3, 4], &mut r)).unwrap();
    let bias = store.add("bias", random_tensor(&[4], &mut r)).unwrap();
    let err = check_store(&mut store, |g, s| {
        let (a, b, bias) = (g.param(s, a), g.param(s, b), g.param(s, bias));
        let m = g.mul(a, b).unwrap();
        let sum = g.add(m, a).unwrap();
        let scaled = g.scale(sum, 0.7);
        let biased = g.add_bias(scaled, bias).unwrap();
        let r = g.relu(biased);
        project(g, r, 11)
    });
    assert_ok("elementwise", err);
}

#[test]
fn matmul_and_linear() {
    let mut r = rng(2);
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&[2, 3, 5], &mut r)).unwrap();
    let lin = Linear::new(&mut store, "lin", 5, 4, true, &mut r).unwrap();
    let err = check_store(&mut store, |g, s| {
        let x = g.param(s, x);
        let y = lin.forward(g, s, x).unwrap();
        project(g, y, 12)
    });
    assert_ok("linear", err);
}

#[test]
fn softmax_gradient() {
    let mut r = rng(3);
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&[4, 6], &mut r)).unwrap();
    let err = check_store(&mut store, |g, s| {
        let x = g.param(s, x);
        let y = g.softmax(x);
        project(g, y, 13)
    });
    assert_ok("softmax", err);
}

#[test]
fn layer_norm_gradient() {
    let mut r = rng(4);
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&[2, 3, 8], &mut r)).unwrap();
    let ln = LayerNorm::new(&mut store, "ln", 8).unwrap();
    // move gamma/beta away from their identity initialization
    for p in store.iter_mut().skip(1) {
        for v in p.tensor.data_mut() {
            *v += 0.3;
        }
    }
    let err = check_store(&mut store, |g, s| {
        let x = g.param(s, x);
        let y = ln.forward(g, s, x).unwrap();
        project(g, y, 14)
    });
    assert_ok("layer_norm", err);
}

#[test]
fn channel_norm_gradient() {
    let mut r = rng(5);
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&[2, 3, 4, 5], &mut r)).unwrap();
    let cn = ChannelNorm::new(&mut store, "cn", 3).unwrap();
    for p in store.iter_mut().skip(1) {
        for v in p.tensor.data_mut() {
            *v -= 0.4;
        }
    }
    let err = check_store(&mut store, |g, s| {
        let x = g.param(s, x);
        let y = cn.forward(g, s, x).unwrap();
        project(g, y, 15)
    });
    assert_ok("channel_norm", err);
}

#[test]
fn conv2d_gradient() {
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
        let mut r = rng(6 + stride as u64);
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(&[2, 3, 7, 6], &mut r)).unwrap();
        let conv = Conv2d::new(&mut store, "conv", 3, 4, 3, stride, pad, &mut r).unwrap();
        let err = check_store(&mut store, |g, s| {
            let x = g.param(s, x);
            let y = conv.forward(g, s, x).unwrap();
            project(g, y, 16)
        });
        assert_ok(&format!("conv2d stride {stride} pad {pad}"), err);
    }
}

#[test]
fn max_pool_gradient() {
    let mut r = rng(7);
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&[1, 2, 7, 8], &mut r)).unwrap();
    let err = check_store(&mut store, |g, s| {
        let x = g.param(s, x);
        let y = g.max_pool2d(x, 3, 2, 1).unwrap();
        project(g, y, 17)
    });
    assert_ok("max_pool2d", err);
}

#[test]
fn embedding_gradient() {
    let mut r = rng(8);
    let mut store = ParamStore::new();
    let emb = Embedding::new(&mut store, "emb", 6, 4, &mut r).unwrap();
    let err = check_store(&mut store, |g, s| {
        let y = emb.forward(g, s, &[1, 3, 3, 0, 5, 1], &[2, 3]).unwrap();
        project(g, y, 18)
    });
    assert_ok("embedding", err);
}

#[test]
fn cross_entropy_gradient_with_ignored_rows() {
    let mut r = rng(9);
    let mut store = ParamStore::new();
    let x = store.add("logits", random_tensor(&[5, 7], &mut r)).unwrap();
    let err = check_store(&mut store, |g, s| {
        let x = g.param(s, x);
        g.cross_entropy(x, &[Some(1), None, Some(6), Some(0), None]).unwrap()
    });
    assert_ok("cross_entropy", err);
}

#[test]
fn attention_core_gradient() {
    let mut r = rng(10);
    let mut store = ParamStore::new();
    let q = store.add("q", random_tensor(&[2, 3, 8], &mut r)).unwrap();
    let k = store.add("k", random_tensor(&[2, 4, 8], &mut r)).unwrap();
    let v = store.add("v", random_tensor(&[2, 4, 8], &mut r)).unwrap();
    let mask = AttentionMask {
        causal: true,
        key_padding: Some(vec![false, false, false, true, false, false, true, true]),
    };
    let err = check_store(&mut store, |g, s| {
        let (q, k, v) = (g.param(s, q), g.param(s, k), g.param(s, v));
        let y = g.attention(q, k, v, 2, &mask).unwrap();
        project(g, y, 19)
    });
    assert_ok("attention", err);
}

#[test]
fn multi_head_attention_gradient() {
    let mut r = rng(11);
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&[2, 3, 8], &mut r)).unwrap();
    let mem = store.add("mem", random_tensor(&[2, 5, 8], &mut r)).unwrap();
    let mha = MultiHeadAttention::new(&mut store, "mha", 8, 4, &mut r).unwrap();
    let err = check_store(&mut store, |g, s| {
        let (x, mem) = (g.param(s, x), g.param(s, mem));
        let out = mha.forward(g, s, x, mem, mem, &AttentionMask::default()).unwrap();
        project(g, out.output, 20)
    });
    assert_ok("multi_head_attention", err);
}

#[test]
fn residual_block_gradient_identity_and_projection() {
    for (cin, cout, stride) in [(3, 3, 1), (2, 4, 2)] {
        let mut r = rng(12 + stride as u64);
        let mut store = ParamStore::new();
        let x = store.add("input", random_tensor(&[2, cin, 6, 6], &mut r)).unwrap();
        let block = ResidualBlock::new(&mut store, "block", cin, cout, stride, &mut r).unwrap();
        let err = check_store(&mut store, |g, s| {
            let x = g.param(s, x);
            let y = block.forward(g, s, x).unwrap();
            project(g, y, 21)
        });
        assert_ok(&format!("residual block {cin}->{cout} stride {stride}"), err);
    }
}

#[test]
fn composite_conv_relu_linear_cross_entropy() {
    let mut r = rng(13);
    let mut store = ParamStore::new();
    let conv = Conv2d::new(&mut store, "conv", 2, 3, 3, 1, 1, &mut r).unwrap();
    let lin = Linear::new(&mut store, "fc", 3 * 4 * 4, 5, true, &mut r).unwrap();
    let input = random_tensor(&[3, 2, 4, 4], &mut r);
    let err = check_store(&mut store, |g, s| {
        let x = g.input(input.clone());
        let h = conv.forward(g, s, x).unwrap();
        let h = g.relu(h);
        let h = g.reshape(h, vec![3, 48]).unwrap();
        let logits = lin.forward(g, s, h).unwrap();
        g.cross_entropy(logits, &[Some(0), Some(4), Some(2)]).unwrap()
    });
    assert_ok("composite", err);
}
