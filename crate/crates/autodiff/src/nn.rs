//! Layer building blocks expressed over a [`Graph`] and a [`ParamStore`].
//!
//! Each block has an `init_*` function that creates its parameters under a
//! name prefix and a forward function that binds them by the same prefix.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{ConvGeom, Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

fn normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(rows, cols, |_, _| dist.sample(rng))
}

/// Weight `[din, dout]` with Xavier-uniform-like scale and zero bias.
pub fn init_linear(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut impl Rng) {
    let std = (2.0 / (din + dout) as f64).sqrt();
    store.insert(format!("{name}/w"), normal(rng, din, dout, std));
    store.insert(format!("{name}/b"), Tensor::zeros(1, dout));
}

/// Linear layer with weights scaled by `gain` (0 gives a zero-initialised layer).
pub fn init_linear_scaled(
    store: &mut ParamStore,
    name: &str,
    din: usize,
    dout: usize,
    gain: f64,
    rng: &mut impl Rng,
) {
    init_linear(store, name, din, dout, rng);
    if let Some(w) = store.get_mut(&format!("{name}/w")) {
        w.scale_in_place(gain);
    }
}

pub fn linear(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Var {
    let w = g.param(store, &format!("{name}/w"));
    let b = g.param(store, &format!("{name}/b"));
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

/// Linear layer without bias (weights stored under `{name}/w`).
pub fn linear_nobias(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Var {
    let w = g.param(store, &format!("{name}/w"));
    g.matmul(x, w)
}

/// Convolution kernel stored as `[k*k*cin, cout]`, He-normal scaled.
pub fn init_conv(
    store: &mut ParamStore,
    name: &str,
    k: usize,
    cin: usize,
    cout: usize,
    rng: &mut impl Rng,
) {
    let fan_in = k * k * cin;
    let std = (2.0 / fan_in as f64).sqrt();
    store.insert(format!("{name}/w"), normal(rng, fan_in, cout, std));
    store.insert(format!("{name}/b"), Tensor::zeros(1, cout));
}

/// Channels-last 2-D convolution; returns the output and its spatial size.
pub fn conv2d(
    g: &mut Graph,
    store: &ParamStore,
    name: &str,
    x: Var,
    geom: ConvGeom,
) -> (Var, (usize, usize)) {
    let cols = if geom.k == 1 && geom.stride == 1 && geom.pad == 0 {
        x
    } else {
        g.im2col(x, geom)
    };
    (linear(g, store, name, cols), geom.out_hw())
}

pub fn init_layer_norm(store: &mut ParamStore, name: &str, c: usize) {
    store.insert(format!("{name}/gamma"), Tensor::full(1, c, 1.0));
    store.insert(format!("{name}/beta"), Tensor::zeros(1, c));
}

pub fn layer_norm(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Var {
    let gamma = g.param(store, &format!("{name}/gamma"));
    let beta = g.param(store, &format!("{name}/beta"));
    g.layer_norm(x, gamma, beta)
}

/// Shape of a pre-norm transformer encoder stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformerCfg {
    pub dim: usize,
    pub heads: usize,
    pub ffn: usize,
    pub layers: usize,
}

impl TransformerCfg {
    pub fn new(dim: usize, heads: usize, layers: usize) -> Self {
        assert!(dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Self {
            dim,
            heads,
            ffn: 2 * dim,
            layers,
        }
    }
}

pub fn init_transformer(store: &mut ParamStore, name: &str, cfg: TransformerCfg, rng: &mut impl Rng) {
    for l in 0..cfg.layers {
        let p = format!("{name}/layer{l}");
        init_layer_norm(store, &format!("{p}/ln1"), cfg.dim);
        init_linear(store, &format!("{p}/attn/qkv"), cfg.dim, 3 * cfg.dim, rng);
        init_linear(store, &format!("{p}/attn/out"), cfg.dim, cfg.dim, rng);
        init_layer_norm(store, &format!("{p}/ln2"), cfg.dim);
        init_linear(store, &format!("{p}/ffn/fc1"), cfg.dim, cfg.ffn, rng);
        init_linear(store, &format!("{p}/ffn/fc2"), cfg.ffn, cfg.dim, rng);
    }
    init_layer_norm(store, &format!("{name}/ln_out"), cfg.dim);
}

/// Multi-head self-attention over the rows of `x` (`[tokens, dim]`).
pub fn self_attention(g: &mut Graph, store: &ParamStore, name: &str, x: Var, heads: usize) -> Var {
    let dim = g.shape(x).1;
    let hd = dim / heads;
    let qkv = linear(g, store, &format!("{name}/qkv"), x);
    let scale = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = g.cols(qkv, h * hd, hd);
        let k = g.cols(qkv, dim + h * hd, hd);
        let v = g.cols(qkv, 2 * dim + h * hd, hd);
        let s = g.matmul_t(q, k);
        let s = g.scale(s, scale);
        let a = g.softmax_rows(s);
        outs.push(g.matmul(a, v));
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    linear(g, store, &format!("{name}/out"), cat)
}

/// Pre-norm transformer encoder; output passes through a final layer norm.
pub fn transformer(g: &mut Graph, store: &ParamStore, name: &str, cfg: TransformerCfg, x: Var) -> Var {
    let mut h = x;
    for l in 0..cfg.layers {
        let p = format!("{name}/layer{l}");
        let n1 = layer_norm(g, store, &format!("{p}/ln1"), h);
        let a = self_attention(g, store, &format!("{p}/attn"), n1, cfg.heads);
        h = g.add(h, a);
        let n2 = layer_norm(g, store, &format!("{p}/ln2"), h);
        let f = linear(g, store, &format!("{p}/ffn/fc1"), n2);
        let f = g.gelu(f);
        let f = linear(g, store, &format!("{p}/ffn/fc2"), f);
        h = g.add(h, f);
    }
    layer_norm(g, store, &format!("{name}/ln_out"), h)
}

/// Two-layer perceptron `din -> hidden -> dout` with GELU.
pub fn init_mlp(
    store: &mut ParamStore,
    name: &str,
    din: usize,
    hidden: usize,
    dout: usize,
    rng: &mut impl Rng,
) {
    init_linear(store, &format!("{name}/fc1"), din, hidden, rng);
    init_linear(store, &format!("{name}/fc2"), hidden, dout, rng);
}

pub fn mlp(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Var {
    let h = linear(g, store, &format!("{name}/fc1"), x);
    let h = g.gelu(h);
    linear(g, store, &format!("{name}/fc2"), h)
}

/// Small-normal embedding table `[rows, dim]` stored under `name`.
pub fn init_embedding(store: &mut ParamStore, name: &str, rows: usize, dim: usize, rng: &mut impl Rng) {
    store.insert(name.to_string(), normal(rng, rows, dim, 0.02));
}
