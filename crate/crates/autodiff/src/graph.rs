//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! bound from a [`ParamStore`] by name; calling [`Graph::backward`] on a
//! scalar returns gradients for the trainable parameters that were bound.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::params::ParamStore;
use crate::tensor::{gemm, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Row-sparse linear map: output row `i` is `sum_k w_k * input[idx_k]`.
///
/// Used for gathers, nearest/bilinear resampling and pooling. The backward
/// pass is the transposed scatter-add.
#[derive(Clone, Debug, Default)]
pub struct SparseRows {
    in_rows: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseRows {
    pub fn new(in_rows: usize) -> Self {
        Self {
            in_rows,
            offsets: vec![0],
            indices: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn push_row(&mut self, entries: &[(usize, f64)]) {
        for &(i, w) in entries {
            assert!(i < self.in_rows, "sparse row index {i} out of range");
            self.indices.push(i);
            self.weights.push(w);
        }
        self.offsets.push(self.indices.len());
    }

    pub fn out_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn in_rows(&self) -> usize {
        self.in_rows
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.offsets[r], self.offsets[r + 1]);
        self.indices[s..e]
            .iter()
            .copied()
            .zip(self.weights[s..e].iter().copied())
    }

    /// Plain row selection.
    pub fn select(in_rows: usize, rows: &[usize]) -> Self {
        let mut s = Self::new(in_rows);
        for &r in rows {
            s.push_row(&[(r, 1.0)]);
        }
        s
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.rows(), self.in_rows, "sparse map input rows mismatch");
        let c = x.cols();
        let mut out = Tensor::zeros(self.out_rows(), c);
        for r in 0..self.out_rows() {
            let dst = out.row_slice_mut(r);
            for (i, w) in self.row(r) {
                for (d, s) in dst.iter_mut().zip(x.row_slice(i)) {
                    *d += w * s;
                }
            }
        }
        out
    }

    fn apply_transposed(&self, dy: &Tensor) -> Tensor {
        let c = dy.cols();
        let mut dx = Tensor::zeros(self.in_rows, c);
        for r in 0..self.out_rows() {
            let src = dy.row_slice(r);
            for (i, w) in self.row(r) {
                for (d, s) in dx.row_slice_mut(i).iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        dx
    }
}

/// Geometry of a 2-D convolution over a channels-last `[h*w, cin]` map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Source row for output cell `(oy, ox)` and kernel tap `(ky, kx)`, if inside.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some(y as usize * self.w + x as usize)
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Relu,
    Gelu,
    Sigmoid,
    Softplus,
    Tanh,
    Exp,
    Ln,
    Square,
    Abs,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, rstd: Vec<f64> },
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Cols(Var, usize),
    ConcatCols(Vec<Var>),
    Rows(Var, usize),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Gather(Var, Rc<SparseRows>),
    Im2col(Var, ConvGeom),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

type Filter = Box<dyn Fn(&str) -> bool>;

pub struct Graph {
    nodes: Vec<Node>,
    bound: BTreeMap<String, Var>,
    trainable: Filter,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads {
    per_node: Vec<Option<Tensor>>,
    params: BTreeMap<String, Var>,
}

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.per_node[v.0].as_ref()
    }

    /// Gradient for each bound trainable parameter, by name.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter_map(|(n, v)| self.per_node[v.0].clone().map(|g| (n.clone(), g)))
            .collect()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|v| self.per_node[v.0].as_ref())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    /// A graph in which every bound parameter is trainable.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: BTreeMap::new(),
            trainable: Box::new(|_| true),
        }
    }

    /// A graph in which only parameters accepted by `filter` receive gradients.
    pub fn with_trainable(filter: impl Fn(&str) -> bool + 'static) -> Self {
        Self {
            nodes: Vec::new(),
            bound: BTreeMap::new(),
            trainable: Box::new(filter),
        }
    }

    /// A graph with no trainable parameters (pure inference).
    pub fn inference() -> Self {
        Self::with_trainable(|_| false)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "scalar() on non-scalar value");
        t.data()[0]
    }

    /// A constant input (never receives a gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free variable that receives a gradient (used by gradient checks).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copies `v` into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// Binds a named parameter. Repeated binds return the same variable so
    /// that weight sharing accumulates gradients correctly.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(v) = self.bound.get(name) {
            return *v;
        }
        let t = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not in the store"))
            .clone();
        let trainable = (self.trainable)(name);
        let v = self.push(t, Op::Leaf, trainable);
        self.bound.insert(name.to_string(), v);
        v
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Relu => |x| x.max(0.0),
            Unary::Gelu => gelu,
            Unary::Sigmoid => sigmoid,
            Unary::Softplus => softplus,
            Unary::Tanh => f64::tanh,
            Unary::Exp => f64::exp,
            Unary::Ln => f64::ln,
            Unary::Square => |x| x * x,
            Unary::Abs => f64::abs,
        };
        let y = self.value(x).map(f);
        let ng = self.ng(x);
        self.push(y, Op::Unary(kind, x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(Unary::Gelu, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x)
    }
    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }
    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(Unary::Ln, x)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Unary::Square, x)
    }
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(Unary::Abs, x)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            ta.shape(),
            tb.shape(),
            "elementwise {kind:?} shape mismatch"
        );
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
                Binary::Min => x.min(y),
                Binary::Max => x.max(y),
            })
            .collect();
        let out = Tensor::from_vec(ta.rows(), ta.cols(), data).expect("same shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Binary(kind, a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Div, a, b)
    }
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Min, a, b)
    }
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Max, a, b)
    }

    /// `x[r, c] + b[0, c]` for every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(b));
        assert_eq!((1, tx.cols()), tb.shape(), "add_row shape mismatch");
        let mut out = tx.clone();
        for r in 0..out.rows() {
            for (o, &bb) in out.row_slice_mut(r).iter_mut().zip(tb.data()) {
                *o += bb;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        self.push(out, Op::AddRow(x, b), ng)
    }

    /// `x[r, c] * g[0, c]` for every row.
    pub fn mul_row(&mut self, x: Var, gain: Var) -> Var {
        let (tx, tg) = (self.value(x), self.value(gain));
        assert_eq!((1, tx.cols()), tg.shape(), "mul_row shape mismatch");
        let mut out = tx.clone();
        for r in 0..out.rows() {
            for (o, &gg) in out.row_slice_mut(r).iter_mut().zip(tg.data()) {
                *o *= gg;
            }
        }
        let ng = self.ng(x) || self.ng(gain);
        self.push(out, Op::MulRow(x, gain), ng)
    }

    /// `x[r, c] * s[r, 0]` for every column (channel-wise broadcast).
    pub fn mul_col(&mut self, x: Var, s: Var) -> Var {
        let (tx, ts) = (self.value(x), self.value(s));
        assert_eq!((tx.rows(), 1), ts.shape(), "mul_col shape mismatch");
        let mut out = tx.clone();
        for r in 0..out.rows() {
            let k = ts.data()[r];
            for o in out.row_slice_mut(r) {
                *o *= k;
            }
        }
        let ng = self.ng(x) || self.ng(s);
        self.push(out, Op::MulCol(x, s), ng)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, k), ng)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v + k);
        let ng = self.ng(x);
        self.push(out, Op::AddScalar(x), ng)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let n = self.scale(x, -1.0);
        self.add_scalar(n, 1.0)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (xa, xb) = (self.value(a), self.value(b));
        let m = if ta { xa.cols() } else { xa.rows() };
        let n = if tb { xb.rows() } else { xb.cols() };
        let mut out = Tensor::zeros(m, n);
        gemm(xa, ta, xb, tb, &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false, true)
    }

    /// `aᵀ · b`.
    pub fn t_matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, true, false)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let ng = self.ng(x);
        self.push(out, Op::Transpose(x), ng)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_slice_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::SoftmaxRows(x), ng)
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` (`[1, c]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let tx = self.value(x);
        let (r, c) = tx.shape();
        let mut xhat = Tensor::zeros(r, c);
        let mut rstd = Vec::with_capacity(r);
        for i in 0..r {
            let row = tx.row_slice(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd.push(rs);
            for (o, v) in xhat.row_slice_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
        }
        let (tg, tb) = (self.value(gamma), self.value(beta));
        assert_eq!(tg.shape(), (1, c), "layer_norm gamma shape");
        assert_eq!(tb.shape(), (1, c), "layer_norm beta shape");
        let mut out = xhat.clone();
        for i in 0..r {
            for ((o, g), b) in out
                .row_slice_mut(i)
                .iter_mut()
                .zip(tg.data())
                .zip(tb.data())
            {
                *o = *o * g + b;
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        )
    }

    /// Sum of all entries, as a `[1, 1]` value.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Column sums, `[r, c] -> [1, c]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut out = Tensor::zeros(1, tx.cols());
        for r in 0..tx.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(tx.row_slice(r)) {
                *o += v;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::SumRows(x), ng)
    }

    /// Row sums, `[r, c] -> [r, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = (0..tx.rows()).map(|r| tx.row_slice(r).iter().sum()).collect();
        let out = Tensor::from_vec(tx.rows(), 1, data).expect("shape");
        let ng = self.ng(x);
        self.push(out, Op::SumCols(x), ng)
    }

    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let tx = self.value(x);
        assert!(start + len <= tx.cols(), "column slice out of range");
        let out = Tensor::from_fn(tx.rows(), len, |r, c| tx.get(r, start + c));
        let ng = self.ng(x);
        self.push(out, Op::Cols(x, start), ng)
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat_cols of nothing");
        let rows = self.value(xs[0]).rows();
        let total: usize = xs.iter().map(|&v| self.value(v).cols()).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut off = 0;
        for &v in xs {
            let t = self.value(v);
            assert_eq!(t.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_slice_mut(r)[off..off + t.cols()].copy_from_slice(t.row_slice(r));
            }
            off += t.cols();
        }
        let ng = xs.iter().any(|&v| self.ng(v));
        self.push(out, Op::ConcatCols(xs.to_vec()), ng)
    }

    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let tx = self.value(x);
        assert!(start + len <= tx.rows(), "row slice out of range");
        let c = tx.cols();
        let out = Tensor::from_vec(len, c, tx.data()[start * c..(start + len) * c].to_vec())
            .expect("shape");
        let ng = self.ng(x);
        self.push(out, Op::Rows(x, start), ng)
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat_rows of nothing");
        let cols = self.value(xs[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &v in xs {
            let t = self.value(v);
            assert_eq!(t.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let out = Tensor::from_vec(rows, cols, data).expect("shape");
        let ng = xs.iter().any(|&v| self.ng(v));
        self.push(out, Op::ConcatRows(xs.to_vec()), ng)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let out = self
            .value(x)
            .clone()
            .reshaped(rows, cols)
            .expect("reshape size mismatch");
        let ng = self.ng(x);
        self.push(out, Op::Reshape(x), ng)
    }

    pub fn gather(&mut self, x: Var, map: Rc<SparseRows>) -> Var {
        let out = map.apply(self.value(x));
        let ng = self.ng(x);
        self.push(out, Op::Gather(x, map), ng)
    }

    /// Unfolds convolution patches: `[h*w, cin] -> [ho*wo, k*k*cin]`, with
    /// column index `(ky*k + kx)*cin + c`.
    pub fn im2col(&mut self, x: Var, geom: ConvGeom) -> Var {
        let tx = self.value(x);
        assert_eq!(
            tx.shape(),
            (geom.h * geom.w, geom.cin),
            "im2col input shape mismatch"
        );
        let (ho, wo) = geom.out_hw();
        let kc = geom.k * geom.k * geom.cin;
        let mut out = Tensor::zeros(ho * wo, kc);
        for oy in 0..ho {
            for ox in 0..wo {
                let dst = out.row_slice_mut(oy * wo + ox);
                for ky in 0..geom.k {
                    for kx in 0..geom.k {
                        if let Some(src) = geom.source(oy, ox, ky, kx) {
                            let o = (ky * geom.k + kx) * geom.cin;
                            dst[o..o + geom.cin].copy_from_slice(tx.row_slice(src));
                        }
                    }
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::Im2col(x, geom), ng)
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward() needs a scalar loss");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Grads {
            per_node: grads,
            params: self.bound.clone(),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Unary(kind, x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(dy.data())
                    .map(|((&x, &y), &d)| {
                        d * match kind {
                            Unary::Relu => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Gelu => gelu_grad(x),
                            Unary::Sigmoid => y * (1.0 - y),
                            Unary::Softplus => sigmoid(x),
                            Unary::Tanh => 1.0 - y * y,
                            Unary::Exp => y,
                            Unary::Ln => 1.0 / x,
                            Unary::Square => 2.0 * x,
                            Unary::Abs => {
                                if x > 0.0 {
                                    1.0
                                } else if x < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                        }
                    })
                    .collect();
                let g = Tensor::from_vec(xv.rows(), xv.cols(), data).expect("shape");
                self.accumulate(grads, *x, g);
            }
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (r, c) = ta.shape();
                let mut ga = Tensor::zeros(r, c);
                let mut gb = Tensor::zeros(r, c);
                for k in 0..ta.len() {
                    let (x, z, d) = (ta.data()[k], tb.data()[k], dy.data()[k]);
                    let (da, db) = match kind {
                        Binary::Add => (d, d),
                        Binary::Sub => (d, -d),
                        Binary::Mul => (d * z, d * x),
                        Binary::Div => (d / z, -d * x / (z * z)),
                        // ties route to the first operand
                        Binary::Min => {
                            if x <= z {
                                (d, 0.0)
                            } else {
                                (0.0, d)
                            }
                        }
                        Binary::Max => {
                            if x >= z {
                                (d, 0.0)
                            } else {
                                (0.0, d)
                            }
                        }
                    };
                    ga.data_mut()[k] = da;
                    gb.data_mut()[k] = db;
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, dy.clone());
                if self.ng(*b) {
                    let mut gb = Tensor::zeros(1, dy.cols());
                    for r in 0..dy.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(dy.row_slice(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MulRow(x, gain) => {
                let (tx, tg) = (self.value(*x), self.value(*gain));
                if self.ng(*x) {
                    let mut gx = dy.clone();
                    for r in 0..gx.rows() {
                        for (o, g) in gx.row_slice_mut(r).iter_mut().zip(tg.data()) {
                            *o *= g;
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.ng(*gain) {
                    let mut gg = Tensor::zeros(1, dy.cols());
                    for r in 0..dy.rows() {
                        for ((o, d), xv) in gg
                            .data_mut()
                            .iter_mut()
                            .zip(dy.row_slice(r))
                            .zip(tx.row_slice(r))
                        {
                            *o += d * xv;
                        }
                    }
                    self.accumulate(grads, *gain, gg);
                }
            }
            Op::MulCol(x, s) => {
                let (tx, ts) = (self.value(*x), self.value(*s));
                if self.ng(*x) {
                    let mut gx = dy.clone();
                    for r in 0..gx.rows() {
                        let k = ts.data()[r];
                        for o in gx.row_slice_mut(r) {
                            *o *= k;
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.ng(*s) {
                    let data = (0..dy.rows())
                        .map(|r| {
                            dy.row_slice(r)
                                .iter()
                                .zip(tx.row_slice(r))
                                .map(|(d, v)| d * v)
                                .sum()
                        })
                        .collect();
                    let gs = Tensor::from_vec(dy.rows(), 1, data).expect("shape");
                    self.accumulate(grads, *s, gs);
                }
            }
            Op::Scale(x, k) => {
                let k = *k;
                self.accumulate(grads, *x, dy.map(|d| d * k));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, dy.clone()),
            Op::MatMul { a, b, ta, tb } => {
                let (xa, xb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    // y = A'B'; dA' = dY B'^T
                    let mut ga = Tensor::zeros(xa.rows(), xa.cols());
                    if *ta {
                        // A' = A^T: dA = B' dY^T
                        gemm(xb, *tb, dy, true, &mut ga, 0.0);
                    } else {
                        gemm(dy, false, xb, !*tb, &mut ga, 0.0);
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let mut gb = Tensor::zeros(xb.rows(), xb.cols());
                    if *tb {
                        // B' = B^T: dB = dY^T A'
                        gemm(dy, true, xa, *ta, &mut gb, 0.0);
                    } else {
                        gemm(xa, !*ta, dy, false, &mut gb, 0.0);
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Transpose(x) => self.accumulate(grads, *x, dy.transpose()),
            Op::SoftmaxRows(x) => {
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, dr) = (y.row_slice(r), dy.row_slice(r));
                    let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for ((o, yv), dv) in gx.row_slice_mut(r).iter_mut().zip(yr).zip(dr) {
                        *o = yv * (dv - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let tg = self.value(*gamma);
                let (r, c) = xhat.shape();
                if self.ng(*gamma) || self.ng(*beta) {
                    let mut gg = Tensor::zeros(1, c);
                    let mut gbeta = Tensor::zeros(1, c);
                    for i in 0..r {
                        for j in 0..c {
                            let d = dy.get(i, j);
                            gg.data_mut()[j] += d * xhat.get(i, j);
                            gbeta.data_mut()[j] += d;
                        }
                    }
                    self.accumulate(grads, *gamma, gg);
                    self.accumulate(grads, *beta, gbeta);
                }
                if self.ng(*x) {
                    let mut gx = Tensor::zeros(r, c);
                    let mut dxhat = vec![0.0; c];
                    for i in 0..r {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let v = dy.get(i, j) * tg.data()[j];
                            dxhat[j] = v;
                            m1 += v;
                            m2 += v * xhat.get(i, j);
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            gx.set(i, j, rstd[i] * (dxhat[j] - m1 - xhat.get(i, j) * m2));
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                self.accumulate(grads, *x, Tensor::full(r, c, dy.data()[0]));
            }
            Op::SumRows(x) => {
                let (r, c) = self.shape(*x);
                let g = Tensor::from_fn(r, c, |_, j| dy.data()[j]);
                self.accumulate(grads, *x, g);
            }
            Op::SumCols(x) => {
                let (r, c) = self.shape(*x);
                let g = Tensor::from_fn(r, c, |i, _| dy.data()[i]);
                self.accumulate(grads, *x, g);
            }
            Op::Cols(x, start) => {
                let (r, c) = self.shape(*x);
                let mut g = Tensor::zeros(r, c);
                for i in 0..r {
                    g.row_slice_mut(i)[*start..*start + dy.cols()].copy_from_slice(dy.row_slice(i));
                }
                self.accumulate(grads, *x, g);
            }
            Op::ConcatCols(xs) => {
                let mut off = 0;
                for &v in xs {
                    let (r, c) = self.shape(v);
                    if self.ng(v) {
                        let g = Tensor::from_fn(r, c, |i, j| dy.get(i, off + j));
                        self.accumulate(grads, v, g);
                    }
                    off += c;
                }
            }
            Op::Rows(x, start) => {
                let (r, c) = self.shape(*x);
                let mut g = Tensor::zeros(r, c);
                g.data_mut()[start * c..(start + dy.rows()) * c].copy_from_slice(dy.data());
                self.accumulate(grads, *x, g);
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &v in xs {
                    let (r, c) = self.shape(v);
                    if self.ng(v) {
                        let g = Tensor::from_vec(r, c, dy.data()[off * c..(off + r) * c].to_vec())
                            .expect("shape");
                        self.accumulate(grads, v, g);
                    }
                    off += r;
                }
            }
            Op::Reshape(x) => {
                let (r, c) = self.shape(*x);
                self.accumulate(grads, *x, dy.clone().reshaped(r, c).expect("shape"));
            }
            Op::Gather(x, map) => self.accumulate(grads, *x, map.apply_transposed(dy)),
            Op::Im2col(x, geom) => {
                let (ho, wo) = geom.out_hw();
                let mut gx = Tensor::zeros(geom.h * geom.w, geom.cin);
                for oy in 0..ho {
                    for ox in 0..wo {
                        let src = dy.row_slice(oy * wo + ox);
                        for ky in 0..geom.k {
                            for kx in 0..geom.k {
                                if let Some(dst) = geom.source(oy, ox, ky, kx) {
                                    let o = (ky * geom.k + kx) * geom.cin;
                                    for (d, s) in gx
                                        .row_slice_mut(dst)
                                        .iter_mut()
                                        .zip(&src[o..o + geom.cin])
                                    {
                                        *d += s;
                                    }
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
        }
    }
}
