//! Reverse-mode differentiation over 2-D `f64` matrices.
//!
//! Every activation in the models is a matrix: convolution features are
//! `channels × length`, token grids are `tokens × dim`, vectors are `1 × n`.
//! A [`Graph`] records one forward pass; [`Graph::backward`] propagates seed
//! gradients from any set of nodes back to the parameter leaves.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};
use crate::params::{LeafId, ParamTree};

pub type Mat = Array2<f64>;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    AddColBias(Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Mat,
    },
    LayerNorm {
        x: Var,
        g: Var,
        b: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Silu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    AdaptiveMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Resample {
        x: Var,
        taps: Vec<Tap>,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Mse {
        pred: Var,
        target: Mat,
    },
    Kl {
        mu: Var,
        log_var: Var,
    },
}

struct Node {
    value: Mat,
    op: Op,
}

/// Geometry of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_len(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.pad;
        if self.stride == 0 || padded < self.kernel {
            return Err(Error::Shape(format!(
                "conv kernel {} stride {} does not fit length {} with padding {}",
                self.kernel, self.stride, len, self.pad
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

/// Linear interpolation tap: `out[i] = (1-w)·x[lo] + w·x[hi]`.
#[derive(Clone, Copy, Debug)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub w: f64,
}

/// A recorded forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<LeafId, Var>,
}

/// Gradients for every node of a graph after [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

fn check_same(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input)
    }

    /// Parameter leaf; repeated requests for the same leaf share one node.
    pub fn param(&mut self, tree: &ParamTree, id: LeafId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(tree.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "add")?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "sub")?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "mul")?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    /// `x + b` with `b` of shape `1 × cols` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.nrows() != 1 || bv.ncols() != xv.ncols() {
            return Err(Error::Shape(format!(
                "row bias {:?} for input {:?}",
                bv.dim(),
                xv.dim()
            )));
        }
        let v = xv + bv;
        Ok(self.push(v, Op::AddRowBias(x, b)))
    }

    /// `x + b` with `b` of shape `rows × 1` broadcast over columns.
    pub fn add_col_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.ncols() != 1 || bv.nrows() != xv.nrows() {
            return Err(Error::Shape(format!(
                "column bias {:?} for input {:?}",
                bv.dim(),
                xv.dim()
            )));
        }
        let v = xv + bv;
        Ok(self.push(v, Op::AddColBias(x, b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(Error::Shape(format!("matmul {:?} · {:?}", av.dim(), bv.dim())));
        }
        let v = av.dot(bv);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.ncols() {
            return Err(Error::Shape(format!("matmul_nt {:?} · {:?}ᵀ", av.dim(), bv.dim())));
        }
        let v = av.dot(&bv.t());
        Ok(self.push(v, Op::MatMulNT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().as_standard_layout().to_owned();
        self.push(v, Op::Transpose(a))
    }

    /// Cross-correlation of `x: C_in × L` with `w: C_out × (C_in·k)` plus
    /// `b: C_out × 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let c_in = xv.nrows();
        if wv.ncols() != c_in * geom.kernel {
            return Err(Error::Shape(format!(
                "conv weight {:?} for {} input channels, kernel {}",
                wv.dim(),
                c_in,
                geom.kernel
            )));
        }
        if bv.dim() != (wv.nrows(), 1) {
            return Err(Error::Shape(format!("conv bias {:?}", bv.dim())));
        }
        let cols = im2col(xv, geom)?;
        let mut out = wv.dot(&cols);
        out += bv;
        Ok(self.push(
            out,
            Op::Conv1d {
                x,
                w,
                b,
                geom,
                cols,
            },
        ))
    }

    /// Normalizes each row over its columns, then applies `g`, `b` (`1 × cols`).
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let (gv, bv) = (self.value(g), self.value(b));
        let n = xv.ncols();
        if gv.dim() != (1, n) || bv.dim() != (1, n) {
            return Err(Error::Shape(format!(
                "layer norm gain {:?} / bias {:?} for input {:?}",
                gv.dim(),
                bv.dim(),
                xv.dim()
            )));
        }
        let (xhat, inv_std) = normalize_rows(xv);
        let out = &xhat * gv + bv;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                g,
                b,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|t| t * sigmoid(t));
        self.push(v, Op::Silu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(gelu);
        self.push(v, Op::Gelu(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = softmax_rows(self.value(x));
        self.push(v, Op::SoftmaxRows(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::exp);
        self.push(v, Op::Exp(x))
    }

    /// Elementwise clamp; the gradient is zero where the input was clipped.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).mapv(|t| t.clamp(lo, hi));
        self.push(v, Op::Clamp(x, lo, hi))
    }

    pub fn adaptive_max_pool(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let (v, argmax) = adaptive_max_pool_fwd(self.value(x), out_len)?;
        Ok(self.push(v, Op::AdaptiveMaxPool { x, argmax }))
    }

    /// Nearest-neighbour ×2 upsampling along columns.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = xv.dim();
        let mut out = Mat::zeros((r, 2 * c));
        for i in 0..r {
            for j in 0..c {
                let t = xv[[i, j]];
                out[[i, 2 * j]] = t;
                out[[i, 2 * j + 1]] = t;
            }
        }
        self.push(out, Op::Upsample2(x))
    }

    pub fn linear_resample(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let xv = self.value(x);
        let taps = resample_taps(xv.ncols(), out_len)?;
        let out = apply_taps(xv, &taps);
        Ok(self.push(out, Op::Resample { x, taps }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.ncols() {
            return Err(Error::Shape(format!(
                "column slice {start}..{end} of {:?}",
                xv.dim()
            )));
        }
        let v = xv.slice(s![.., start..end]).to_owned();
        Ok(self.push(v, Op::SliceCols(x, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::Shape(format!("concat: {e}")))?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Mean over rows, giving `1 × cols`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = xv
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(x))
    }

    /// Mean squared error against a constant target, as a `1 × 1` node.
    pub fn mse(&mut self, pred: Var, target: Mat) -> Result<Var> {
        check_same(self.value(pred), &target, "mse")?;
        let d = self.value(pred) - &target;
        let v = d.mapv(|t| t * t).mean().unwrap_or(0.0);
        Ok(self.push(Mat::from_elem((1, 1), v), Op::Mse { pred, target }))
    }

    /// KL divergence of a diagonal Gaussian from the standard normal, summed
    /// over columns (latent dims) and averaged over rows (tokens).
    pub fn kl(&mut self, mu: Var, log_var: Var) -> Result<Var> {
        let (m, l) = (self.value(mu), self.value(log_var));
        check_same(m, l, "kl")?;
        let v = kl_value(m, l);
        Ok(self.push(Mat::from_elem((1, 1), v), Op::Kl { mu, log_var }))
    }

    /// Back-propagates the given seed gradients. Seeds on the same node add.
    pub fn backward(&self, seeds: &[(Var, Mat)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for (v, g) in seeds {
            check_same(self.value(*v), g, "seed gradient")?;
            accumulate(&mut grads, *v, g.clone());
            last = last.max(v.0);
        }
        for idx in (0..=last).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    /// Pairs every parameter leaf used in this graph with its gradient.
    pub fn param_grads<'a>(
        &'a self,
        grads: &'a Gradients,
    ) -> impl Iterator<Item = (LeafId, &'a Mat)> + 'a {
        self.params
            .iter()
            .filter_map(move |(&id, &v)| grads.get(v).map(|g| (id, g)))
    }

    fn backprop_node(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g * self.value(*b));
                accumulate(grads, *b, g * self.value(*a));
            }
            Op::Scale(a, k) => accumulate(grads, *a, g * *k),
            Op::AddRowBias(x, b) => {
                accumulate(grads, *x, g.clone());
                accumulate(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::AddColBias(x, b) => {
                accumulate(grads, *x, g.clone());
                accumulate(grads, *b, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.dot(&self.value(*b).t()));
                accumulate(grads, *b, self.value(*a).t().dot(g));
            }
            Op::MatMulNT(a, b) => {
                accumulate(grads, *a, g.dot(self.value(*b)));
                accumulate(grads, *b, g.t().dot(self.value(*a)));
            }
            Op::Transpose(a) => {
                accumulate(grads, *a, g.t().as_standard_layout().to_owned());
            }
            Op::Conv1d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                accumulate(grads, *w, g.dot(&cols.t()));
                accumulate(grads, *b, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                let dcols = self.value(*w).t().dot(g);
                let xv = self.value(*x);
                accumulate(grads, *x, col2im(&dcols, xv.nrows(), xv.ncols(), *geom));
            }
            Op::LayerNorm {
                x,
                g: gain,
                b,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain);
                accumulate(
                    grads,
                    *gain,
                    (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                );
                accumulate(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                let dxhat = g * gv;
                let n = xhat.ncols() as f64;
                let mut dx = Mat::zeros(xhat.dim());
                for (r, inv) in inv_std.iter().enumerate() {
                    let dh = dxhat.row(r);
                    let xh = xhat.row(r);
                    let sum_dh = dh.sum();
                    let sum_dh_xh = dh.dot(&xh);
                    for c in 0..xhat.ncols() {
                        dx[[r, c]] = inv / n * (n * dh[c] - sum_dh - xh[c] * sum_dh_xh);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Silu(x) => {
                let d = self.value(*x).mapv(|t| {
                    let s = sigmoid(t);
                    s * (1.0 + t * (1.0 - s))
                });
                accumulate(grads, *x, g * &d);
            }
            Op::Gelu(x) => {
                let d = self.value(*x).mapv(gelu_grad);
                accumulate(grads, *x, g * &d);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut dx = g * y;
                for (mut row, yr) in dx.rows_mut().into_iter().zip(y.rows()) {
                    let s = row.sum();
                    row.zip_mut_with(&yr, |d, &yy| *d -= yy * s);
                }
                accumulate(grads, *x, dx);
            }
            Op::Exp(x) => accumulate(grads, *x, g * &node.value),
            Op::Clamp(x, lo, hi) => {
                let mut d = g.clone();
                d.zip_mut_with(self.value(*x), |d, &t| {
                    if t < *lo || t > *hi {
                        *d = 0.0;
                    }
                });
                accumulate(grads, *x, d);
            }
            Op::AdaptiveMaxPool { x, argmax } => {
                let xv = self.value(*x);
                let out_len = g.ncols();
                let mut dx = Mat::zeros(xv.dim());
                for r in 0..g.nrows() {
                    for i in 0..out_len {
                        dx[[r, argmax[r * out_len + i]]] += g[[r, i]];
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Upsample2(x) => {
                let (r, c) = self.value(*x).dim();
                let mut dx = Mat::zeros((r, c));
                for i in 0..r {
                    for j in 0..c {
                        dx[[i, j]] = g[[i, 2 * j]] + g[[i, 2 * j + 1]];
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Resample { x, taps } => {
                let xv = self.value(*x);
                let mut dx = Mat::zeros(xv.dim());
                for r in 0..g.nrows() {
                    for (i, t) in taps.iter().enumerate() {
                        dx[[r, t.lo]] += (1.0 - t.w) * g[[r, i]];
                        dx[[r, t.hi]] += t.w * g[[r, i]];
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let mut dx = Mat::zeros(xv.dim());
                dx.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    accumulate(grads, p, g.slice(s![.., off..off + w]).to_owned());
                    off += w;
                }
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let n = xv.nrows() as f64;
                let row = g.row(0).mapv(|t| t / n);
                let dx = row
                    .broadcast(xv.dim())
                    .expect("broadcast mean gradient")
                    .to_owned();
                accumulate(grads, *x, dx);
            }
            Op::Mse { pred, target } => {
                let n = target.len() as f64;
                let k = 2.0 * g[[0, 0]] / n;
                accumulate(grads, *pred, (self.value(*pred) - target) * k);
            }
            Op::Kl { mu, log_var } => {
                let rows = self.value(*mu).nrows() as f64;
                let k = g[[0, 0]] / rows;
                accumulate(grads, *mu, self.value(*mu) * k);
                accumulate(
                    grads,
                    *log_var,
                    self.value(*log_var).mapv(|l| 0.5 * (l.exp() - 1.0) * k),
                );
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub(crate) fn gelu(t: f64) -> f64 {
    0.5 * t * (1.0 + (GELU_C * (t + 0.044715 * t * t * t)).tanh())
}

fn gelu_grad(t: f64) -> f64 {
    let th = (GELU_C * (t + 0.044715 * t * t * t)).tanh();
    0.5 * (1.0 + th) + 0.5 * t * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * t * t)
}

pub(crate) fn normalize_rows(x: &Mat) -> (Mat, Vec<f64>) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
        inv_std.push(inv);
    }
    (xhat, inv_std)
}

pub(crate) fn softmax_rows(x: &Mat) -> Mat {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    y
}

pub(crate) fn kl_value(mu: &Mat, log_var: &Mat) -> f64 {
    let rows = mu.nrows().max(1) as f64;
    let total: f64 = mu
        .iter()
        .zip(log_var.iter())
        .map(|(&m, &l)| 0.5 * (m * m + l.exp() - 1.0 - l))
        .sum();
    total / rows
}

pub(crate) fn im2col(x: &Mat, geom: ConvGeom) -> Result<Mat> {
    let (c_in, len) = x.dim();
    let out_len = geom.out_len(len)?;
    let k = geom.kernel;
    let mut cols = Mat::zeros((c_in * k, out_len));
    for c in 0..c_in {
        for kk in 0..k {
            let row = c * k + kk;
            for o in 0..out_len {
                let pos = (o * geom.stride + kk) as isize - geom.pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    cols[[row, o]] = x[[c, pos as usize]];
                }
            }
        }
    }
    Ok(cols)
}

fn col2im(dcols: &Mat, c_in: usize, len: usize, geom: ConvGeom) -> Mat {
    let k = geom.kernel;
    let out_len = dcols.ncols();
    let mut dx = Mat::zeros((c_in, len));
    for c in 0..c_in {
        for kk in 0..k {
            let row = c * k + kk;
            for o in 0..out_len {
                let pos = (o * geom.stride + kk) as isize - geom.pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    dx[[c, pos as usize]] += dcols[[row, o]];
                }
            }
        }
    }
    dx
}

/// Bin `i` of `out_len` covers `[⌊iL/out⌋, ⌈(i+1)L/out⌉)`.
pub(crate) fn pool_bin(i: usize, len: usize, out_len: usize) -> (usize, usize) {
    let start = i * len / out_len;
    let end = ((i + 1) * len).div_ceil(out_len);
    (start, end.max(start + 1))
}

pub(crate) fn adaptive_max_pool_fwd(x: &Mat, out_len: usize) -> Result<(Mat, Vec<usize>)> {
    let (rows, len) = x.dim();
    if len == 0 || out_len == 0 {
        return Err(Error::Shape(format!(
            "adaptive max pool from length {len} to {out_len}"
        )));
    }
    let mut out = Mat::zeros((rows, out_len));
    let mut argmax = vec![0; rows * out_len];
    for r in 0..rows {
        for i in 0..out_len {
            let (start, end) = pool_bin(i, len, out_len);
            let mut best = start;
            for j in start + 1..end {
                if x[[r, j]] > x[[r, best]] {
                    best = j;
                }
            }
            out[[r, i]] = x[[r, best]];
            argmax[r * out_len + i] = best;
        }
    }
    Ok((out, argmax))
}

/// Uniform query points with both endpoints aligned to the input endpoints.
pub(crate) fn resample_taps(len: usize, out_len: usize) -> Result<Vec<Tap>> {
    if len < 2 {
        return Err(Error::Shape(format!(
            "linear resampling needs at least 2 samples, got {len}"
        )));
    }
    if out_len == 0 {
        return Err(Error::Shape("linear resampling to length 0".into()));
    }
    let taps = (0..out_len)
        .map(|i| {
            if out_len == 1 {
                return Tap { lo: 0, hi: 0, w: 0.0 };
            }
            if len == out_len {
                return Tap { lo: i, hi: i, w: 0.0 };
            }
            let pos = i as f64 * (len - 1) as f64 / (out_len - 1) as f64;
            let lo = (pos.floor() as usize).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            Tap {
                lo,
                hi,
                w: pos - lo as f64,
            }
        })
        .collect();
    Ok(taps)
}

pub(crate) fn apply_taps(x: &Mat, taps: &[Tap]) -> Mat {
    let mut out = Mat::zeros((x.nrows(), taps.len()));
    for r in 0..x.nrows() {
        for (i, t) in taps.iter().enumerate() {
            out[[r, i]] = (1.0 - t.w) * x[[r, t.lo]] + t.w * x[[r, t.hi]];
        }
    }
    out
}
