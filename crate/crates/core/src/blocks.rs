//! Layers shared by the fMRI autoencoder and the semantic-to-neural mapper.
//!
//! Each layer owns the [`LeafId`]s of its parameters and records its forward
//! pass into a [`Graph`]. Convolutional features are `channels × length`;
//! token features are `tokens × dim`.

use rand::Rng;

use crate::autograd::{self, ConvGeom, Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::params::{truncated_normal, LeafId, ParamTree, INIT_SD};

/// Runs `f` on a fresh graph with `x` as input and returns the output value.
pub fn eval(x: &Mat, f: impl FnOnce(&mut Graph, Var) -> Result<Var>) -> Result<Mat> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = f(&mut g, xv)?;
    Ok(g.value(out).clone())
}

/// Adaptive max pooling along columns to a fixed length.
pub fn adaptive_max_pool(x: &Mat, out_len: usize) -> Result<Mat> {
    autograd::adaptive_max_pool_fwd(x, out_len).map(|(v, _)| v)
}

/// Piecewise-linear resampling along columns with aligned endpoints.
pub fn linear_resample(x: &Mat, out_len: usize) -> Result<Mat> {
    let taps = autograd::resample_taps(x.ncols(), out_len)?;
    Ok(autograd::apply_taps(x, &taps))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: LeafId,
    pub b: LeafId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        tree: &mut ParamTree,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = tree.insert(
            &format!("{name}.w"),
            truncated_normal(rng, d_in, d_out, INIT_SD),
            true,
        )?;
        let b = tree.insert(&format!("{name}.b"), Mat::zeros((1, d_out)), true)?;
        Ok(Self { w, b, d_in, d_out })
    }

    pub fn forward(&self, g: &mut Graph, tree: &ParamTree, x: Var) -> Result<Var> {
        let w = g.param(tree, self.w);
        let b = g.param(tree, self.b);
        let h = g.matmul(x, w)?;
        g.add_row_bias(h, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: LeafId,
    pub b: LeafId,
    pub c_in: usize,
    pub c_out: usize,
    pub geom: ConvGeom,
}

impl Conv1d {
    /// Weight layout is `c_out × (c_in·kernel)`, input-channel major.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        tree: &mut ParamTree,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = tree.insert(
            &format!("{name}.w"),
            truncated_normal(rng, c_out, c_in * kernel, INIT_SD),
            true,
        )?;
        let b = tree.insert(&format!("{name}.b"), Mat::zeros((c_out, 1)), true)?;
        Ok(Self {
            w,
            b,
            c_in,
            c_out,
            geom: ConvGeom {
                kernel,
                stride,
                pad,
            },
        })
    }

    /// Length-preserving convolution with an odd kernel.
    pub fn same<R: Rng + ?Sized>(
        tree: &mut ParamTree,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(tree, name, c_in, c_out, kernel, 1, kernel / 2, rng)
    }

    pub fn forward(&self, g: &mut Graph, tree: &ParamTree, x: Var) -> Result<Var> {
        if g.value(x).nrows() != self.c_in {
            return Err(Error::Shape(format!(
                "conv expects {} channels, got {}",
                self.c_in,
                g.value(x).nrows()
            )));
        }
        let w = g.param(tree, self.w);
        let b = g.param(tree, self.b);
        g.conv1d(x, w, b, self.geom)
    }
}

/// Layer normalization over the last axis of a `tokens × dim` input.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub g: LeafId,
    pub b: LeafId,
}

impl LayerNorm {
    pub fn new(tree: &mut ParamTree, name: &str, dim: usize) -> Result<Self> {
        let g = tree.insert(&format!("{name}.g"), Mat::ones((1, dim)), true)?;
        let b = tree.insert(&format!("{name}.b"), Mat::zeros((1, dim)), true)?;
        Ok(Self { g, b })
    }

    pub fn forward(&self, g: &mut Graph, tree: &ParamTree, x: Var) -> Result<Var> {
        let gain = g.param(tree, self.g);
        let bias = g.param(tree, self.b);
        g.layer_norm(x, gain, bias)
    }

    /// Normalizes a `channels × length` input over the channel axis.
    pub fn forward_channels(&self, g: &mut Graph, tree: &ParamTree, x: Var) -> Result<Var> {
        let t = g.transpose(x);
        let n = self.forward(g, tree, t)?;
        Ok(g.transpose(n))
    }
}

/// Two (norm → SiLU → conv) stages plus a skip path; the skip is a 1×1
/// convolution when the channel count changes.
#[derive(Clone, Debug)]
pub struct ResnetBlock {
    pub norm1: LayerNorm,
    pub conv1: Conv1d,
    pub norm2: LayerNorm,
    pub conv2: Conv1d,
    pub skip: Option<Conv1d>,
}

impl ResnetBlock {
    pub fn new<R: Rng + ?Sized>(
        tree: &mut ParamTree,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(tree, &format!("{name}.norm1"), c_in)?,
            conv1: Conv1d::same(tree, &format!("{name}.conv1"), c_in, c_out, 3, rng)?,
            norm2: LayerNorm::new(tree, &format!("{name}.norm2"), c_out)?,
            conv2: Conv1d::same(tree, &format!("{name}.conv2"), c_out, c_out, 3, rng)?,
            skip: if c_in == c_out {
                None
            } else {
                Some(Conv1d::same(tree, &format!("{name}.skip"), c_in, c_out, 1, rng)?)
            },
        })
    }

    pub fn forward(&self, g: &mut Graph, tree: &ParamTree, x: Var) -> Result<Var> {
        let mut h = self.norm1.forward_channels(g, tree, x)?;
        h = g.silu(h);
        h = self.conv1.forward(g, tree, h)?;
        h = self.norm2.forward_channels(g, tree, h)?;
        h = g.silu(h);
        h = self.conv2.forward(g, tree, h)?;
        let skip = match &self.skip {
            Some(conv) => conv.forward(g, tree, x)?,
            None => x,
        };
        g.add(skip, h)
    }
}

/// Pre-norm multi-head self-attention with a residual connection.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub norm: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl SelfAttention {
    pub fn new<R: Rng + ?Sized>(
        tree: &mut ParamTree,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            norm: LayerNorm::new(tree, &format!("{name}.norm"), dim)?,
            q: Linear::new(tree, &format!("{name}.q"), dim, dim, rng)?,
            k: Linear::new(tree, &format!("{name}.k"), dim, dim, rng)?,
            v: Linear::new(tree, &format!("{name}.v"), dim, dim, rng)?,
            out: Linear::new(tree, &format!("{name}.out"), dim, dim, rng)?,
            heads,
            dim,
        })
    }

    /// `x: tokens × dim`.
    pub fn forward(&self, g: &mut Graph, tree: &ParamTree, x: Var) -> Result<Var> {
        let h = self.norm.forward(g, tree, x)?;
        let attended = self.attend(g, tree, h)?;
        g.add(x, attended)
    }

    /// Attention path without the norm or residual.
    pub fn attend(&self, g: &mut Graph, tree: &ParamTree, h: Var) -> Result<Var> {
        if g.value(h).ncols() != self.dim {
            return Err(Error::Shape(format!(
                "attention expects dim {}, got {}",
                self.dim,
                g.value(h).ncols()
            )));
        }
        let q = self.q.forward(g, tree, h)?;
        let k = self.k.forward(g, tree, h)?;
        let v = self.v.forward(g, tree, h)?;
        let hd = self.dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let (lo, hi) = (head * hd, (head + 1) * hd);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, lo, hi)?,
                    g.slice_cols(k, lo, hi)?,
                    g.slice_cols(v, lo, hi)?,
                )
            };
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax_rows(scores);
            outs.push(g.matmul(weights, vh)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        self.out.forward(g, tree, merged)
    }

    /// Attention over the positions of a `channels × length` input.
    pub fn forward_channels(&self, g: &mut Graph, tree: &ParamTree, x: Var) -> Result<Var> {
        let t = g.transpose(x);
        let y = self.forward(g, tree, t)?;
        Ok(g.transpose(y))
    }
}

/// Token-wise projector: LayerNorm → GELU, then `Linear → LayerNorm → GELU`
/// for every hidden width, then a final Linear.
#[derive(Clone, Debug)]
pub struct MlpProjector {
    pub input_norm: LayerNorm,
    pub hidden: Vec<(Linear, LayerNorm)>,
    pub last: Linear,
}

impl MlpProjector {
    /// `dims = [d_in, hidden…, d_out]`, at least two entries.
    pub fn new<R: Rng + ?Sized>(
        tree: &mut ParamTree,
        name: &str,
        dims: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("projector dims {dims:?}")));
        }
        let input_norm = LayerNorm::new(tree, &format!("{name}.norm_in"), dims[0])?;
        let mut hidden = Vec::new();
        for i in 0..dims.len() - 2 {
            let lin = Linear::new(tree, &format!("{name}.fc{i}"), dims[i], dims[i + 1], rng)?;
            let norm = LayerNorm::new(tree, &format!("{name}.norm{i}"), dims[i + 1])?;
            hidden.push((lin, norm));
        }
        let n = dims.len() - 2;
        let last = Linear::new(tree, &format!("{name}.fc{n}"), dims[n], dims[n + 1], rng)?;
        Ok(Self {
            input_norm,
            hidden,
            last,
        })
    }

    pub fn d_in(&self) -> usize {
        self.hidden
            .first()
            .map(|(l, _)| l.d_in)
            .unwrap_or(self.last.d_in)
    }

    pub fn forward(&self, g: &mut Graph, tree: &ParamTree, x: Var) -> Result<Var> {
        if g.value(x).ncols() != self.d_in() {
            return Err(Error::Shape(format!(
                "projector expects width {}, got {}",
                self.d_in(),
                g.value(x).ncols()
            )));
        }
        let mut h = self.input_norm.forward(g, tree, x)?;
        h = g.gelu(h);
        for (lin, norm) in &self.hidden {
            h = lin.forward(g, tree, h)?;
            h = norm.forward(g, tree, h)?;
            h = g.gelu(h);
        }
        self.last.forward(g, tree, h)
    }

    pub fn leaves(&self) -> Vec<LeafId> {
        let mut ids = vec![self.input_norm.g, self.input_norm.b];
        for (lin, norm) in &self.hidden {
            ids.extend([lin.w, lin.b, norm.g, norm.b]);
        }
        ids.extend([self.last.w, self.last.b]);
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_input_grad, check_param_grads};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_simple_fn((r, c), || StandardNormal.sample(rng))
    }

    /// Randomizes every leaf so zero-initialized biases do not hide bugs.
    fn jitter(tree: &mut ParamTree, rng: &mut ChaCha8Rng, sd: f64) {
        let ids: Vec<_> = tree.ids().collect();
        for id in ids {
            let (r, c) = tree.value(id).dim();
            let noise = randn(rng, r, c) * sd;
            *tree.value_mut(id) += &noise;
        }
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        let mut r = rng(1);
        let mut tree = ParamTree::new();
        let conv = Conv1d::same(&mut tree, "c", 1, 1, 7, &mut r).unwrap();
        let mut w = Mat::zeros((1, 7));
        w[[0, 3]] = 1.0;
        *tree.value_mut(conv.w) = w;
        let x = randn(&mut r, 1, 20);
        let y = eval(&x, |g, v| conv.forward(g, &tree, v)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let mut r = rng(2);
        let mut tree = ParamTree::new();
        let conv = Conv1d::same(&mut tree, "c", 2, 3, 7, &mut r).unwrap();
        *tree.value_mut(conv.b) = Mat::from_shape_vec((3, 1), vec![1.0, -2.0, 0.5]).unwrap();
        let y = eval(&Mat::zeros((2, 9)), |g, v| conv.forward(g, &tree, v)).unwrap();
        for c in 0..3 {
            assert!(y.row(c).iter().all(|&v| v == tree.value(conv.b)[[c, 0]]));
        }
    }

    #[test]
    fn conv_matches_sliding_dot_product() {
        let mut r = rng(3);
        let mut tree = ParamTree::new();
        let conv = Conv1d::same(&mut tree, "c", 1, 2, 7, &mut r).unwrap();
        jitter(&mut tree, &mut r, 0.5);
        let x = randn(&mut r, 1, 8);
        let y = eval(&x, |g, v| conv.forward(g, &tree, v)).unwrap();
        let w = tree.value(conv.w);
        let b = tree.value(conv.b);
        for o in 0..2 {
            for i in 0..8 {
                let mut acc = b[[o, 0]];
                for k in 0..7 {
                    let pos = i as isize + k as isize - 3;
                    if (0..8).contains(&pos) {
                        acc += w[[o, k]] * x[[0, pos as usize]];
                    }
                }
                assert!((y[[o, i]] - acc).abs() < 1e-6);
            }
        }
        assert_eq!(y.dim(), (2, 8));
    }

    #[test]
    fn strided_conv_halves_length() {
        let mut r = rng(4);
        let mut tree = ParamTree::new();
        let conv = Conv1d::new(&mut tree, "d", 2, 2, 3, 2, 1, &mut r).unwrap();
        let y = eval(&randn(&mut r, 2, 16), |g, v| conv.forward(g, &tree, v)).unwrap();
        assert_eq!(y.dim(), (2, 8));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut r = rng(5);
        let mut tree = ParamTree::new();
        let conv = Conv1d::same(&mut tree, "c", 2, 2, 3, &mut r).unwrap();
        assert!(eval(&Mat::zeros((3, 5)), |g, v| conv.forward(g, &tree, v)).is_err());
    }

    fn zero_residual(tree: &mut ParamTree, block: &ResnetBlock) {
        *tree.value_mut(block.conv2.w) = Mat::zeros(tree.value(block.conv2.w).dim());
        *tree.value_mut(block.conv2.b) = Mat::zeros(tree.value(block.conv2.b).dim());
    }

    #[test]
    fn resnet_zero_branch_is_skip() {
        let mut r = rng(6);
        let mut tree = ParamTree::new();
        let same = ResnetBlock::new(&mut tree, "a", 4, 4, &mut r).unwrap();
        let grow = ResnetBlock::new(&mut tree, "b", 4, 6, &mut r).unwrap();
        zero_residual(&mut tree, &same);
        zero_residual(&mut tree, &grow);
        let x = randn(&mut r, 4, 10);
        assert_eq!(eval(&x, |g, v| same.forward(g, &tree, v)).unwrap(), x);
        let skip = grow.skip.as_ref().unwrap();
        let expect = eval(&x, |g, v| skip.forward(g, &tree, v)).unwrap();
        assert_eq!(eval(&x, |g, v| grow.forward(g, &tree, v)).unwrap(), expect);
    }

    #[test]
    fn resnet_input_gradient_matches_finite_differences() {
        let mut r = rng(7);
        let mut tree = ParamTree::new();
        let block = ResnetBlock::new(&mut tree, "r", 3, 5, &mut r).unwrap();
        jitter(&mut tree, &mut r, 0.3);
        let x = randn(&mut r, 3, 16);
        let err = check_input_grad(&x, |g, v| block.forward(g, &tree, v)).unwrap();
        assert!(err <= 1e-4, "rel err {err}");
        let perr = check_param_grads(&tree, &x, |g, t, v| block.forward(g, t, v)).unwrap();
        assert!(perr <= 1e-4, "param rel err {perr}");
    }

    #[test]
    fn attention_single_position_passes_value_path() {
        let mut r = rng(8);
        let mut tree = ParamTree::new();
        let attn = SelfAttention::new(&mut tree, "a", 4, 2, &mut r).unwrap();
        jitter(&mut tree, &mut r, 0.3);
        let x = randn(&mut r, 1, 4);
        let y = eval(&x, |g, v| attn.forward(g, &tree, v)).unwrap();
        // With one position the softmax weight is exactly 1.
        let expect = eval(&x, |g, v| {
            let h = attn.norm.forward(g, &tree, v)?;
            let val = attn.v.forward(g, &tree, h)?;
            let o = attn.out.forward(g, &tree, val)?;
            g.add(v, o)
        })
        .unwrap();
        for (a, b) in y.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let mut r = rng(9);
        let mut tree = ParamTree::new();
        let attn = SelfAttention::new(&mut tree, "a", 6, 3, &mut r).unwrap();
        jitter(&mut tree, &mut r, 0.3);
        let x = randn(&mut r, 5, 6);
        let perm = [3, 0, 4, 1, 2];
        let xp = Mat::from_shape_fn((5, 6), |(i, j)| x[[perm[i], j]]);
        let y = eval(&x, |g, v| attn.forward(g, &tree, v)).unwrap();
        let yp = eval(&xp, |g, v| attn.forward(g, &tree, v)).unwrap();
        for i in 0..5 {
            for j in 0..6 {
                assert!((yp[[i, j]] - y[[perm[i], j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_matches_hand_computation() {
        // dim 1, one head, unit norm gain: the normalized input of a 1-wide
        // token is 0, so use identity-like weights on a 2-wide head instead.
        let mut r = rng(10);
        let mut tree = ParamTree::new();
        let attn = SelfAttention::new(&mut tree, "a", 2, 1, &mut r).unwrap();
        let eye = Mat::eye(2);
        for lin in [&attn.q, &attn.k, &attn.v, &attn.out] {
            *tree.value_mut(lin.w) = eye.clone();
        }
        let x = Mat::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let y = eval(&x, |g, v| attn.forward(g, &tree, v)).unwrap();

        // Layer norm of [1,0] is [1,-1]·c and of [0,2] is [-1,1]·c'.
        let ln = |a: f64, b: f64| {
            let m = (a + b) / 2.0;
            let var = ((a - m).powi(2) + (b - m).powi(2)) / 2.0;
            let s = (var + 1e-5).sqrt();
            [(a - m) / s, (b - m) / s]
        };
        let h = [ln(1.0, 0.0), ln(0.0, 2.0)];
        let scale = 1.0 / 2f64.sqrt();
        for i in 0..2 {
            let s: Vec<f64> = (0..2)
                .map(|j| (h[i][0] * h[j][0] + h[i][1] * h[j][1]) * scale)
                .collect();
            let m = s[0].max(s[1]);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z = e[0] + e[1];
            for c in 0..2 {
                let attended = (e[0] * h[0][c] + e[1] * h[1][c]) / z;
                assert!((y[[i, c]] - (x[[i, c]] + attended)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn attention_rejects_indivisible_heads() {
        let mut tree = ParamTree::new();
        assert!(SelfAttention::new(&mut tree, "a", 10, 3, &mut rng(0)).is_err());
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut r = rng(11);
        let mut tree = ParamTree::new();
        let attn = SelfAttention::new(&mut tree, "a", 4, 2, &mut r).unwrap();
        jitter(&mut tree, &mut r, 0.3);
        let x = randn(&mut r, 5, 4);
        let err = check_input_grad(&x, |g, v| attn.forward(g, &tree, v)).unwrap();
        assert!(err <= 1e-4, "rel err {err}");
        let perr = check_param_grads(&tree, &x, |g, t, v| attn.forward(g, t, v)).unwrap();
        assert!(perr <= 1e-4, "param rel err {perr}");
    }

    #[test]
    fn adaptive_pool_hand_bins() {
        let x = Mat::from_shape_vec((1, 4), vec![1.0, 5.0, 2.0, 7.0]).unwrap();
        let y = adaptive_max_pool(&x, 2).unwrap();
        assert_eq!(y.row(0).to_vec(), vec![5.0, 7.0]);
        assert_eq!(adaptive_max_pool(&x, 4).unwrap(), x);
    }

    #[test]
    fn adaptive_pool_shape_sweep() {
        let mut r = rng(12);
        for len in [97, 512, 15724] {
            let x = randn(&mut r, 2, len);
            assert_eq!(adaptive_max_pool(&x, 64).unwrap().dim(), (2, 64));
        }
    }

    #[test]
    fn adaptive_pool_bins_cover_input() {
        for len in 1..60 {
            for out in 1..20 {
                let mut covered = vec![false; len];
                for i in 0..out {
                    let (s, e) = autograd::pool_bin(i, len, out);
                    assert!(s < e && e <= len, "len {len} out {out} bin {i}");
                    covered[s..e].iter_mut().for_each(|c| *c = true);
                }
                assert!(covered.iter().all(|&c| c));
            }
        }
    }

    #[test]
    fn adaptive_pool_gradient() {
        let mut r = rng(13);
        let x = randn(&mut r, 2, 13);
        let err = check_input_grad(&x, |g, v| g.adaptive_max_pool(v, 5)).unwrap();
        assert!(err <= 1e-4, "rel err {err}");
    }

    #[test]
    fn resample_identity_and_midpoint() {
        let mut r = rng(14);
        let x = randn(&mut r, 3, 11);
        assert_eq!(linear_resample(&x, 11).unwrap(), x);
        let y = linear_resample(&Mat::from_shape_vec((1, 2), vec![0.0, 1.0]).unwrap(), 3).unwrap();
        assert_eq!(y.row(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert!(linear_resample(&Mat::zeros((1, 1)), 4).is_err());
    }

    #[test]
    fn resample_gradient() {
        let mut r = rng(15);
        let x = randn(&mut r, 2, 9);
        let err = check_input_grad(&x, |g, v| g.linear_resample(v, 23)).unwrap();
        assert!(err <= 1e-4, "rel err {err}");
    }

    #[test]
    fn projector_is_token_parallel() {
        let mut r = rng(16);
        let mut tree = ParamTree::new();
        let p = MlpProjector::new(&mut tree, "p", &[8, 6, 6, 4], &mut r).unwrap();
        jitter(&mut tree, &mut r, 0.2);
        let x = randn(&mut r, 2, 8);
        let both = eval(&x, |g, v| p.forward(g, &tree, v)).unwrap();
        for t in 0..2 {
            let row = x.row(t).to_owned().insert_axis(ndarray::Axis(0));
            let single = eval(&row, |g, v| p.forward(g, &tree, v)).unwrap();
            for c in 0..4 {
                assert_eq!(single[[0, c]].to_bits(), both[[t, c]].to_bits());
            }
        }
    }

    #[test]
    fn projector_zero_last_layer_outputs_zero() {
        let mut r = rng(17);
        let mut tree = ParamTree::new();
        let p = MlpProjector::new(&mut tree, "p", &[8, 6, 6, 4], &mut r).unwrap();
        *tree.value_mut(p.last.w) = Mat::zeros((6, 4));
        let y = eval(&randn(&mut r, 3, 8), |g, v| p.forward(g, &tree, v)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(eval(&randn(&mut r, 3, 7), |g, v| p.forward(g, &tree, v)).is_err());
    }

    #[test]
    fn projector_gradients_match_finite_differences() {
        let mut r = rng(18);
        let mut tree = ParamTree::new();
        let p = MlpProjector::new(&mut tree, "p", &[8, 8, 8, 8], &mut r).unwrap();
        jitter(&mut tree, &mut r, 0.3);
        let x = randn(&mut r, 3, 8);
        let err = check_input_grad(&x, |g, v| p.forward(g, &tree, v)).unwrap();
        assert!(err <= 1e-4, "rel err {err}");
        let perr = check_param_grads(&tree, &x, |g, t, v| p.forward(g, t, v)).unwrap();
        assert!(perr <= 1e-4, "param rel err {perr}");
    }

    #[test]
    fn primitive_op_gradients() {
        let mut r = rng(19);
        let x = randn(&mut r, 3, 4);
        type Op = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;
        let ops: Vec<Op> = vec![
            Box::new(|g, v| Ok(g.silu(v))),
            Box::new(|g, v| Ok(g.gelu(v))),
            Box::new(|g, v| Ok(g.softmax_rows(v))),
            Box::new(|g, v| Ok(g.exp(v))),
            Box::new(|g, v| Ok(g.upsample2(v))),
            Box::new(|g, v| Ok(g.mean_rows(v))),
            Box::new(|g, v| g.kl(v, v)),
            Box::new(|g, v| g.slice_cols(v, 1, 3)),
            Box::new(|g, v| {
                let t = g.transpose(v);
                g.matmul(v, t)
            }),
            Box::new(|g, v| {
                let a = g.slice_cols(v, 0, 2)?;
                let b = g.slice_cols(v, 2, 4)?;
                let c = g.concat_cols(&[b, a])?;
                g.mul(c, v)
            }),
        ];
        for (i, op) in ops.iter().enumerate() {
            let err = check_input_grad(&x, op).unwrap();
            assert!(err <= 1e-4, "op {i}: rel err {err}");
        }
    }
}
