//! The variational fMRI autoencoder.
//!
//! The encoder maps a `1 × V` signal of any length to a
//! `hidden_tokens × hidden_dim` grid: a stem convolution, adaptive max
//! pooling to `pooled_len`, residual levels with strided downsampling, a
//! middle block (residual, attention, residual) and a final convolution whose
//! output channels become the tokens. Two MLP projectors turn the grid into
//! a per-token Gaussian; a third maps latents back to the grid, and the
//! decoder mirrors the encoder before resampling to the requested length.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::blocks::{Conv1d, LayerNorm, MlpProjector, ResnetBlock, SelfAttention};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{read_json, write_json, ParamTree};
use crate::seed::rng_for;

pub const LOG_VAR_MIN: f64 = -30.0;
pub const LOG_VAR_MAX: f64 = 20.0;

/// Per-token diagonal Gaussian over latents.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGaussian {
    pub mu: Mat,
    pub log_var: Mat,
}

impl LatentGaussian {
    pub fn new(mu: Mat, log_var: Mat) -> Result<Self> {
        if mu.dim() != log_var.dim() {
            return Err(Error::Shape(format!(
                "mu {:?} vs log_var {:?}",
                mu.dim(),
                log_var.dim()
            )));
        }
        Ok(Self {
            mu,
            log_var: log_var.mapv(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)),
        })
    }

    /// Token-mean of `mu`, the embedding used for retrieval.
    pub fn pooled_mean(&self) -> Vec<f64> {
        pool_tokens(&self.mu)
    }
}

pub fn pool_tokens(z: &Mat) -> Vec<f64> {
    z.mean_axis(ndarray::Axis(0))
        .map(|m| m.to_vec())
        .unwrap_or_default()
}

/// `z = mu + exp(log_var / 2) ⊙ eps`.
pub fn reparameterize_with(g: &LatentGaussian, eps: &Mat) -> Result<Mat> {
    if eps.dim() != g.mu.dim() {
        return Err(Error::Shape(format!(
            "noise {:?} vs latent {:?}",
            eps.dim(),
            g.mu.dim()
        )));
    }
    let sd = g.log_var.mapv(|v| (0.5 * v).exp());
    Ok(&g.mu + &(sd * eps))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn reparameterize<R: Rng + ?Sized>(g: &LatentGaussian, rng: &mut R) -> Result<Mat> {
    let eps = standard_normal(rng, g.mu.nrows(), g.mu.ncols());
    reparameterize_with(g, &eps)
}

#[derive(Clone, Debug)]
struct Level {
    blocks: Vec<ResnetBlock>,
    resample: Option<Conv1d>,
}

#[derive(Clone, Debug)]
struct MiddleBlock {
    res1: ResnetBlock,
    attn: SelfAttention,
    res2: ResnetBlock,
}

impl MiddleBlock {
    fn new<R: Rng + ?Sized>(tree: &mut ParamTree, name: &str, c: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            res1: ResnetBlock::new(tree, &format!("{name}.res1"), c, c, rng)?,
            attn: SelfAttention::new(tree, &format!("{name}.attn"), c, 1, rng)?,
            res2: ResnetBlock::new(tree, &format!("{name}.res2"), c, c, rng)?,
        })
    }

    fn forward(&self, g: &mut Graph, tree: &ParamTree, x: Var) -> Result<Var> {
        let h = self.res1.forward(g, tree, x)?;
        let h = self.attn.forward_channels(g, tree, h)?;
        self.res2.forward(g, tree, h)
    }
}

#[derive(Clone, Debug)]
struct Encoder {
    stem: Conv1d,
    levels: Vec<Level>,
    middle: MiddleBlock,
    norm_out: LayerNorm,
    conv_out: Conv1d,
}

#[derive(Clone, Debug)]
struct Decoder {
    conv_in: Conv1d,
    middle: MiddleBlock,
    /// Applied in order, deepest level first; `resample` here is the
    /// upsampling convolution run before the level's blocks.
    levels: Vec<Level>,
    norm_out: LayerNorm,
    conv_out: Conv1d,
}

/// Graph handles produced by one recorded forward pass.
#[derive(Clone, Copy, Debug)]
pub struct VaeVars {
    pub hidden: Var,
    pub mu: Var,
    pub log_var: Var,
    pub z: Var,
    pub x_hat: Var,
}

/// Values of one forward pass.
#[derive(Clone, Debug)]
pub struct VaeOutput {
    pub fmri_hat: Mat,
    pub z: Mat,
    pub posterior: LatentGaussian,
}

#[derive(Serialize, Deserialize)]
struct ModelStamp {
    kind: String,
    config: ModelConfig,
}

/// Encoder, projectors and decoder sharing one [`ParamTree`].
#[derive(Clone, Debug)]
pub struct BrainVae {
    pub config: ModelConfig,
    pub tree: ParamTree,
    encoder: Encoder,
    mu_proj: MlpProjector,
    log_var_proj: MlpProjector,
    post_proj: MlpProjector,
    decoder: Decoder,
}

impl BrainVae {
    /// Builds a freshly initialized model; initialization draws from a stream
    /// derived from `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(config.seed, &[0x0076_6165]);
        let rng = &mut rng;
        let mut tree = ParamTree::new();
        let t = &mut tree;
        let c = |i: usize| config.channels(i);
        let n_levels = config.num_levels();

        let stem = Conv1d::same(t, "enc.stem", 1, c(0), 7, rng)?;
        let mut levels = Vec::new();
        for i in 1..=n_levels {
            let mut blocks = Vec::new();
            for b in 0..config.num_res_blocks {
                let c_in = if b == 0 { c(i - 1) } else { c(i) };
                blocks.push(ResnetBlock::new(t, &format!("enc.level{i}.res{b}"), c_in, c(i), rng)?);
            }
            let resample = if i <= config.num_down_blocks {
                Some(Conv1d::new(t, &format!("enc.level{i}.down"), c(i), c(i), 3, 2, 1, rng)?)
            } else {
                None
            };
            levels.push(Level { blocks, resample });
        }
        let top = c(n_levels);
        let middle = MiddleBlock::new(t, "enc.mid", top, rng)?;
        let norm_out = LayerNorm::new(t, "enc.norm_out", top)?;
        let conv_out = Conv1d::same(t, "enc.conv_out", top, config.hidden_tokens, 3, rng)?;
        let encoder = Encoder {
            stem,
            levels,
            middle,
            norm_out,
            conv_out,
        };

        let (h, p, l) = (config.hidden_dim, config.projector_dim, config.latent_dim);
        let mu_proj = MlpProjector::new(t, "mu_proj", &[h, p, p, l], rng)?;
        let log_var_proj = MlpProjector::new(t, "log_var_proj", &[h, p, p, l], rng)?;
        let post_proj = MlpProjector::new(t, "post_proj", &[l, p, p, h], rng)?;

        let conv_in = Conv1d::same(t, "dec.conv_in", config.hidden_tokens, top, 3, rng)?;
        let dmiddle = MiddleBlock::new(t, "dec.mid", top, rng)?;
        let mut dlevels = Vec::new();
        for i in (1..=n_levels).rev() {
            let resample = if i <= config.num_down_blocks {
                Some(Conv1d::same(t, &format!("dec.level{i}.up"), c(i), c(i), 3, rng)?)
            } else {
                None
            };
            let mut blocks = Vec::new();
            for b in 0..config.num_res_blocks {
                let c_in = if b == 0 { c(i) } else { c(i - 1) };
                blocks.push(ResnetBlock::new(t, &format!("dec.level{i}.res{b}"), c_in, c(i - 1), rng)?);
            }
            dlevels.push(Level { blocks, resample });
        }
        let dnorm = LayerNorm::new(t, "dec.norm_out", c(0))?;
        let dconv = Conv1d::same(t, "dec.conv_out", c(0), 1, 3, rng)?;
        let decoder = Decoder {
            conv_in,
            middle: dmiddle,
            levels: dlevels,
            norm_out: dnorm,
            conv_out: dconv,
        };

        Ok(Self {
            config: config.clone(),
            tree,
            encoder,
            mu_proj,
            log_var_proj,
            post_proj,
            decoder,
        })
    }

    /// Records the encoder on `x` (`1 × V`) and returns the token grid.
    pub fn encode_var(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let t = &self.tree;
        let xv = g.value(x);
        if xv.nrows() != 1 || xv.ncols() < 2 {
            return Err(Error::Shape(format!(
                "encoder input must be 1 × V with V >= 2, got {:?}",
                xv.dim()
            )));
        }
        if xv.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                component: "encoder input".into(),
            });
        }
        let e = &self.encoder;
        let mut h = e.stem.forward(g, t, x)?;
        h = g.adaptive_max_pool(h, self.config.pooled_len)?;
        for level in &e.levels {
            for block in &level.blocks {
                h = block.forward(g, t, h)?;
            }
            if let Some(down) = &level.resample {
                h = down.forward(g, t, h)?;
            }
        }
        h = e.middle.forward(g, t, h)?;
        h = e.norm_out.forward_channels(g, t, h)?;
        h = g.silu(h);
        e.conv_out.forward(g, t, h)
    }

    /// Records both projectors; `log_var` is clamped to
    /// [`LOG_VAR_MIN`, `LOG_VAR_MAX`].
    pub fn posterior_var(&self, g: &mut Graph, hidden: Var) -> Result<(Var, Var)> {
        let mu = self.mu_proj.forward(g, &self.tree, hidden)?;
        let raw = self.log_var_proj.forward(g, &self.tree, hidden)?;
        Ok((mu, g.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX)))
    }

    /// Records the decoder on a `tokens × latent_dim` latent.
    pub fn decode_var(&self, g: &mut Graph, z: Var, v_out: usize) -> Result<Var> {
        let t = &self.tree;
        let (rows, cols) = g.value(z).dim();
        if (rows, cols) != (self.config.hidden_tokens, self.config.latent_dim) {
            return Err(Error::Shape(format!(
                "latent {:?} does not match ({}, {})",
                (rows, cols),
                self.config.hidden_tokens,
                self.config.latent_dim
            )));
        }
        let d = &self.decoder;
        let mut h = self.post_proj.forward(g, t, z)?;
        h = d.conv_in.forward(g, t, h)?;
        h = d.middle.forward(g, t, h)?;
        for level in &d.levels {
            if let Some(up) = &level.resample {
                h = g.upsample2(h);
                h = up.forward(g, t, h)?;
            }
            for block in &level.blocks {
                h = block.forward(g, t, h)?;
            }
        }
        h = d.norm_out.forward_channels(g, t, h)?;
        h = g.silu(h);
        h = g.linear_resample(h, v_out)?;
        d.conv_out.forward(g, t, h)
    }

    /// Full forward pass. With `eps = None`, or for a deterministic model,
    /// `z` is the posterior mean.
    pub fn record(&self, g: &mut Graph, x: Var, eps: Option<&Mat>, v_out: usize) -> Result<VaeVars> {
        let hidden = self.encode_var(g, x)?;
        let (mu, log_var) = self.posterior_var(g, hidden)?;
        let z = match eps {
            Some(eps) if self.config.variational => {
                if eps.dim() != g.value(mu).dim() {
                    return Err(Error::Shape(format!(
                        "noise {:?} vs latent {:?}",
                        eps.dim(),
                        g.value(mu).dim()
                    )));
                }
                let half = g.scale(log_var, 0.5);
                let sd = g.exp(half);
                let e = g.input(eps.clone());
                let noise = g.mul(sd, e)?;
                g.add(mu, noise)?
            }
            _ => mu,
        };
        let x_hat = self.decode_var(g, z, v_out)?;
        Ok(VaeVars {
            hidden,
            mu,
            log_var,
            z,
            x_hat,
        })
    }

    pub fn encode(&self, fmri: &Mat) -> Result<Mat> {
        let mut g = Graph::new();
        let x = g.input(fmri.clone());
        let h = self.encode_var(&mut g, x)?;
        Ok(g.value(h).clone())
    }

    pub fn posterior(&self, hidden: &Mat) -> Result<LatentGaussian> {
        if hidden.dim() != (self.config.hidden_tokens, self.config.hidden_dim) {
            return Err(Error::Shape(format!(
                "hidden grid {:?} does not match ({}, {})",
                hidden.dim(),
                self.config.hidden_tokens,
                self.config.hidden_dim
            )));
        }
        let mut g = Graph::new();
        let h = g.input(hidden.clone());
        let (mu, lv) = self.posterior_var(&mut g, h)?;
        Ok(LatentGaussian {
            mu: g.value(mu).clone(),
            log_var: g.value(lv).clone(),
        })
    }

    /// Posterior of a `1 × V` signal.
    pub fn infer(&self, fmri: &Mat) -> Result<LatentGaussian> {
        self.posterior(&self.encode(fmri)?)
    }

    /// Decodes a latent to a `1 × v_out` signal.
    pub fn decode(&self, z: &Mat, v_out: usize) -> Result<Mat> {
        let mut g = Graph::new();
        let zv = g.input(z.clone());
        let out = self.decode_var(&mut g, zv, v_out)?;
        Ok(g.value(out).clone())
    }

    /// Encode, sample (posterior mean for a deterministic model), decode to
    /// the input's length.
    pub fn forward<R: Rng + ?Sized>(&self, fmri: &Mat, rng: &mut R) -> Result<VaeOutput> {
        let posterior = self.infer(fmri)?;
        let z = if self.config.variational {
            reparameterize(&posterior, rng)?
        } else {
            posterior.mu.clone()
        };
        let fmri_hat = self.decode(&z, fmri.ncols())?;
        Ok(VaeOutput {
            fmri_hat,
            z,
            posterior,
        })
    }

    /// Writes `model.json` with the configuration plus the parameter files.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.tree.save(dir)?;
        write_json(
            &dir.join("model.json"),
            &ModelStamp {
                kind: "brainvae".into(),
                config: self.config.clone(),
            },
        )
    }

    /// Rebuilds the architecture from `model.json` and loads the parameters,
    /// failing if they do not fit.
    pub fn load(dir: &Path) -> Result<Self> {
        let stamp: ModelStamp = read_json(&dir.join("model.json"))?;
        if stamp.kind != "brainvae" {
            return Err(Error::Config(format!(
                "{} holds a {} checkpoint, not brainvae",
                dir.display(),
                stamp.kind
            )));
        }
        let mut model = Self::new(&stamp.config)?;
        model.tree.assign_from(&ParamTree::load(dir)?)?;
        Ok(model)
    }
}

/// Shapes along the model for a given input length, computed without
/// building parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeTrace {
    pub pooled: (usize, usize),
    pub hidden: (usize, usize),
    pub latent: (usize, usize),
    pub decoder_top: (usize, usize),
    pub output: (usize, usize),
}

pub fn shape_trace(config: &ModelConfig, v_in: usize, v_out: usize) -> Result<ShapeTrace> {
    config.validate()?;
    if v_in < 2 || v_out < 2 {
        return Err(Error::Shape("signal lengths must be >= 2".into()));
    }
    let stem = crate::autograd::ConvGeom {
        kernel: 7,
        stride: 1,
        pad: 3,
    };
    stem.out_len(v_in)?;
    let down = crate::autograd::ConvGeom {
        kernel: 3,
        stride: 2,
        pad: 1,
    };
    let mut len = config.pooled_len;
    for _ in 0..config.num_down_blocks {
        len = down.out_len(len)?;
    }
    let top = config.channels(config.num_levels());
    Ok(ShapeTrace {
        pooled: (config.channels(0), config.pooled_len),
        hidden: (config.hidden_tokens, len),
        latent: (config.hidden_tokens, config.latent_dim),
        decoder_top: (top, config.hidden_dim),
        output: (1, v_out),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            voxel_counts_by_subject: [(0, 40), (1, 33)].into(),
            pooled_len: 16,
            base_channels: 2,
            ch_mult: vec![1, 2],
            num_res_blocks: 1,
            num_down_blocks: 1,
            hidden_tokens: 3,
            hidden_dim: 8,
            latent_dim: 4,
            projector_dim: 6,
            s2n_heads: 2,
            ..ModelConfig::desk()
        }
    }

    fn signal(v: usize, seed: u64) -> Mat {
        standard_normal(&mut ChaCha8Rng::seed_from_u64(seed), 1, v)
    }

    #[test]
    fn hidden_shape_is_length_independent() {
        let vae = BrainVae::new(&ModelConfig::desk()).unwrap();
        for v in [100, 480, 512, 1000, 20000] {
            let h = vae.encode(&signal(v, v as u64)).unwrap();
            assert_eq!(h.dim(), (16, 64));
            let trace = shape_trace(&vae.config, v, v).unwrap();
            assert_eq!(trace.hidden, h.dim());
        }
    }

    #[test]
    fn decode_hits_requested_length() {
        let vae = BrainVae::new(&ModelConfig::desk()).unwrap();
        let z = Mat::zeros((16, 32));
        for v in [2, 97, 480, 512, 15724] {
            assert_eq!(vae.decode(&z, v).unwrap().dim(), (1, v));
        }
        assert!(vae.decode(&Mat::zeros((16, 31)), 10).is_err());
    }

    #[test]
    fn paper_shape_trace() {
        let c = ModelConfig::paper();
        let t = shape_trace(&c, 15724, 15724).unwrap();
        assert_eq!(t.hidden, (256, 4096));
        assert_eq!(t.latent, (256, 1664));
        assert_eq!(t.pooled, (128, 8192));
        for v in [100, 1000, 20000] {
            assert_eq!(shape_trace(&c, v, 13039).unwrap().hidden, (256, 4096));
            assert_eq!(shape_trace(&c, v, 13039).unwrap().output, (1, 13039));
        }
    }

    #[test]
    fn zero_projectors_give_standard_posterior() {
        let mut vae = BrainVae::new(&tiny()).unwrap();
        let names: Vec<String> = vae
            .tree
            .iter()
            .filter(|(_, l)| l.name.starts_with("mu_proj") || l.name.starts_with("log_var_proj"))
            .map(|(_, l)| l.name.clone())
            .collect();
        for n in names {
            let id = vae.tree.id(&n).unwrap();
            vae.tree.value_mut(id).fill(0.0);
        }
        let g = vae.infer(&signal(40, 1)).unwrap();
        assert!(g.mu.iter().all(|&v| v == 0.0));
        assert!(g.log_var.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_var_clamp() {
        let mut vae = BrainVae::new(&tiny()).unwrap();
        let b = vae.tree.id("log_var_proj.fc2.b").unwrap();
        let w = vae.tree.id("log_var_proj.fc2.w").unwrap();
        vae.tree.value_mut(w).fill(0.0);
        vae.tree.value_mut(b).fill(25.0);
        let g = vae.infer(&signal(40, 2)).unwrap();
        assert!(g.log_var.iter().all(|&v| v == 20.0));
        let direct = LatentGaussian::new(Mat::zeros((1, 2)), Mat::from_elem((1, 2), -40.0)).unwrap();
        assert!(direct.log_var.iter().all(|&v| v == -30.0));
    }

    #[test]
    fn reparameterize_edges() {
        let g = LatentGaussian::new(
            Mat::from_elem((2, 3), 0.7),
            Mat::from_elem((2, 3), LOG_VAR_MIN),
        )
        .unwrap();
        assert_eq!(reparameterize_with(&g, &Mat::zeros((2, 3))).unwrap(), g.mu);
        let z = reparameterize(&g, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(z.iter().all(|v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn reparameterize_moments() {
        let g = LatentGaussian::new(Mat::from_elem((1, 1), 1.0), Mat::zeros((1, 1))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| reparameterize(&g, &mut rng).unwrap()[[0, 0]])
            .collect();
        let m = crate::metrics::mean(&draws);
        let var = crate::metrics::sample_sd(&draws).powi(2);
        assert!((m - 1.0).abs() <= 3.0 / (n as f64).sqrt(), "{m}");
        assert!((var - 1.0).abs() <= 0.05, "{var}");
    }

    #[test]
    fn forward_is_deterministic_given_seed() {
        let vae = BrainVae::new(&tiny()).unwrap();
        let x = signal(40, 4);
        let a = vae.forward(&x, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = vae.forward(&x, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.fmri_hat, b.fmri_hat);
        assert_eq!(a.z, b.z);
        assert_eq!(a.fmri_hat.dim(), (1, 40));
    }

    #[test]
    fn untrained_reconstruction_is_nearly_flat() {
        let vae = BrainVae::new(&ModelConfig::desk()).unwrap();
        let x = signal(512, 6);
        let out = vae.forward(&x, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let pred = out.fmri_hat.row(0).to_vec();
        let target = x.row(0).to_vec();
        let pred_sd = crate::metrics::sample_sd(&pred);
        let target_var = crate::metrics::sample_sd(&target).powi(2);
        assert!(pred_sd < 0.1 * target_var.sqrt(), "{pred_sd}");
        let mse = crate::metrics::mse(&pred, &target);
        let mean_sq: f64 = target.iter().map(|v| v * v).sum::<f64>() / target.len() as f64;
        assert!((mse - mean_sq).abs() < 0.1 * mean_sq, "{mse} vs {mean_sq}");
    }

    #[test]
    fn decoder_gradient_wrt_latent() {
        let vae = BrainVae::new(&tiny()).unwrap();
        let z = standard_normal(&mut ChaCha8Rng::seed_from_u64(8), 3, 4);
        let err = gradcheck::check_input_grad(&z, |g, zv| vae.decode_var(g, zv, 40)).unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn checkpoint_round_trip_and_compatibility() {
        let vae = BrainVae::new(&tiny()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        vae.save(dir.path()).unwrap();
        let back = BrainVae::load(dir.path()).unwrap();
        assert_eq!(back.config, vae.config);
        let x = signal(40, 9);
        let a = vae.encode(&x).unwrap();
        let b = back.encode(&x).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| (p - q).abs() < 1e-4));

        let mut stamp: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("model.json")).unwrap()).unwrap();
        stamp["config"]["projector_dim"] = 7.into();
        std::fs::write(dir.path().join("model.json"), stamp.to_string()).unwrap();
        assert!(matches!(BrainVae::load(dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let vae = BrainVae::new(&tiny()).unwrap();
        let mut x = signal(40, 10);
        x[[0, 3]] = f64::NAN;
        assert!(matches!(vae.encode(&x), Err(Error::NonFinite { .. })));
        assert!(vae.encode(&Mat::zeros((1, 1))).is_err());
    }

    #[test]
    #[ignore = "allocates the full-scale model; run with --ignored"]
    fn paper_scale_forward_shapes() {
        let mut c = ModelConfig::paper();
        c.voxel_counts_by_subject = [(1, 15724)].into();
        let vae = BrainVae::new(&c).unwrap();
        let h = vae.encode(&signal(15724, 1)).unwrap();
        assert_eq!(h.dim(), (256, 4096));
        let g = vae.posterior(&h).unwrap();
        assert_eq!(g.mu.dim(), (256, 1664));
        assert_eq!(vae.decode(&g.mu, 13039).unwrap().dim(), (1, 13039));
    }
}
