//! Semantic-to-neural mapper: a pre-norm Transformer from semantic token
//! grids to the mean of the fMRI latent distribution.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::blocks::{LayerNorm, Linear, SelfAttention};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{read_json, write_json, ParamTree};
use crate::seed::rng_for;

/// Which mapper leaves are trainable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "mlp-only")]
    MlpOnly,
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "mlp-only" => Ok(Self::MlpOnly),
            other => Err(Error::Config(format!(
                "unknown partition mode {other:?} (expected full or mlp-only)"
            ))),
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::MlpOnly => "mlp-only",
        })
    }
}

pub const PE_LEAF: &str = "pe";

pub fn is_mlp_leaf(name: &str) -> bool {
    name.starts_with("layer") && name.contains(".mlp.")
}

/// Fixed sinusoidal table, `tokens × dim`.
pub fn sinusoidal_encoding(tokens: usize, dim: usize) -> Mat {
    Mat::from_shape_fn((tokens, dim), |(t, j)| {
        let freq = 10_000f64.powf(-((j - j % 2) as f64) / dim as f64);
        let angle = t as f64 * freq;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Clone, Debug)]
struct Layer {
    attn: SelfAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Serialize, Deserialize)]
struct MapperStamp {
    kind: String,
    layers: usize,
    heads: usize,
    tokens: usize,
    dim: usize,
    partition: Partition,
    config: ModelConfig,
}

#[derive(Clone, Debug)]
pub struct S2nMapper {
    pub config: ModelConfig,
    pub tree: ParamTree,
    pub partition: Partition,
    pe: crate::params::LeafId,
    layers: Vec<Layer>,
    norm_f: LayerNorm,
    out: Linear,
}

impl S2nMapper {
    /// Fresh mapper over `hidden_tokens × latent_dim` grids. The output
    /// projection starts at zero, so an untrained mapper predicts the prior
    /// mean.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (tokens, dim) = (config.hidden_tokens, config.latent_dim);
        let mut rng = rng_for(config.seed, &[0x0073_326e]);
        let rng = &mut rng;
        let mut tree = ParamTree::new();
        let pe = tree.insert(PE_LEAF, sinusoidal_encoding(tokens, dim), false)?;
        let hidden = dim * config.s2n_mlp_ratio;
        let mut layers = Vec::new();
        for i in 0..config.s2n_layers {
            layers.push(Layer {
                attn: SelfAttention::new(&mut tree, &format!("layer{i}.attn"), dim, config.s2n_heads, rng)?,
                norm2: LayerNorm::new(&mut tree, &format!("layer{i}.norm2"), dim)?,
                fc1: Linear::new(&mut tree, &format!("layer{i}.mlp.fc1"), dim, hidden, rng)?,
                fc2: Linear::new(&mut tree, &format!("layer{i}.mlp.fc2"), hidden, dim, rng)?,
            });
        }
        let norm_f = LayerNorm::new(&mut tree, "norm_f", dim)?;
        let out = Linear::new(&mut tree, "out", dim, dim, rng)?;
        tree.value_mut(out.w).fill(0.0);
        let mut mapper = Self {
            config: config.clone(),
            tree,
            partition: Partition::Full,
            pe,
            layers,
            norm_f,
            out,
        };
        mapper.set_partition(Partition::Full);
        Ok(mapper)
    }

    /// Marks leaves trainable per `mode`; the positional table never is.
    pub fn set_partition(&mut self, mode: Partition) {
        match mode {
            Partition::Full => self.tree.set_trainable_where(|n| n != PE_LEAF),
            Partition::MlpOnly => self.tree.set_trainable_where(is_mlp_leaf),
        }
        self.partition = mode;
    }

    /// Trainable and frozen leaf names.
    pub fn partition_names(&self) -> (Vec<String>, Vec<String>) {
        let (mut train, mut frozen) = (Vec::new(), Vec::new());
        for (_, leaf) in self.tree.iter() {
            if leaf.trainable {
                train.push(leaf.name.clone());
            } else {
                frozen.push(leaf.name.clone());
            }
        }
        (train, frozen)
    }

    fn check_input(&self, shape: (usize, usize)) -> Result<()> {
        let want = (self.config.hidden_tokens, self.config.latent_dim);
        if shape != want {
            return Err(Error::Shape(format!(
                "mapper expects {want:?} grids, got {shape:?}"
            )));
        }
        Ok(())
    }

    /// Residual stream after the last block, before the final norm.
    pub fn record_stream(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.check_input(g.value(x).dim())?;
        let t = &self.tree;
        let pe = g.param(t, self.pe);
        let mut h = g.add(x, pe)?;
        for layer in &self.layers {
            h = layer.attn.forward(g, t, h)?;
            let n = layer.norm2.forward(g, t, h)?;
            let a = layer.fc1.forward(g, t, n)?;
            let a = g.gelu(a);
            let m = layer.fc2.forward(g, t, a)?;
            h = g.add(h, m)?;
        }
        Ok(h)
    }

    pub fn record(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.record_stream(g, x)?;
        let n = self.norm_f.forward(g, &self.tree, h)?;
        self.out.forward(g, &self.tree, n)
    }

    pub fn forward(&self, z_clip: &Mat) -> Result<Mat> {
        let mut g = Graph::new();
        let x = g.input(z_clip.clone());
        let out = self.record(&mut g, x)?;
        Ok(g.value(out).clone())
    }

    pub fn residual_stream(&self, z_clip: &Mat) -> Result<Mat> {
        let mut g = Graph::new();
        let x = g.input(z_clip.clone());
        let out = self.record_stream(&mut g, x)?;
        Ok(g.value(out).clone())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.tree.save(dir)?;
        write_json(
            &dir.join("s2n.json"),
            &MapperStamp {
                kind: "s2n".into(),
                layers: self.config.s2n_layers,
                heads: self.config.s2n_heads,
                tokens: self.config.hidden_tokens,
                dim: self.config.latent_dim,
                partition: self.partition,
                config: self.config.clone(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let stamp: MapperStamp = read_json(&dir.join("s2n.json"))?;
        let c = &stamp.config;
        if stamp.kind != "s2n"
            || (stamp.layers, stamp.heads, stamp.tokens, stamp.dim)
                != (c.s2n_layers, c.s2n_heads, c.hidden_tokens, c.latent_dim)
        {
            return Err(Error::Config(format!(
                "{} does not hold a consistent mapper checkpoint",
                dir.display()
            )));
        }
        let mut mapper = Self::new(c)?;
        mapper.tree.assign_from(&ParamTree::load(dir)?)?;
        mapper.partition = stamp.partition;
        Ok(mapper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::params::truncated_normal;
    use crate::vae::standard_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            hidden_tokens: 4,
            latent_dim: 8,
            s2n_heads: 2,
            s2n_layers: 2,
            ..ModelConfig::desk()
        }
    }

    fn randomize_out(m: &mut S2nMapper) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (r, c) = m.tree.value(m.out.w).dim();
        *m.tree.value_mut(m.out.w) = truncated_normal(&mut rng, r, c, 0.3);
    }

    #[test]
    fn output_shape_and_zero_start() {
        let m = S2nMapper::new(&ModelConfig::desk()).unwrap();
        let x = standard_normal(&mut ChaCha8Rng::seed_from_u64(1), 16, 32);
        let y = m.forward(&x).unwrap();
        assert_eq!(y.dim(), (16, 32));
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(m.forward(&Mat::zeros((16, 31))).is_err());
    }

    #[test]
    fn zero_blocks_pass_input_plus_pe() {
        let mut m = S2nMapper::new(&small()).unwrap();
        for name in ["attn.out.w", "attn.out.b", "mlp.fc2.w", "mlp.fc2.b"] {
            for i in 0..2 {
                let id = m.tree.id(&format!("layer{i}.{name}")).unwrap();
                m.tree.value_mut(id).fill(0.0);
            }
        }
        let x = standard_normal(&mut ChaCha8Rng::seed_from_u64(2), 4, 8);
        let stream = m.residual_stream(&x).unwrap();
        assert_eq!(stream, &x + &sinusoidal_encoding(4, 8));
    }

    #[test]
    fn deterministic_outputs() {
        let mut a = S2nMapper::new(&small()).unwrap();
        let mut b = S2nMapper::new(&small()).unwrap();
        randomize_out(&mut a);
        randomize_out(&mut b);
        let x = standard_normal(&mut ChaCha8Rng::seed_from_u64(3), 4, 8);
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    }

    #[test]
    fn paper_head_width() {
        let c = ModelConfig::paper();
        assert_eq!(c.latent_dim % c.s2n_heads, 0);
        assert_eq!(sinusoidal_encoding(256, 1664).dim(), (256, 1664));
    }

    #[test]
    fn partitions() {
        let mut c = small();
        c.s2n_layers = 8;
        let mut m = S2nMapper::new(&c).unwrap();
        m.set_partition(Partition::MlpOnly);
        let (train, frozen) = m.partition_names();
        assert_eq!(train.len(), 8 * 4);
        assert!(train.iter().all(|n| is_mlp_leaf(n)));
        assert!(frozen.contains(&PE_LEAF.to_string()));
        m.set_partition(Partition::Full);
        let (train, frozen) = m.partition_names();
        assert_eq!(frozen, vec![PE_LEAF.to_string()]);
        assert_eq!(train.len(), m.tree.len() - 1);
        assert!("bogus".parse::<Partition>().is_err());
        assert_eq!("mlp-only".parse::<Partition>().unwrap(), Partition::MlpOnly);
    }

    fn permute_rows(x: &Mat, perm: &[usize]) -> Mat {
        Mat::from_shape_fn(x.dim(), |(i, j)| x[[perm[i], j]])
    }

    #[test]
    fn equivariance_depends_on_pe() {
        let mut m = S2nMapper::new(&small()).unwrap();
        randomize_out(&mut m);
        let x = standard_normal(&mut ChaCha8Rng::seed_from_u64(4), 4, 8);
        let perm = [2, 0, 3, 1];
        let with_pe_a = permute_rows(&m.forward(&x).unwrap(), &perm);
        let with_pe_b = m.forward(&permute_rows(&x, &perm)).unwrap();
        assert!((&with_pe_a - &with_pe_b).iter().any(|v| v.abs() > 1e-6));

        let pe = m.tree.id(PE_LEAF).unwrap();
        m.tree.value_mut(pe).fill(0.0);
        let a = permute_rows(&m.forward(&x).unwrap(), &perm);
        let b = m.forward(&permute_rows(&x, &perm)).unwrap();
        assert!((&a - &b).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = S2nMapper::new(&small()).unwrap();
        randomize_out(&mut m);
        let x = standard_normal(&mut ChaCha8Rng::seed_from_u64(5), 4, 8);
        let err = gradcheck::check_input_grad(&x, |g, v| m.record(g, v)).unwrap();
        assert!(err <= 1e-4, "{err}");
        let err = gradcheck::check_param_grads(&m.tree, &x, |g, tree, v| {
            let mut probe = m.clone();
            probe.tree = tree.clone();
            probe.record(g, v)
        })
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = S2nMapper::new(&small()).unwrap();
        m.set_partition(Partition::MlpOnly);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = S2nMapper::load(dir.path()).unwrap();
        assert_eq!(back.partition, Partition::MlpOnly);
        assert_eq!(back.partition_names(), m.partition_names());
    }
}
