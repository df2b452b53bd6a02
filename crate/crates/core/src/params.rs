//! Named parameter leaves and their on-disk checkpoint format.
//!
//! A checkpoint directory holds `params.json` (leaf names, shapes and
//! trainable flags, in order) and `params.bin` (every leaf as little-endian
//! `f32`, concatenated in manifest order, row-major).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::error::{Error, Result};

/// Index of a leaf inside a [`ParamTree`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LeafId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Leaf {
    pub name: String,
    pub value: Mat,
    pub trainable: bool,
}

/// Ordered, uniquely named collection of parameter matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamTree {
    leaves: Vec<Leaf>,
    index: HashMap<String, LeafId>,
}

/// Per-leaf gradient accumulator aligned with a [`ParamTree`].
#[derive(Clone, Debug)]
pub struct ParamGrads {
    grads: Vec<Option<Mat>>,
}

impl ParamGrads {
    pub fn new(tree: &ParamTree) -> Self {
        Self {
            grads: vec![None; tree.len()],
        }
    }

    pub fn add(&mut self, id: LeafId, g: &Mat) {
        match &mut self.grads[id.0] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn get(&self, id: LeafId) -> Option<&Mat> {
        self.grads[id.0].as_ref()
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.grads.iter_mut().flatten() {
            *g *= k;
        }
    }

    /// Name of the first leaf whose gradient holds a non-finite entry.
    pub fn first_non_finite<'a>(&self, tree: &'a ParamTree) -> Option<&'a str> {
        self.grads.iter().enumerate().find_map(|(i, g)| {
            g.as_ref()
                .filter(|g| g.iter().any(|v| !v.is_finite()))
                .map(|_| tree.leaves[i].name.as_str())
        })
    }
}

/// Leaf values in tree order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    leaves: Vec<(String, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct LeafMeta {
    name: String,
    shape: [usize; 2],
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct ParamsManifest {
    dtype: String,
    leaves: Vec<LeafMeta>,
}

impl ParamTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn insert(&mut self, name: &str, value: Mat, trainable: bool) -> Result<LeafId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = LeafId(self.leaves.len());
        self.leaves.push(Leaf {
            name: name.to_string(),
            value,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<LeafId> {
        self.index.get(name).copied()
    }

    pub fn leaf(&self, id: LeafId) -> &Leaf {
        &self.leaves[id.0]
    }

    pub fn value(&self, id: LeafId) -> &Mat {
        &self.leaves[id.0].value
    }

    pub fn value_mut(&mut self, id: LeafId) -> &mut Mat {
        &mut self.leaves[id.0].value
    }

    pub fn ids(&self) -> impl Iterator<Item = LeafId> {
        (0..self.leaves.len()).map(LeafId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (LeafId, &Leaf)> {
        self.leaves.iter().enumerate().map(|(i, l)| (LeafId(i), l))
    }

    pub fn set_trainable(&mut self, id: LeafId, trainable: bool) {
        self.leaves[id.0].trainable = trainable;
    }

    /// Sets every leaf's flag from a predicate on its name.
    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool) {
        for leaf in &mut self.leaves {
            leaf.trainable = pred(&leaf.name);
        }
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.leaves
            .iter()
            .filter(|l| l.trainable)
            .map(|l| l.name.as_str())
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.leaves.iter().map(|l| l.value.len()).sum()
    }

    /// True when both trees hold the same names and bit-identical values.
    pub fn bit_identical(&self, other: &ParamTree, pred: impl Fn(&str) -> bool) -> bool {
        self.leaves
            .iter()
            .filter(|l| pred(&l.name))
            .all(|l| match other.id(&l.name) {
                Some(id) => {
                    let o = other.value(id);
                    o.dim() == l.value.dim()
                        && o.iter()
                            .zip(l.value.iter())
                            .all(|(a, b)| a.to_bits() == b.to_bits())
                }
                None => false,
            })
    }

    /// Exact copy of every leaf value, for best-model tracking and resumable
    /// training state.
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            leaves: self
                .leaves
                .iter()
                .map(|l| (l.name.clone(), l.value.iter().copied().collect()))
                .collect(),
        }
    }

    pub fn restore(&mut self, snap: &Snapshot) -> Result<()> {
        if snap.leaves.len() != self.leaves.len() {
            return Err(Error::Config(format!(
                "snapshot has {} leaves, tree has {}",
                snap.leaves.len(),
                self.leaves.len()
            )));
        }
        for (leaf, (name, values)) in self.leaves.iter().zip(&snap.leaves) {
            if &leaf.name != name || leaf.value.len() != values.len() {
                return Err(Error::Config(format!("snapshot leaf {name} does not match {}", leaf.name)));
            }
        }
        for (leaf, (_, values)) in self.leaves.iter_mut().zip(&snap.leaves) {
            for (dst, src) in leaf.value.iter_mut().zip(values) {
                *dst = *src;
            }
        }
        Ok(())
    }

    /// Copies values and flags from a tree with the same leaf names and shapes.
    pub fn assign_from(&mut self, other: &ParamTree) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} leaves, model expects {}",
                other.len(),
                self.len()
            )));
        }
        for (mine, theirs) in self.leaves.iter().zip(&other.leaves) {
            if mine.name != theirs.name || mine.value.dim() != theirs.value.dim() {
                return Err(Error::Config(format!(
                    "checkpoint leaf {} {:?} does not match model leaf {} {:?}",
                    theirs.name,
                    theirs.value.dim(),
                    mine.name,
                    mine.value.dim()
                )));
            }
        }
        for (mine, theirs) in self.leaves.iter_mut().zip(&other.leaves) {
            mine.value.assign(&theirs.value);
            mine.trainable = theirs.trainable;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = ParamsManifest {
            dtype: "f32-le".into(),
            leaves: self
                .leaves
                .iter()
                .map(|l| LeafMeta {
                    name: l.name.clone(),
                    shape: [l.value.nrows(), l.value.ncols()],
                    trainable: l.trainable,
                })
                .collect(),
        };
        let mut bytes = Vec::with_capacity(self.num_scalars() * 4);
        for l in &self.leaves {
            for v in l.value.iter() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let json_path = dir.join("params.json");
        fs::write(&json_path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(&json_path, e))?;
        let bin_path = dir.join("params.bin");
        fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let json_path = dir.join("params.json");
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let manifest: ParamsManifest = serde_json::from_str(&text)?;
        if manifest.dtype != "f32-le" {
            return Err(Error::format("params.json", format!("dtype {}", manifest.dtype)));
        }
        let bin_path = dir.join("params.bin");
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let mut tree = ParamTree::new();
        let mut off = 0;
        for meta in manifest.leaves {
            let n = meta.shape[0] * meta.shape[1];
            let end = off + 4 * n;
            if end > bytes.len() {
                return Err(Error::format(
                    format!("leaf {}", meta.name),
                    format!("params.bin ends at byte {} before {end}", bytes.len()),
                ));
            }
            let data = read_f32s(&bytes[off..end]);
            off = end;
            let value = Mat::from_shape_vec((meta.shape[0], meta.shape[1]), data)
                .map_err(|e| Error::format(format!("leaf {}", meta.name), e.to_string()))?;
            tree.insert(&meta.name, value, meta.trainable)?;
        }
        if off != bytes.len() {
            return Err(Error::format(
                "params.bin",
                format!("{} trailing bytes", bytes.len() - off),
            ));
        }
        Ok(tree)
    }
}

/// Writes `value` as pretty-printed JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a JSON file into `T`.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn read_f32s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

pub const INIT_SD: f64 = 0.02;

/// Normal(0, sd²) truncated at ±2 sd by resampling.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, sd: f64) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || loop {
        let v: f64 = StandardNormal.sample(rng);
        if v.abs() <= 2.0 {
            break v * sd;
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut t = ParamTree::new();
        t.insert("a", Mat::zeros((1, 1)), true).unwrap();
        assert!(t.insert("a", Mat::zeros((1, 1)), true).is_err());
    }

    #[test]
    fn toggling_trainable_keeps_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = ParamTree::new();
        let id = t.insert("w", truncated_normal(&mut rng, 3, 4, 0.02), true).unwrap();
        let before = t.value(id).clone();
        t.set_trainable(id, false);
        t.set_trainable_where(|_| true);
        assert_eq!(t.value(id), &before);
    }

    #[test]
    fn truncated_normal_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = truncated_normal(&mut rng, 50, 50, 0.02);
        assert!(m.iter().all(|v| v.abs() <= 0.04));
    }

    #[test]
    fn checkpoint_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = ParamTree::new();
        t.insert("a.w", Mat::from_shape_vec((2, 2), vec![0.5, -1.25, 3.0, 4.0]).unwrap(), true)
            .unwrap();
        t.insert("pe", Mat::from_elem((1, 3), 0.25), false).unwrap();
        t.save(dir.path()).unwrap();
        let back = ParamTree::load(dir.path()).unwrap();
        assert!(back.bit_identical(&t, |_| true));
        assert!(!back.leaf(back.id("pe").unwrap()).trainable);

        let bin = dir.path().join("params.bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        let err = ParamTree::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("pe"), "{err}");
    }
}
