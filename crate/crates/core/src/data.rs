//! Dataset containers, sampling from the synthetic world, session subsetting
//! and the on-disk dataset format.
//!
//! On disk a dataset is a directory:
//!
//! * `manifest.json` lists subjects with voxel counts, the embedding shape,
//!   every record (subject, stimulus, trial, session, split, offset) and
//!   every stimulus embedding offset. Offsets count `f32` elements and are
//!   authoritative.
//! * `fmri.bin` holds the records as little-endian `f32`, one section per
//!   subject in ascending subject order, each record `V_s` values long.
//! * `emb.bin` holds each stimulus embedding as row-major `m × d` `f32`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::config::SubjectId;
use crate::error::{Error, Result};
use crate::world::SyntheticWorld;

pub type StimulusId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One trial's voxel response for one subject and one stimulus.
#[derive(Clone, Debug, PartialEq)]
pub struct FmriSample {
    pub subject: SubjectId,
    pub stimulus: StimulusId,
    pub trial: u32,
    pub split: Split,
    pub session: u32,
    pub values: Vec<f32>,
}

impl FmriSample {
    /// Values as a `1 × V` matrix.
    pub fn to_mat(&self) -> Mat {
        Mat::from_shape_fn((1, self.values.len()), |(_, j)| self.values[j] as f64)
    }
}

/// `m × d` semantic token grid for one stimulus.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticEmbedding {
    pub stimulus: StimulusId,
    pub tokens: Array2<f32>,
}

impl SemanticEmbedding {
    pub fn to_mat(&self) -> Mat {
        self.tokens.mapv(|v| v as f64)
    }

    /// Token-mean pooled vector.
    pub fn pooled(&self) -> Vec<f64> {
        let n = self.tokens.nrows() as f64;
        (0..self.tokens.ncols())
            .map(|j| self.tokens.column(j).iter().map(|&v| v as f64).sum::<f64>() / n)
            .collect()
    }
}

/// Immutable collection of trials with their stimulus embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<FmriSample>,
    embeddings: BTreeMap<StimulusId, SemanticEmbedding>,
    voxel_counts: BTreeMap<SubjectId, usize>,
    n_sessions: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
    pub sessions: u32,
}

impl Dataset {
    /// Validates and assembles a dataset.
    pub fn new(
        samples: Vec<FmriSample>,
        embeddings: BTreeMap<StimulusId, SemanticEmbedding>,
        n_sessions: u32,
    ) -> Result<Self> {
        let mut voxel_counts = BTreeMap::new();
        let mut shape = None;
        for (id, e) in &embeddings {
            if *id != e.stimulus {
                return Err(Error::Shape(format!("embedding keyed {id} holds {}", e.stimulus)));
            }
            if *shape.get_or_insert(e.tokens.dim()) != e.tokens.dim() {
                return Err(Error::Shape(format!("embedding {id} has shape {:?}", e.tokens.dim())));
            }
            if e.tokens.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    component: format!("embedding {id}"),
                });
            }
        }
        for (i, s) in samples.iter().enumerate() {
            if !embeddings.contains_key(&s.stimulus) {
                return Err(Error::Protocol(format!(
                    "sample {i} references stimulus {} without an embedding",
                    s.stimulus
                )));
            }
            let len = *voxel_counts.entry(s.subject).or_insert(s.values.len());
            if len != s.values.len() || len < 2 {
                return Err(Error::Shape(format!(
                    "sample {i} of subject {} has {} voxels, expected {len}",
                    s.subject,
                    s.values.len()
                )));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    component: format!("sample {i}"),
                });
            }
            if s.session >= n_sessions.max(1) {
                return Err(Error::Range(format!(
                    "sample {i} in session {} of {n_sessions}",
                    s.session
                )));
            }
        }
        Ok(Self {
            samples,
            embeddings,
            voxel_counts,
            n_sessions: n_sessions.max(1),
        })
    }

    pub fn samples(&self) -> &[FmriSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn embeddings(&self) -> &BTreeMap<StimulusId, SemanticEmbedding> {
        &self.embeddings
    }

    pub fn embedding(&self, stimulus: StimulusId) -> Result<&SemanticEmbedding> {
        self.embeddings
            .get(&stimulus)
            .ok_or_else(|| Error::Protocol(format!("no embedding for stimulus {stimulus}")))
    }

    pub fn voxel_counts(&self) -> &BTreeMap<SubjectId, usize> {
        &self.voxel_counts
    }

    pub fn n_sessions(&self) -> u32 {
        self.n_sessions
    }

    pub fn embedding_shape(&self) -> Option<(usize, usize)> {
        self.embeddings.values().next().map(|e| e.tokens.dim())
    }

    /// Stimulus ids that appear in at least one sample.
    pub fn stimuli(&self) -> BTreeSet<StimulusId> {
        self.samples.iter().map(|s| s.stimulus).collect()
    }

    pub fn subjects(&self) -> BTreeSet<SubjectId> {
        self.samples.iter().map(|s| s.subject).collect()
    }

    /// Keeps matching samples; embeddings are restricted to their stimuli.
    pub fn filter(&self, keep: impl Fn(&FmriSample) -> bool) -> Dataset {
        let samples: Vec<FmriSample> = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        let stimuli: BTreeSet<_> = samples.iter().map(|s| s.stimulus).collect();
        let embeddings = self
            .embeddings
            .iter()
            .filter(|(id, _)| stimuli.contains(id))
            .map(|(id, e)| (*id, e.clone()))
            .collect();
        let voxel_counts = self
            .voxel_counts
            .iter()
            .filter(|(s, _)| samples.iter().any(|x| x.subject == **s))
            .map(|(s, v)| (*s, *v))
            .collect();
        Dataset {
            samples,
            embeddings,
            voxel_counts,
            n_sessions: self.n_sessions,
        }
    }

    pub fn train(&self) -> Dataset {
        self.filter(|s| s.split == Split::Train)
    }

    pub fn test(&self) -> Dataset {
        self.filter(|s| s.split == Split::Test)
    }

    pub fn for_subject(&self, subject: SubjectId) -> Dataset {
        self.filter(|s| s.subject == subject)
    }

    /// Trials grouped by stimulus, in ascending stimulus order.
    pub fn trials_by_stimulus(&self) -> BTreeMap<StimulusId, Vec<&FmriSample>> {
        let mut out: BTreeMap<StimulusId, Vec<&FmriSample>> = BTreeMap::new();
        for s in &self.samples {
            out.entry(s.stimulus).or_default().push(s);
        }
        out
    }

    /// Samples recorded in the first `n_sessions` sessions.
    pub fn subset_hours(&self, n_sessions: u32) -> Result<Dataset> {
        if n_sessions == 0 || n_sessions > self.n_sessions {
            return Err(Error::Range(format!(
                "requested {n_sessions} sessions of {}",
                self.n_sessions
            )));
        }
        Ok(self.filter(|s| s.session < n_sessions))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (m, d) = self.embedding_shape().unwrap_or((0, 0));

        let mut fmri = Vec::new();
        let mut offsets = vec![0usize; self.samples.len()];
        let mut subjects = Vec::new();
        let mut cursor = 0usize;
        for (&subject, &voxels) in &self.voxel_counts {
            let start = cursor;
            let mut count = 0;
            for (i, s) in self.samples.iter().enumerate() {
                if s.subject != subject {
                    continue;
                }
                offsets[i] = cursor;
                for v in &s.values {
                    fmri.extend_from_slice(&v.to_le_bytes());
                }
                cursor += voxels;
                count += 1;
            }
            subjects.push(SubjectEntry {
                id: subject,
                voxel_count: voxels,
                offset: start,
                records: count,
            });
        }

        let mut emb = Vec::new();
        let mut stimuli = Vec::new();
        for (i, (id, e)) in self.embeddings.iter().enumerate() {
            stimuli.push(StimulusEntry {
                id: *id,
                offset: i * m * d,
            });
            for v in e.tokens.iter() {
                emb.extend_from_slice(&v.to_le_bytes());
            }
        }

        let manifest = Manifest {
            format: FORMAT.into(),
            version: 1,
            dtype: "f32-le".into(),
            m,
            d,
            n_sessions: self.n_sessions,
            subjects,
            records: self
                .samples
                .iter()
                .zip(&offsets)
                .map(|(s, &offset)| RecordEntry {
                    subject: s.subject,
                    stimulus: s.stimulus,
                    trial: s.trial,
                    session: s.session,
                    split: s.split,
                    offset,
                })
                .collect(),
            stimuli,
        };
        write(dir, "manifest.json", serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        write(dir, "fmri.bin", &fmri)?;
        write(dir, "emb.bin", &emb)
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::format("manifest.json", e.to_string()))?;
        if manifest.format != FORMAT || manifest.dtype != "f32-le" {
            return Err(Error::format(
                "manifest.json",
                format!("unsupported format {} / dtype {}", manifest.format, manifest.dtype),
            ));
        }
        let fmri = read_f32_file(&dir.join("fmri.bin"))?;
        let emb = read_f32_file(&dir.join("emb.bin"))?;

        let (m, d) = (manifest.m, manifest.d);
        let mut embeddings = BTreeMap::new();
        for s in &manifest.stimuli {
            let end = s.offset + m * d;
            let slice = emb.get(s.offset..end).ok_or_else(|| {
                Error::format(
                    format!("stimulus {}", s.id),
                    format!("emb.bin holds {} values, need {end}", emb.len()),
                )
            })?;
            let tokens = Array2::from_shape_vec((m, d), slice.to_vec())
                .map_err(|e| Error::format(format!("stimulus {}", s.id), e.to_string()))?;
            embeddings.insert(
                s.id,
                SemanticEmbedding {
                    stimulus: s.id,
                    tokens,
                },
            );
        }

        let voxels: BTreeMap<SubjectId, usize> = manifest
            .subjects
            .iter()
            .map(|s| (s.id, s.voxel_count))
            .collect();
        let mut samples = Vec::with_capacity(manifest.records.len());
        for (i, r) in manifest.records.iter().enumerate() {
            let name = format!(
                "record {i} (subject {}, stimulus {}, trial {})",
                r.subject, r.stimulus, r.trial
            );
            let v = *voxels
                .get(&r.subject)
                .ok_or_else(|| Error::format(&name, "subject missing from manifest"))?;
            let end = r.offset + v;
            let slice = fmri.get(r.offset..end).ok_or_else(|| {
                Error::format(&name, format!("fmri.bin holds {} values, need {end}", fmri.len()))
            })?;
            samples.push(FmriSample {
                subject: r.subject,
                stimulus: r.stimulus,
                trial: r.trial,
                split: r.split,
                session: r.session,
                values: slice.to_vec(),
            });
        }
        Dataset::new(samples, embeddings, manifest.n_sessions)
    }
}

const FORMAT: &str = "v2f-dataset";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    m: usize,
    d: usize,
    n_sessions: u32,
    subjects: Vec<SubjectEntry>,
    records: Vec<RecordEntry>,
    stimuli: Vec<StimulusEntry>,
}

#[derive(Serialize, Deserialize)]
struct SubjectEntry {
    id: SubjectId,
    voxel_count: usize,
    offset: usize,
    records: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordEntry {
    subject: SubjectId,
    stimulus: StimulusId,
    trial: u32,
    session: u32,
    split: Split,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct StimulusEntry {
    id: StimulusId,
    offset: usize,
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

fn read_f32_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path.display().to_string(),
            format!("length {} is not a multiple of 4", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Draws disjoint train and test stimuli from the world and records trials
/// for every subject. Sessions partition each subject's train and test
/// samples into `sizes.sessions` equal consecutive blocks.
pub fn sample_dataset<R: Rng + ?Sized>(
    world: &SyntheticWorld,
    sizes: SplitSizes,
    rng: &mut R,
) -> Result<Dataset> {
    let capacity = world.num_stimuli();
    if sizes.train + sizes.test > capacity {
        return Err(Error::Size(format!(
            "requested {} train + {} test stimuli from a world of {capacity}",
            sizes.train, sizes.test
        )));
    }
    if sizes.sessions == 0 {
        return Err(Error::Size("need at least one session".into()));
    }
    let mut ids: Vec<StimulusId> = (0..capacity as StimulusId).collect();
    ids.shuffle(rng);
    let train = &ids[..sizes.train];
    let test = &ids[sizes.train..sizes.train + sizes.test];

    let mut embeddings = BTreeMap::new();
    for &id in train.iter().chain(test) {
        let tokens = world.embedding(id)?.mapv(|v| v as f32);
        embeddings.insert(id, SemanticEmbedding { stimulus: id, tokens });
    }

    let spec = &world.spec;
    let subjects: Vec<SubjectId> = world.subjects().collect();
    let mut samples = Vec::new();
    for &subject in &subjects {
        for (split, stimuli, trials) in [
            (Split::Train, train, spec.trials_per_train_stimulus),
            (Split::Test, test, spec.trials_per_test_stimulus),
        ] {
            let total = stimuli.len() * trials;
            let mut k = 0;
            for &stimulus in stimuli {
                for trial in 0..trials {
                    let values = world.trial(subject, stimulus, rng)?;
                    let session = (k * sizes.sessions as usize / total.max(1)) as u32;
                    samples.push(FmriSample {
                        subject,
                        stimulus,
                        trial: trial as u32,
                        split,
                        session,
                        values: values.iter().map(|&v| v as f32).collect(),
                    });
                    k += 1;
                }
            }
        }
    }
    Dataset::new(samples, embeddings, sizes.sessions)
}
