//! Synthetic-data augmentation for a downstream fMRI → embedding decoder.
//!
//! The decoder is closed-form ridge regression onto pooled semantic
//! embeddings. Synthetic pairs come from stimuli that appear nowhere in the
//! real training subset, and evaluation refuses any stimulus overlap.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::config::SubjectId;
use crate::data::{Dataset, FmriSample, SemanticEmbedding, Split, StimulusId};
use crate::error::{Error, Result};
use crate::metrics::{retrieval_accuracy, two_way_accuracy, RetrievalStats};
use crate::params::write_json;
use crate::pipeline::synthesize;
use crate::s2n::S2nMapper;
use crate::vae::BrainVae;

/// One synthesized trial and where it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPair {
    pub stimulus: StimulusId,
    pub values: Vec<f32>,
    pub source_model: String,
    pub nf: f64,
}

/// Real training trials plus synthetic trials from disjoint stimuli.
#[derive(Clone, Debug)]
pub struct AugmentedSet {
    pub subject: SubjectId,
    pub real: Dataset,
    pub synthetic: Vec<SyntheticPair>,
    /// Synthetic pairs per real pair.
    pub ratio: usize,
    pub nf: f64,
    embeddings: BTreeMap<StimulusId, SemanticEmbedding>,
}

#[derive(Serialize)]
struct ProvenanceEntry<'a> {
    stimulus: StimulusId,
    source: &'a str,
    model: Option<&'a str>,
    nf: Option<f64>,
}

#[derive(Serialize)]
struct Provenance<'a> {
    subject: SubjectId,
    ratio: usize,
    nf: f64,
    real_pairs: usize,
    synthetic_pairs: usize,
    entries: Vec<ProvenanceEntry<'a>>,
}

/// Synthesizes `ratio × |real training trials|` pairs for one subject, one
/// per unseen stimulus, taken in the given order.
#[allow(clippy::too_many_arguments)]
pub fn generate_augmented_set<R: Rng + ?Sized>(
    vae: &BrainVae,
    s2n: &S2nMapper,
    model_id: &str,
    real: &Dataset,
    unseen: &[&SemanticEmbedding],
    ratio: usize,
    nf: f64,
    rng: &mut R,
) -> Result<AugmentedSet> {
    let real = real.train();
    let subjects = real.subjects();
    let subject = match subjects.iter().collect::<Vec<_>>().as_slice() {
        [one] => **one,
        _ => return Err(Error::Protocol("augmentation needs real data from exactly one subject".into())),
    };
    let real_stimuli = real.stimuli();
    if let Some(e) = unseen.iter().find(|e| real_stimuli.contains(&e.stimulus)) {
        return Err(Error::Protocol(format!(
            "stimulus {} is in both the real subset and the synthesis pool",
            e.stimulus
        )));
    }
    let want = ratio * real.len();
    if unseen.len() < want {
        return Err(Error::Size(format!(
            "{want} synthetic pairs requested from {} unseen stimuli",
            unseen.len()
        )));
    }
    let v = real.voxel_counts()[&subject];
    let mut synthetic = Vec::with_capacity(want);
    let mut embeddings: BTreeMap<StimulusId, SemanticEmbedding> = real.embeddings().clone();
    for emb in &unseen[..want] {
        let x = synthesize(&emb.to_mat(), s2n, vae, nf, rng, v)?;
        synthetic.push(SyntheticPair {
            stimulus: emb.stimulus,
            values: x.iter().map(|&t| t as f32).collect(),
            source_model: model_id.to_string(),
            nf,
        });
        embeddings.insert(emb.stimulus, (*emb).clone());
    }
    Ok(AugmentedSet {
        subject,
        real,
        synthetic,
        ratio,
        nf,
        embeddings,
    })
}

/// Row-aligned decoder inputs and targets.
pub type PairRows = (Vec<Vec<f64>>, Vec<Vec<f64>>);

impl AugmentedSet {
    /// `(fMRI, pooled embedding)` training pairs, real first.
    pub fn pairs(&self) -> Result<PairRows> {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for s in self.real.samples() {
            xs.push(s.values.iter().map(|&v| v as f64).collect());
            ys.push(self.real.embedding(s.stimulus)?.pooled());
        }
        for p in &self.synthetic {
            xs.push(p.values.iter().map(|&v| v as f64).collect());
            ys.push(self.embeddings[&p.stimulus].pooled());
        }
        Ok((xs, ys))
    }

    pub fn stimuli(&self) -> BTreeSet<StimulusId> {
        self.embeddings.keys().copied().collect()
    }

    /// Real and synthetic trials as one dataset.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let mut samples = self.real.samples().to_vec();
        for p in &self.synthetic {
            samples.push(FmriSample {
                subject: self.subject,
                stimulus: p.stimulus,
                trial: 0,
                split: Split::Train,
                session: 0,
                values: p.values.clone(),
            });
        }
        Dataset::new(samples, self.embeddings.clone(), self.real.n_sessions())
    }

    /// Saves in the dataset directory format with a `provenance.json`
    /// sidecar naming the origin of every record, in record order.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.to_dataset()?.save(dir)?;
        let mut entries: Vec<ProvenanceEntry> = self
            .real
            .samples()
            .iter()
            .map(|s| ProvenanceEntry {
                stimulus: s.stimulus,
                source: "real",
                model: None,
                nf: None,
            })
            .collect();
        entries.extend(self.synthetic.iter().map(|p| ProvenanceEntry {
            stimulus: p.stimulus,
            source: "synthetic",
            model: Some(&p.source_model),
            nf: Some(p.nf),
        }));
        write_json(
            &dir.join("provenance.json"),
            &Provenance {
                subject: self.subject,
                ratio: self.ratio,
                nf: self.nf,
                real_pairs: self.real.len(),
                synthetic_pairs: self.synthetic.len(),
                entries,
            },
        )
    }
}

/// Affine map `y = (x − x_mean)·W + y_mean`.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeDecoder {
    pub weights: Mat,
    pub x_mean: Vec<f64>,
    pub y_mean: Vec<f64>,
}

impl RidgeDecoder {
    /// The decoder that ignores its input and predicts `y_mean`.
    pub fn constant(x_dim: usize, y_mean: Vec<f64>) -> Self {
        Self {
            weights: Mat::zeros((x_dim, y_mean.len())),
            x_mean: vec![0.0; x_dim],
            y_mean,
        }
    }

    pub fn decode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.x_mean.len() {
            return Err(Error::Shape(format!(
                "decoder expects {} voxels, got {}",
                self.x_mean.len(),
                x.len()
            )));
        }
        let mut y = self.y_mean.clone();
        for (i, (&xi, &mi)) in x.iter().zip(&self.x_mean).enumerate() {
            let c = xi - mi;
            if c != 0.0 {
                for (j, yj) in y.iter_mut().enumerate() {
                    *yj += c * self.weights[[i, j]];
                }
            }
        }
        Ok(y)
    }
}

fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|v| *v /= rows.len() as f64);
    m
}

fn centered(rows: &[Vec<f64>], mean: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), mean.len(), |i, j| rows[i][j] - mean[j])
}

/// Closed-form ridge regression with an unpenalized intercept.
///
/// Solves the primal normal equations when there are more pairs than input
/// dimensions and the dual (kernel) form otherwise. `ridge = ∞` gives the
/// constant decoder; `ridge = 0` with a singular system is an error.
pub fn train_toy_decoder(xs: &[Vec<f64>], ys: &[Vec<f64>], ridge: f64) -> Result<RidgeDecoder> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Size(format!("{} inputs against {} targets", xs.len(), ys.len())));
    }
    let (dx, dy) = (xs[0].len(), ys[0].len());
    if xs.iter().any(|x| x.len() != dx) || ys.iter().any(|y| y.len() != dy) {
        return Err(Error::Shape("ragged decoder training pairs".into()));
    }
    if ridge.is_nan() || ridge < 0.0 {
        return Err(Error::Range(format!("ridge strength {ridge}")));
    }
    let y_mean = column_means(ys);
    if ridge.is_infinite() {
        return Ok(RidgeDecoder::constant(dx, y_mean));
    }
    let x_mean = column_means(xs);
    let x = centered(xs, &x_mean);
    let y = centered(ys, &y_mean);
    let n = xs.len();
    let singular = || Error::Singular(format!("ridge system with {n} pairs of dimension {dx} at strength {ridge}"));
    let w = if n > dx {
        let mut gram = x.transpose() * &x;
        for i in 0..dx {
            gram[(i, i)] += ridge;
        }
        let chol = gram.cholesky().ok_or_else(singular)?;
        chol.solve(&(x.transpose() * &y))
    } else {
        let mut kernel = &x * x.transpose();
        for i in 0..n {
            kernel[(i, i)] += ridge;
        }
        let chol = kernel.cholesky().ok_or_else(singular)?;
        x.transpose() * chol.solve(&y)
    };
    if w.iter().any(|v| !v.is_finite()) || (ridge == 0.0 && n <= dx) {
        return Err(singular());
    }
    Ok(RidgeDecoder {
        weights: Mat::from_shape_fn((dx, dy), |(i, j)| w[(i, j)]),
        x_mean,
        y_mean,
    })
}

/// Retrieval and two-way scores in both directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderReport {
    /// Decoded embedding → stimulus embedding gallery.
    pub image_retrieval: RetrievalStats,
    /// Stimulus embedding → gallery of decoded test embeddings.
    pub brain_retrieval: RetrievalStats,
    pub two_way_image: f64,
    pub two_way_brain: f64,
}

/// Scores a decoder on held-out test trials.
///
/// `gallery` holds stimulus embeddings used as candidates for the image
/// direction; the brain direction ranks the trial-averaged decoded
/// embeddings of the test stimuli.
#[allow(clippy::too_many_arguments)]
pub fn eval_decoder<R: Rng + ?Sized>(
    decoder: &RidgeDecoder,
    trained_on: &BTreeSet<StimulusId>,
    test: &Dataset,
    gallery: &[(StimulusId, Vec<f64>)],
    candidates: usize,
    repeats: usize,
    two_way_trials: usize,
    rng: &mut R,
) -> Result<DecoderReport> {
    let test_stimuli = test.stimuli();
    if let Some(s) = test_stimuli.intersection(trained_on).next() {
        return Err(Error::Protocol(format!(
            "test stimulus {s} was used to train the decoder"
        )));
    }
    let mut per_trial = Vec::new();
    let mut averaged = Vec::new();
    let mut originals = Vec::new();
    for (stim, trials) in test.trials_by_stimulus() {
        let mut acc = vec![0.0; gallery.first().map(|g| g.1.len()).unwrap_or(0)];
        for t in &trials {
            let x: Vec<f64> = t.values.iter().map(|&v| v as f64).collect();
            let y = decoder.decode(&x)?;
            for (a, b) in acc.iter_mut().zip(&y) {
                *a += b / trials.len() as f64;
            }
            per_trial.push((stim, y));
        }
        averaged.push((stim, acc));
        originals.push((stim, test.embedding(stim)?.pooled()));
    }
    let image_retrieval = retrieval_accuracy(&per_trial, gallery, candidates.min(gallery.len()), repeats, rng)?;
    let brain_retrieval = retrieval_accuracy(&originals, &averaged, candidates.min(averaged.len()), repeats, rng)?;
    let orig: Vec<Vec<f64>> = originals.iter().map(|o| o.1.clone()).collect();
    let dec: Vec<Vec<f64>> = averaged.iter().map(|a| a.1.clone()).collect();
    let two_way_image = two_way_accuracy(&orig, &dec, rng, two_way_trials)?;
    let two_way_brain = two_way_accuracy(&dec, &orig, rng, two_way_trials)?;
    Ok(DecoderReport {
        image_retrieval,
        brain_retrieval,
        two_way_image,
        two_way_brain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::standard_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows(m: &Mat) -> Vec<Vec<f64>> {
        m.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn noiseless_linear_world_interpolates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = standard_normal(&mut rng, 30, 5);
        let w = standard_normal(&mut rng, 5, 3);
        let y = x.dot(&w) + 0.7;
        let dec = train_toy_decoder(&rows(&x), &rows(&y), 1e-10).unwrap();
        for (xr, yr) in rows(&x).iter().zip(rows(&y)) {
            let p = dec.decode(xr).unwrap();
            assert!(p.iter().zip(&yr).all(|(a, b)| (a - b).abs() < 1e-6));
        }
        // The dual form reaches the same interpolation when pairs are scarce.
        let few = train_toy_decoder(&rows(&x)[..4], &rows(&y)[..4], 1e-10).unwrap();
        for (xr, yr) in rows(&x)[..4].iter().zip(&rows(&y)[..4]) {
            let p = few.decode(xr).unwrap();
            assert!(p.iter().zip(yr).all(|(a, b)| (a - b).abs() < 1e-6));
        }
    }

    #[test]
    fn infinite_ridge_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = standard_normal(&mut rng, 10, 4);
        let y = standard_normal(&mut rng, 10, 2);
        let dec = train_toy_decoder(&rows(&x), &rows(&y), f64::INFINITY).unwrap();
        assert!(dec.weights.iter().all(|&v| v == 0.0));
        let big = train_toy_decoder(&rows(&x), &rows(&y), 1e12).unwrap();
        assert!(big.weights.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn zero_ridge_singular_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = standard_normal(&mut rng, 4, 6);
        let y = standard_normal(&mut rng, 4, 2);
        assert!(matches!(train_toy_decoder(&rows(&x), &rows(&y), 0.0), Err(Error::Singular(_))));
        let dup = vec![vec![1.0, 2.0]; 5];
        let yy = vec![vec![0.0]; 5];
        assert!(matches!(train_toy_decoder(&dup, &yy, 0.0), Err(Error::Singular(_))));
    }

    #[test]
    fn closed_form_matches_gradient_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = standard_normal(&mut rng, 40, 6);
        let y = standard_normal(&mut rng, 40, 2);
        let ridge = 3.0;
        let dec = train_toy_decoder(&rows(&x), &rows(&y), ridge).unwrap();

        // Minimize ‖Xc W − Yc‖² + ridge‖W‖² by plain gradient descent.
        let xm = x.mean_axis(ndarray::Axis(0)).unwrap();
        let ym = y.mean_axis(ndarray::Axis(0)).unwrap();
        let xc = &x - &xm;
        let yc = &y - &ym;
        let mut w = Mat::zeros((6, 2));
        for _ in 0..20_000 {
            let grad = xc.t().dot(&(xc.dot(&w) - &yc)) * 2.0 + &w * (2.0 * ridge);
            w = w - grad * 1e-3;
        }
        let diff = (&w - &dec.weights).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn decode_rejects_wrong_width() {
        let dec = RidgeDecoder::constant(3, vec![1.0]);
        assert_eq!(dec.decode(&[5.0, 5.0, 5.0]).unwrap(), vec![1.0]);
        assert!(dec.decode(&[1.0]).is_err());
    }
}
