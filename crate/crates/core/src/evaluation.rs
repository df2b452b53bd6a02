//! End-to-end evaluation of a trained model on one subject's test split.
//!
//! fMRI signals, real or synthesized, are turned into embeddings by an
//! [`Embedder`] and ranked against a gallery of pooled stimulus embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::RidgeDecoder;
use crate::autograd::Mat;
use crate::config::SubjectId;
use crate::data::{Dataset, StimulusId};
use crate::error::{Error, Result};
use crate::metrics::{
    latent_gap, mean, pearson, retrieval_accuracy, two_way_accuracy, voxel_metrics, EvalReport, GapStats,
};
use crate::pipeline::{synthesize, synthesize_without_mapper};
use crate::s2n::S2nMapper;
use crate::vae::{pool_tokens, reparameterize, standard_normal, BrainVae};

/// Maps an fMRI vector into the semantic embedding space.
#[derive(Clone, Copy, Debug)]
pub enum Embedder<'a> {
    /// Token-pooled posterior mean of a trained encoder.
    Encoder(&'a BrainVae),
    /// A linear probe fit on real data, independent of the model under test.
    Probe(&'a RidgeDecoder),
}

impl Embedder<'_> {
    pub fn embed(&self, fmri: &Mat) -> Result<Vec<f64>> {
        match self {
            Embedder::Encoder(vae) => Ok(vae.infer(fmri)?.pooled_mean()),
            Embedder::Probe(probe) => probe.decode(&fmri.iter().copied().collect::<Vec<_>>()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub candidates: usize,
    pub repeats: usize,
    /// Noise factor used for the synthesized signals.
    pub nf: f64,
    pub two_way_trials: usize,
    /// When false, synthesis decodes the semantic grid directly.
    pub use_mapper: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            candidates: 300,
            repeats: 30,
            nf: 0.0,
            two_way_trials: 1000,
            use_mapper: true,
        }
    }
}

/// Pooled embeddings of every stimulus in the dataset, in id order.
pub fn stimulus_gallery(data: &Dataset) -> Vec<(StimulusId, Vec<f64>)> {
    data.embeddings().iter().map(|(&id, e)| (id, e.pooled())).collect()
}

fn as_f64(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| v as f64).collect()
}

fn row(values: &[f64]) -> Mat {
    Mat::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape")
}

/// One synthesized signal per test stimulus of `subject`.
pub fn synthesize_test_set<R: Rng + ?Sized>(
    vae: &BrainVae,
    s2n: Option<&S2nMapper>,
    data: &Dataset,
    subject: SubjectId,
    nf: f64,
    rng: &mut R,
) -> Result<Vec<(StimulusId, Vec<f64>)>> {
    let test = data.test().for_subject(subject);
    let v = *test
        .voxel_counts()
        .get(&subject)
        .ok_or_else(|| Error::Protocol(format!("no test trials for subject {subject}")))?;
    test.trials_by_stimulus()
        .keys()
        .map(|&stim| {
            let z_clip = data.embedding(stim)?.to_mat();
            let x = match s2n {
                Some(m) => synthesize(&z_clip, m, vae, nf, rng, v)?,
                None => synthesize_without_mapper(&z_clip, vae, v)?,
            };
            Ok((stim, x.iter().copied().collect()))
        })
        .collect()
}

/// Voxel, retrieval, two-way and latent-gap evaluation for one subject.
///
/// The retrieval gallery holds every stimulus of `data`, so training
/// stimuli act as distractors for the test queries.
pub fn evaluate<R: Rng + ?Sized>(
    vae: &BrainVae,
    s2n: Option<&S2nMapper>,
    embedder: Embedder<'_>,
    data: &Dataset,
    subject: SubjectId,
    opts: &EvalOptions,
    rng: &mut R,
) -> Result<EvalReport> {
    let test = data.test().for_subject(subject);
    let by_stim = test.trials_by_stimulus();
    if by_stim.len() < 2 {
        return Err(Error::Size(format!("subject {subject} needs at least 2 test stimuli")));
    }
    let synthesized = synthesize_test_set(vae, s2n, data, subject, opts.nf, rng)?;

    let (mut mse, mut pear, mut cos, mut undefined) = (Vec::new(), Vec::new(), Vec::new(), 0);
    let mut cross = Vec::new();
    for (stim, pred) in &synthesized {
        let trials: Vec<Vec<f64>> = by_stim[stim].iter().map(|s| as_f64(&s.values)).collect();
        let m = voxel_metrics(pred, &trials)?;
        mse.push(m.mse);
        cos.push(m.cosine);
        undefined += m.pearson_undefined;
        if m.pearson_undefined < trials.len() {
            pear.push(m.pearson);
        }
        for (other, samples) in &by_stim {
            if other != stim {
                cross.extend(samples.iter().filter_map(|s| pearson(pred, &as_f64(&s.values))));
            }
        }
    }

    let gallery = stimulus_gallery(data);
    let candidates = opts.candidates.min(gallery.len());
    let raw: Vec<(StimulusId, Vec<f64>)> = test
        .samples()
        .iter()
        .map(|s| Ok((s.stimulus, embedder.embed(&s.to_mat())?)))
        .collect::<Result<_>>()?;
    let syn: Vec<(StimulusId, Vec<f64>)> = synthesized
        .iter()
        .map(|(stim, x)| Ok((*stim, embedder.embed(&row(x))?)))
        .collect::<Result<_>>()?;
    let retrieval_top1_raw = retrieval_accuracy(&raw, &gallery, candidates, opts.repeats, rng)?;
    let retrieval_top1_syn = retrieval_accuracy(&syn, &gallery, candidates, opts.repeats, rng)?;
    let originals: Vec<Vec<f64>> = syn
        .iter()
        .map(|(stim, _)| Ok(data.embedding(*stim)?.pooled()))
        .collect::<Result<_>>()?;
    let decoded: Vec<Vec<f64>> = syn.into_iter().map(|(_, e)| e).collect();
    let two_way_acc = two_way_accuracy(&originals, &decoded, rng, opts.two_way_trials)?;
    let gap_stats = gap_stats(vae, s2n, data, subject, rng)?;

    Ok(EvalReport {
        subject,
        mse: mean(&mse),
        pearson: if pear.is_empty() { f64::NAN } else { mean(&pear) },
        cosine: mean(&cos),
        pearson_undefined: undefined,
        cross_stimulus_pearson: mean(&cross),
        retrieval_top1_raw,
        retrieval_top1_syn,
        two_way_acc,
        gap_stats,
    })
}

fn flat(m: &Mat) -> Vec<f64> {
    m.iter().copied().collect()
}

/// Distances from three latent sources to the manifold of encoded training
/// latents (posterior means of the subject's training trials).
///
/// Pure standard-normal grids stand for a sampler started from noise;
/// posterior samples `mu + σ·ε` are the noisy latents the decoder saw
/// during training; mapper outputs are the test-time latents.
pub fn gap_stats<R: Rng + ?Sized>(
    vae: &BrainVae,
    s2n: Option<&S2nMapper>,
    data: &Dataset,
    subject: SubjectId,
    rng: &mut R,
) -> Result<GapStats> {
    let train = data.train().for_subject(subject);
    let test = data.test().for_subject(subject);
    let manifold: Vec<Vec<f64>> = train
        .samples()
        .iter()
        .map(|s| Ok(flat(&vae.infer(&s.to_mat())?.mu)))
        .collect::<Result<_>>()?;
    if manifold.is_empty() {
        return Err(Error::Size(format!("no training trials for subject {subject}")));
    }
    let test_stimuli: Vec<StimulusId> = test.trials_by_stimulus().keys().copied().collect();
    let (rows, cols) = vae.infer(&train.samples()[0].to_mat())?.mu.dim();
    let noise: Vec<Vec<f64>> = (0..test_stimuli.len().max(1))
        .map(|_| flat(&standard_normal(rng, rows, cols)))
        .collect();
    let perturbed: Vec<Vec<f64>> = test
        .samples()
        .iter()
        .map(|s| {
            let post = vae.infer(&s.to_mat())?;
            if vae.config.variational {
                Ok(flat(&reparameterize(&post, rng)?))
            } else {
                Ok(flat(&post.mu))
            }
        })
        .collect::<Result<_>>()?;
    let mapped: Vec<Vec<f64>> = test_stimuli
        .iter()
        .map(|&stim| {
            let z_clip = data.embedding(stim)?.to_mat();
            match s2n {
                Some(m) => Ok(flat(&m.forward(&z_clip)?)),
                None => Ok(flat(&z_clip)),
            }
        })
        .collect::<Result<_>>()?;
    Ok(GapStats {
        noise_to_latents: latent_gap(&noise, &manifold)?,
        perturbed_to_latents: if perturbed.is_empty() { f64::NAN } else { latent_gap(&perturbed, &manifold)? },
        mapped_to_latents: latent_gap(&mapped, &manifold)?,
    })
}

/// Mean over test stimuli of the share of `samples` syntheses at noise
/// factor `nf` whose nearest gallery stimulus is the most common one.
///
/// The gallery is the pooled embeddings of the subject's test stimuli.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_consistency<R: Rng + ?Sized>(
    vae: &BrainVae,
    s2n: &S2nMapper,
    embedder: Embedder<'_>,
    data: &Dataset,
    subject: SubjectId,
    nf: f64,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Size("consistency needs at least one sample".into()));
    }
    let test = data.test().for_subject(subject);
    let v = *test
        .voxel_counts()
        .get(&subject)
        .ok_or_else(|| Error::Protocol(format!("no test trials for subject {subject}")))?;
    let stimuli: Vec<StimulusId> = test.trials_by_stimulus().keys().copied().collect();
    let gallery: Vec<Vec<f64>> = stimuli
        .iter()
        .map(|&s| Ok(pool_tokens(&data.embedding(s)?.to_mat())))
        .collect::<Result<_>>()?;
    let mut shares = Vec::with_capacity(stimuli.len());
    for &stim in &stimuli {
        let z_clip = data.embedding(stim)?.to_mat();
        let mut counts = vec![0usize; stimuli.len()];
        for _ in 0..samples {
            let x = synthesize(&z_clip, s2n, vae, nf, rng, v)?;
            let e = embedder.embed(&x)?;
            counts[nearest(&e, &gallery)] += 1;
        }
        shares.push(*counts.iter().max().unwrap() as f64 / samples as f64);
    }
    Ok(mean(&shares))
}

/// Index of the gallery item with the highest cosine similarity.
fn nearest(query: &[f64], gallery: &[Vec<f64>]) -> usize {
    let score = |g: &Vec<f64>| crate::metrics::cosine(query, g).unwrap_or(f64::NEG_INFINITY);
    let mut best = 0;
    for (i, g) in gallery.iter().enumerate() {
        if score(g) > score(&gallery[best]) {
            best = i;
        }
    }
    best
}
