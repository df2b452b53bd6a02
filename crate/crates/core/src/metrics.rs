//! Evaluation battery: voxel-level similarity, cross-modal retrieval,
//! two-way identification and the latent distribution-gap diagnostic.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::StimulusId;
use crate::error::{Error, Result};

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

/// Pearson correlation; `None` when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine similarity; `None` when either input is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelMetrics {
    pub mse: f64,
    pub pearson: f64,
    pub cosine: f64,
    /// Trials for which Pearson was undefined and excluded from the mean.
    pub pearson_undefined: usize,
}

/// Compares one prediction against every trial and averages per metric.
pub fn voxel_metrics(pred: &[f64], trials: &[Vec<f64>]) -> Result<VoxelMetrics> {
    if trials.is_empty() {
        return Err(Error::Size("voxel metrics need at least one trial".into()));
    }
    if let Some(t) = trials.iter().find(|t| t.len() != pred.len()) {
        return Err(Error::Shape(format!(
            "trial of length {} against prediction of length {}",
            t.len(),
            pred.len()
        )));
    }
    let mses: Vec<f64> = trials.iter().map(|t| mse(pred, t)).collect();
    let pears: Vec<f64> = trials.iter().filter_map(|t| pearson(pred, t)).collect();
    let coss: Vec<f64> = trials
        .iter()
        .map(|t| cosine(pred, t).unwrap_or(0.0))
        .collect();
    Ok(VoxelMetrics {
        mse: mean(&mses),
        pearson: if pears.is_empty() { f64::NAN } else { mean(&pears) },
        cosine: mean(&coss),
        pearson_undefined: trials.len() - pears.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalStats {
    pub mean: f64,
    pub sd: f64,
    pub candidates: usize,
    pub repeats: usize,
}

impl RetrievalStats {
    pub fn chance(&self) -> f64 {
        1.0 / self.candidates as f64
    }
}

/// Top-1 cosine retrieval among `candidates` gallery items, one of which is
/// the query's own stimulus.
///
/// Each repeat draws, for every query, `candidates − 1` distractors from the
/// rest of the gallery. A query scores 1 when its true item is strictly the
/// most similar, and `1/(1+k)` when it ties with `k` distractors at the top.
pub fn retrieval_accuracy<R: Rng + ?Sized>(
    queries: &[(StimulusId, Vec<f64>)],
    gallery: &[(StimulusId, Vec<f64>)],
    candidates: usize,
    repeats: usize,
    rng: &mut R,
) -> Result<RetrievalStats> {
    if candidates < 1 || gallery.len() < candidates {
        return Err(Error::Size(format!(
            "gallery of {} items cannot supply {candidates} candidates",
            gallery.len()
        )));
    }
    if queries.is_empty() || repeats == 0 {
        return Err(Error::Size("need at least one query and one repeat".into()));
    }
    let gallery_n: Vec<Vec<f64>> = gallery.iter().map(|(_, v)| l2_normalize(v)).collect();
    let mut truth = Vec::with_capacity(queries.len());
    let mut sims = Vec::with_capacity(queries.len());
    for (id, q) in queries {
        let t = gallery
            .iter()
            .position(|(g, _)| g == id)
            .ok_or_else(|| Error::Protocol(format!("query stimulus {id} missing from gallery")))?;
        if q.len() != gallery_n[t].len() {
            return Err(Error::Shape(format!(
                "query of width {} against gallery of width {}",
                q.len(),
                gallery_n[t].len()
            )));
        }
        let qn = l2_normalize(q);
        let s: Vec<f64> = gallery_n
            .iter()
            .map(|g| g.iter().zip(&qn).map(|(a, b)| a * b).sum())
            .collect();
        truth.push(t);
        sims.push(s);
    }

    let n = gallery.len();
    let mut per_repeat = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut score = 0.0;
        for (q, &t) in truth.iter().enumerate() {
            let target = sims[q][t];
            let (mut above, mut tied) = (0usize, 0usize);
            for pick in index::sample(rng, n - 1, candidates - 1).iter() {
                let j = if pick >= t { pick + 1 } else { pick };
                let s = sims[q][j];
                if s > target {
                    above += 1;
                } else if s == target {
                    tied += 1;
                }
            }
            if above == 0 {
                score += 1.0 / (1 + tied) as f64;
            }
        }
        per_repeat.push(score / truth.len() as f64);
    }
    Ok(RetrievalStats {
        mean: mean(&per_repeat),
        sd: sample_sd(&per_repeat),
        candidates,
        repeats,
    })
}

/// Fraction of (item, distractor) pairs in which an original embedding is
/// closer to its own decoded counterpart than to a different one.
///
/// When every ordered pair fits in `trials`, all pairs are enumerated;
/// otherwise `trials` pairs are drawn uniformly. Ties count one half.
pub fn two_way_accuracy<R: Rng + ?Sized>(
    orig: &[Vec<f64>],
    decoded: &[Vec<f64>],
    rng: &mut R,
    trials: usize,
) -> Result<f64> {
    let n = orig.len();
    if n < 2 || decoded.len() != n {
        return Err(Error::Size(format!(
            "two-way comparison needs two aligned lists of length >= 2, got {n} and {}",
            decoded.len()
        )));
    }
    let sim = |i: usize, j: usize| cosine(&orig[i], &decoded[j]).unwrap_or(0.0);
    let judge = |i: usize, j: usize| {
        let (own, other) = (sim(i, i), sim(i, j));
        if own > other {
            1.0
        } else if own == other {
            0.5
        } else {
            0.0
        }
    };
    if n * (n - 1) <= trials {
        let mut total = 0.0;
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                total += judge(i, j);
            }
        }
        return Ok(total / (n * (n - 1)) as f64);
    }
    let mut total = 0.0;
    for _ in 0..trials {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        total += judge(i, j);
    }
    Ok(total / trials as f64)
}

/// Mean over `set_a` of the Euclidean distance to the nearest `set_b` element.
pub fn latent_gap(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::Size("latent gap needs two non-empty sets".into()));
    }
    let dim = set_b[0].len();
    if set_a.iter().chain(set_b).any(|v| v.len() != dim) {
        return Err(Error::Shape("latent gap sets differ in dimension".into()));
    }
    let total: f64 = set_a
        .iter()
        .map(|a| {
            set_b
                .iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(total / set_a.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    /// Pure Gaussian noise against encoded latents.
    pub noise_to_latents: f64,
    /// Noise-perturbed encoded latents against encoded latents.
    pub perturbed_to_latents: f64,
    /// Mapper predictions against encoded latents.
    pub mapped_to_latents: f64,
}

/// Evaluation summary; columns follow the voxel, retrieval, two-way order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subject: u32,
    pub mse: f64,
    pub pearson: f64,
    pub cosine: f64,
    pub pearson_undefined: usize,
    /// Mean Pearson between synthesized signals and trials of other stimuli.
    pub cross_stimulus_pearson: f64,
    pub retrieval_top1_raw: RetrievalStats,
    pub retrieval_top1_syn: RetrievalStats,
    pub two_way_acc: f64,
    pub gap_stats: GapStats,
}

impl EvalReport {
    pub fn render_table(&self) -> String {
        let pct = |s: &RetrievalStats| format!("{:.1}% ± {:.1}", 100.0 * s.mean, 100.0 * s.sd);
        let header = format!(
            "{:<8} {:>8} {:>8} {:>8} {:>16} {:>16} {:>8}",
            "Subject", "MSE", "Pearson", "Cosine", "Raw", "Syn", "2-way"
        );
        let row = format!(
            "{:<8} {:>8.4} {:>8.4} {:>8.4} {:>16} {:>16} {:>7.1}%",
            self.subject,
            self.mse,
            self.pearson,
            self.cosine,
            pct(&self.retrieval_top1_raw),
            pct(&self.retrieval_top1_syn),
            100.0 * self.two_way_acc
        );
        let gap = format!(
            "latent gap: noise {:.4}  perturbed {:.4}  mapped {:.4}   (chance {:.2}%)",
            self.gap_stats.noise_to_latents,
            self.gap_stats.perturbed_to_latents,
            self.gap_stats.mapped_to_latents,
            100.0 * self.retrieval_top1_raw.chance()
        );
        format!("{header}\n{row}\n{gap}\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn voxel_metrics_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = randv(&mut rng, 50);
        let m = voxel_metrics(&t, std::slice::from_ref(&t)).unwrap();
        assert_eq!(m.mse, 0.0);
        assert!((m.pearson - 1.0).abs() < 1e-12);
        assert!((m.cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_zero_mean_cosine_is_zero() {
        let a = vec![1.0, -1.0, 1.0, -1.0];
        let b = vec![1.0, 1.0, -1.0, -1.0];
        let m = voxel_metrics(&a, &[b]).unwrap();
        assert_eq!(m.cosine, 0.0);
    }

    #[test]
    fn voxel_metrics_match_per_trial_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred = randv(&mut rng, 40);
        let trials: Vec<Vec<f64>> = (0..3).map(|_| randv(&mut rng, 40)).collect();
        let m = voxel_metrics(&pred, &trials).unwrap();
        let (mut e, mut p, mut c) = (0.0, 0.0, 0.0);
        for t in &trials {
            let n = t.len() as f64;
            let mut se = 0.0;
            let (mut sp, mut st, mut spt, mut pp, mut tt) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..t.len() {
                se += (pred[i] - t[i]).powi(2);
                sp += pred[i];
                st += t[i];
            }
            let (mp, mt) = (sp / n, st / n);
            let (mut dot, mut np, mut nt) = (0.0, 0.0, 0.0);
            for i in 0..t.len() {
                spt += (pred[i] - mp) * (t[i] - mt);
                pp += (pred[i] - mp).powi(2);
                tt += (t[i] - mt).powi(2);
                dot += pred[i] * t[i];
                np += pred[i] * pred[i];
                nt += t[i] * t[i];
            }
            e += se / n / 3.0;
            p += spt / (pp * tt).sqrt() / 3.0;
            c += dot / (np * nt).sqrt() / 3.0;
        }
        assert!((m.mse - e).abs() < 1e-7);
        assert!((m.pearson - p).abs() < 1e-7);
        assert!((m.cosine - c).abs() < 1e-7);
    }

    #[test]
    fn constant_prediction_flags_pearson() {
        let m = voxel_metrics(&[1.0; 5], &[vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        assert_eq!(m.pearson_undefined, 1);
        assert!(m.pearson.is_nan());
        assert!(voxel_metrics(&[1.0; 5], &[]).is_err());
        assert!(voxel_metrics(&[1.0; 5], &[vec![1.0; 4]]).is_err());
    }

    fn gallery(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<(StimulusId, Vec<f64>)> {
        (0..n as u32).map(|i| (i, randv(rng, dim))).collect()
    }

    #[test]
    fn self_retrieval_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = gallery(&mut rng, 320, 16);
        let r = retrieval_accuracy(&g, &g, 300, 5, &mut rng).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.sd, 0.0);
    }

    #[test]
    fn random_retrieval_is_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = gallery(&mut rng, 600, 16);
        let q: Vec<_> = g.iter().map(|(id, _)| (*id, randv(&mut rng, 16))).collect();
        let r = retrieval_accuracy(&q, &g, 300, 30, &mut rng).unwrap();
        assert!((r.mean - 1.0 / 300.0).abs() <= 3.0 * r.sd, "{r:?}");
    }

    #[test]
    fn zero_embeddings_score_chance_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = gallery(&mut rng, 50, 4);
        let q: Vec<_> = g.iter().map(|(id, _)| (*id, vec![0.0; 4])).collect();
        let r = retrieval_accuracy(&q, &g, 10, 3, &mut rng).unwrap();
        assert!((r.mean - 0.1).abs() < 1e-12);
    }

    #[test]
    fn retrieval_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = gallery(&mut rng, 5, 4);
        assert!(retrieval_accuracy(&g, &g, 6, 1, &mut rng).is_err());
        let q = vec![(99, vec![0.0; 4])];
        assert!(retrieval_accuracy(&q, &g, 3, 1, &mut rng).is_err());
    }

    #[test]
    fn two_way_identity_and_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let orig: Vec<Vec<f64>> = (0..40).map(|_| randv(&mut rng, 8)).collect();
        assert_eq!(two_way_accuracy(&orig, &orig, &mut rng, 1000).unwrap(), 1.0);
        let indep: Vec<Vec<f64>> = (0..40).map(|_| randv(&mut rng, 8)).collect();
        let acc = two_way_accuracy(&orig, &indep, &mut rng, 1000).unwrap();
        assert!((acc - 0.5).abs() < 0.1, "{acc}");
        assert!(two_way_accuracy(&orig[..1], &orig[..1], &mut rng, 10).is_err());
    }

    #[test]
    fn two_way_matches_exhaustive_enumeration() {
        let orig = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let decoded = vec![vec![1.0, 0.1], vec![1.0, 0.0], vec![0.5, 0.6]];
        let mut correct = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let own = cosine(&orig[i], &decoded[i]).unwrap();
                let other = cosine(&orig[i], &decoded[j]).unwrap();
                correct += if own > other { 1.0 } else if own == other { 0.5 } else { 0.0 };
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let acc = two_way_accuracy(&orig, &decoded, &mut rng, 1000).unwrap();
        assert_eq!(acc, correct / 6.0);
    }

    #[test]
    fn latent_gap_cases() {
        let a = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        assert_eq!(latent_gap(&a, &a).unwrap(), 0.0);
        assert_eq!(latent_gap(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]]).unwrap(), 1.0);
        assert_eq!(latent_gap(&[vec![3.0, 4.0]], &a[..1]).unwrap(), 5.0);
        assert!(latent_gap(&[], &a).is_err());
    }

    proptest! {
        #[test]
        fn cosine_and_pearson_invariances(
            a in prop::collection::vec(-5.0f64..5.0, 6),
            b in prop::collection::vec(-5.0f64..5.0, 6),
            k in 0.1f64..10.0,
            shift in -3.0f64..3.0,
        ) {
            if let (Some(c), Some(cs)) = (cosine(&a, &b), cosine(&a.iter().map(|x| x * k).collect::<Vec<_>>(), &b)) {
                prop_assert!((c - cs).abs() < 1e-9);
            }
            let affine: Vec<f64> = b.iter().map(|x| k * x + shift).collect();
            if let (Some(p), Some(pa)) = (pearson(&a, &b), pearson(&a, &affine)) {
                prop_assert!((p - pa).abs() < 1e-9);
            }
        }

        #[test]
        fn metrics_invariant_to_shared_permutation(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = gallery(&mut rng, 12, 5);
            let q: Vec<_> = g.iter().map(|(id, v)| (*id, v.iter().map(|x| x + 0.5).collect::<Vec<_>>())).collect();
            let mut perm: Vec<usize> = (0..12).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let gp: Vec<_> = perm.iter().map(|&i| g[i].clone()).collect();
            let qp: Vec<_> = perm.iter().map(|&i| q[i].clone()).collect();
            let r = retrieval_accuracy(&q, &g, 12, 1, &mut rng).unwrap();
            let rp = retrieval_accuracy(&qp, &gp, 12, 1, &mut rng).unwrap();
            prop_assert!((r.mean - rp.mean).abs() < 1e-12);
            let o: Vec<Vec<f64>> = g.iter().map(|x| x.1.clone()).collect();
            let d: Vec<Vec<f64>> = q.iter().map(|x| x.1.clone()).collect();
            let op: Vec<Vec<f64>> = gp.iter().map(|x| x.1.clone()).collect();
            let dp: Vec<Vec<f64>> = qp.iter().map(|x| x.1.clone()).collect();
            prop_assert_eq!(two_way_accuracy(&o, &d, &mut rng, 1000).unwrap(), two_way_accuracy(&op, &dp, &mut rng, 1000).unwrap());
            prop_assert!((latent_gap(&o, &d).unwrap() - latent_gap(&op, &dp).unwrap()).abs() < 1e-12);
        }
    }
}
