//! Reconstruction, KL, soft-target contrastive and alignment losses.

use serde::{Deserialize, Serialize};

use crate::autograd::{kl_value, softmax_rows, Mat};
use crate::error::{Error, Result};
use crate::vae::{pool_tokens, LatentGaussian};

/// Mean squared error over voxels.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction of length {} against target of length {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(crate::metrics::mse(pred, target))
}

/// `0.5·(mu² + exp(log_var) − 1 − log_var)`, summed over latent dims and
/// averaged over tokens.
pub fn kl_divergence(g: &LatentGaussian) -> f64 {
    kl_value(&g.mu, &g.log_var)
}

/// Mean over rows of `−Σ_j targets_ij · log softmax(logits)_ij`.
pub fn soft_cross_entropy(logits: &Mat, targets: &Mat) -> Result<f64> {
    if logits.dim() != targets.dim() {
        return Err(Error::Shape(format!(
            "logits {:?} vs targets {:?}",
            logits.dim(),
            targets.dim()
        )));
    }
    let mut total = 0.0;
    for (l, t) in logits.rows().into_iter().zip(targets.rows()) {
        let max = l.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total -= l.iter().zip(t).map(|(lv, tv)| tv * (lv - lse)).sum::<f64>();
    }
    Ok(total / logits.nrows() as f64)
}

/// Rows scaled to unit L2 norm, with the original norms; zero rows stay zero.
pub fn l2_normalize_rows(x: &Mat) -> (Mat, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in out.rows_mut() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        }
        norms.push(n);
    }
    (out, norms)
}

/// In-batch top-1 match rates for both retrieval directions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalDiag {
    /// fMRI → image.
    pub forward: f64,
    /// Image → fMRI.
    pub backward: f64,
}

#[derive(Clone, Debug)]
pub struct SoftClipOutput {
    pub loss: f64,
    /// Gradient with respect to the unnormalized pooled fMRI latents
    /// (`batch × d`).
    pub grad_pooled: Mat,
    pub diag: RetrievalDiag,
}

/// Soft-target contrastive loss on pooled embeddings (`batch × d` each).
///
/// Both sides are L2-normalized; logits are `F·Iᵀ/τ`. The targets average
/// the row-softmaxes of the image–image and fMRI–fMRI similarities at the
/// same temperature and are treated as constants. The loss is the mean of
/// the soft cross-entropies of the logits and of their transpose.
pub fn softclip_pooled(fmri: &Mat, image: &Mat, temperature: f64) -> Result<SoftClipOutput> {
    if fmri.dim() != image.dim() {
        return Err(Error::Shape(format!(
            "fMRI batch {:?} vs image batch {:?}",
            fmri.dim(),
            image.dim()
        )));
    }
    let b = fmri.nrows();
    if b < 2 {
        return Err(Error::Size(format!("contrastive batch of {b} needs at least 2")));
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let (f, norms) = l2_normalize_rows(fmri);
    let (i, _) = l2_normalize_rows(image);
    let logits = f.dot(&i.t()) / temperature;
    let targets = (softmax_rows(&(i.dot(&i.t()) / temperature))
        + softmax_rows(&(f.dot(&f.t()) / temperature)))
        * 0.5;
    let logits_t = logits.t().to_owned();
    let loss = 0.5
        * (soft_cross_entropy(&logits, &targets)? + soft_cross_entropy(&logits_t, &targets)?);

    let scale = 0.5 / b as f64;
    let d_logits = (softmax_rows(&logits) - &targets) * scale
        + (softmax_rows(&logits_t) - &targets).t().to_owned() * scale;
    let d_f = d_logits.dot(&i) / temperature;
    let mut grad = Mat::zeros(fmri.dim());
    for r in 0..b {
        let fr = f.row(r);
        let dr = d_f.row(r);
        let proj: f64 = fr.iter().zip(dr).map(|(a, c)| a * c).sum();
        let n = norms[r];
        for c in 0..fmri.ncols() {
            grad[[r, c]] = if n > 0.0 { (dr[c] - fr[c] * proj) / n } else { 0.0 };
        }
    }

    let argmax = |v: ndarray::ArrayView1<f64>| {
        v.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (k, &x)| if x > bv { (k, x) } else { (bi, bv) })
            .0
    };
    let fwd = (0..b).filter(|&r| argmax(logits.row(r)) == r).count();
    let bwd = (0..b).filter(|&c| argmax(logits.column(c)) == c).count();
    Ok(SoftClipOutput {
        loss,
        grad_pooled: grad,
        diag: RetrievalDiag {
            forward: fwd as f64 / b as f64,
            backward: bwd as f64 / b as f64,
        },
    })
}

/// Token-pools each `tokens × d` latent and semantic grid, then applies
/// [`softclip_pooled`].
pub fn softclip_loss(z: &[Mat], z_clip: &[Mat], temperature: f64) -> Result<(f64, RetrievalDiag)> {
    if z.len() != z_clip.len() {
        return Err(Error::Shape(format!(
            "{} latents against {} embeddings",
            z.len(),
            z_clip.len()
        )));
    }
    if let Some((a, b)) = z.iter().zip(z_clip).find(|(a, b)| a.dim() != b.dim()) {
        return Err(Error::Shape(format!("latent {:?} vs embedding {:?}", a.dim(), b.dim())));
    }
    let out = softclip_pooled(&stack_pooled(z)?, &stack_pooled(z_clip)?, temperature)?;
    Ok((out.loss, out.diag))
}

/// `batch × d` matrix of token-mean-pooled grids.
pub fn stack_pooled(grids: &[Mat]) -> Result<Mat> {
    let d = grids.first().map(|m| m.ncols()).unwrap_or(0);
    let mut out = Mat::zeros((grids.len(), d));
    for (r, m) in grids.iter().enumerate() {
        if m.ncols() != d {
            return Err(Error::Shape("grids differ in width".into()));
        }
        for (c, v) in pool_tokens(m).into_iter().enumerate() {
            out[[r, c]] = v;
        }
    }
    Ok(out)
}

/// Component losses and their weighted total, one training-log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mse: f64,
    pub kl: f64,
    pub clip: f64,
    pub total: f64,
    pub retrieval_diag: RetrievalDiag,
}

impl LossReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Name of the first non-finite component, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            ("mse", self.mse),
            ("kl", self.kl),
            ("clip", self.clip),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// `total = mse + λ_kl·kl + λ_clip·clip`.
pub fn composite_loss(
    mse: f64,
    kl: f64,
    clip: f64,
    diag: RetrievalDiag,
    lambda_kl: f64,
    lambda_clip: f64,
) -> LossReport {
    // Disabled terms contribute nothing even if their value is not finite.
    let weighted = |lambda: f64, v: f64| if lambda == 0.0 { 0.0 } else { lambda * v };
    LossReport {
        mse,
        kl,
        clip,
        total: mse + weighted(lambda_kl, kl) + weighted(lambda_clip, clip),
        retrieval_diag: diag,
    }
}

/// Elementwise mean squared error between predicted and target latents.
pub fn s2n_loss(z_align: &Mat, z_target: &Mat) -> Result<f64> {
    if z_align.dim() != z_target.dim() {
        return Err(Error::Shape(format!(
            "aligned latent {:?} vs target {:?}",
            z_align.dim(),
            z_target.dim()
        )));
    }
    Ok((z_align - z_target).mapv(|v| v * v).mean().unwrap_or(0.0))
}
