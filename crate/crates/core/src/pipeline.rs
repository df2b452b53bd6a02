//! Stage-1 autoencoder training, stage-2 mapper training, few-shot
//! adaptation to a new subject, and synthesis.
//!
//! Every entry point is a deterministic function of its inputs and
//! `config.seed`. Trainers expose their full state as [`TrainState`] so a
//! run can be serialized mid-way and resumed with an identical trajectory.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat};
use crate::config::{ModelConfig, SubjectId};
use crate::data::{Dataset, StimulusId};
use crate::error::{Error, Result};
use crate::objectives::{composite_loss, softclip_pooled, LossReport, RetrievalDiag};
use crate::optim::AdamW;
use crate::params::{ParamGrads, Snapshot};
use crate::s2n::{Partition, S2nMapper};
use crate::seed::{rng_for, RngState};
use crate::vae::{standard_normal, BrainVae};

const TAG_VAL: u64 = 1;
const TAG_STAGE1: u64 = 2;
const TAG_STAGE2: u64 = 3;

fn tag_id(tag: &str) -> u64 {
    tag.bytes().fold(0u64, |acc, b| acc.wrapping_mul(131).wrapping_add(b as u64))
}

/// One line of a training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: String,
    pub step: u64,
    pub epoch: usize,
    pub split: String,
    pub report: LossReport,
    pub wall_time_s: f64,
}

/// In-memory training log, optionally mirrored to a JSON-lines file.
#[derive(Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    sink: Option<BufWriter<File>>,
    start: Option<Instant>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            sink: Some(BufWriter::new(f)),
            ..Self::default()
        })
    }

    fn push(&mut self, stage: &str, step: u64, epoch: usize, split: &str, report: LossReport) -> Result<()> {
        let start = *self.start.get_or_insert_with(Instant::now);
        let rec = LogRecord {
            stage: stage.into(),
            step,
            epoch,
            split: split.into(),
            report,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if let Some(sink) = &mut self.sink {
            writeln!(sink, "{}", serde_json::to_string(&rec)?)
                .and_then(|_| sink.flush())
                .map_err(|e| Error::io("training log", e))?;
        }
        self.records.push(rec);
        Ok(())
    }

    /// `(split, step, total)` for every record; the wall-clock-free part of
    /// the log.
    pub fn trajectory(&self) -> Vec<(String, u64, f64)> {
        self.records
            .iter()
            .map(|r| (r.split.clone(), r.step, r.report.total))
            .collect()
    }

    pub fn last(&self, split: &str) -> Option<&LogRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }
}

/// Resumable trainer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    pub optimizer: AdamW,
    pub params: Snapshot,
    pub best: Option<(f64, Snapshot)>,
    pub bad_rounds: usize,
    pub done: bool,
    pub rng: RngState,
    /// Position inside the current pass over the training pairs (stage 2).
    pub order: Vec<usize>,
    pub cursor: usize,
}

/// Splits stimuli into (train, validation) by id.
pub fn split_validation(
    stimuli: &BTreeSet<StimulusId>,
    fraction: f64,
    seed: u64,
) -> (BTreeSet<StimulusId>, BTreeSet<StimulusId>) {
    let mut ids: Vec<StimulusId> = stimuli.iter().copied().collect();
    ids.shuffle(&mut rng_for(seed, &[TAG_VAL]));
    let n_val = (ids.len() as f64 * fraction).round() as usize;
    let val = ids[..n_val].iter().copied().collect();
    let train = ids[n_val..].iter().copied().collect();
    (train, val)
}

/// One stage-1 training example: an fMRI row and its pooled embedding.
#[derive(Clone, Debug)]
pub struct Pair {
    pub x: Mat,
    pub clip_pooled: Vec<f64>,
}

fn training_pairs(data: &Dataset, keep: &BTreeSet<StimulusId>) -> Result<Vec<Pair>> {
    data.samples()
        .iter()
        .filter(|s| keep.contains(&s.stimulus))
        .map(|s| {
            Ok(Pair {
                x: s.to_mat(),
                clip_pooled: data.embedding(s.stimulus)?.pooled(),
            })
        })
        .collect()
}

fn rows_to_mat(rows: &[Vec<f64>]) -> Mat {
    let d = rows.first().map(Vec::len).unwrap_or(0);
    Mat::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

fn non_finite(stage: &str, report: &LossReport) -> Result<()> {
    match report.non_finite_component() {
        Some(c) => Err(Error::NonFinite {
            component: format!("{stage} {c} loss"),
        }),
        None => Ok(()),
    }
}

/// Stage-1 trainer: composite loss, AdamW, early stopping on validation
/// reconstruction error.
pub struct Stage1Trainer {
    pub vae: BrainVae,
    train: Vec<Pair>,
    val: Vec<Pair>,
    state: TrainState,
    rng: ChaCha8Rng,
    tag: &'static str,
}

impl Stage1Trainer {
    /// Starts from a fresh model built from `config`.
    pub fn new(data: &Dataset, config: &ModelConfig) -> Result<Self> {
        Self::from_model(data, BrainVae::new(config)?, config, "stage1")
    }

    /// Starts from an existing model (used for adaptation). Training
    /// hyperparameters come from `config`.
    pub fn from_model(data: &Dataset, mut vae: BrainVae, config: &ModelConfig, tag: &'static str) -> Result<Self> {
        config.validate()?;
        let train_data = data.train();
        if train_data.is_empty() {
            return Err(Error::Size("stage 1 needs training samples".into()));
        }
        for subject in train_data.subjects() {
            vae.config.voxel_counts_by_subject.entry(subject).or_insert_with(|| train_data.voxel_counts()[&subject]);
        }
        let (tr, va) = split_validation(&train_data.stimuli(), config.val_fraction, config.seed);
        let train = training_pairs(&train_data, &tr)?;
        let val = training_pairs(&train_data, &va)?;
        if train.len() < 2 {
            return Err(Error::Size("stage 1 needs at least 2 training pairs".into()));
        }
        vae.config = BrainVae::with_training(&vae.config, config);
        let rng = rng_for(config.seed, &[TAG_STAGE1, tag_id(tag)]);
        let state = TrainState {
            step: 0,
            epoch: 0,
            optimizer: AdamW::from_config(config),
            params: vae.tree.snapshot(),
            best: None,
            bad_rounds: 0,
            done: false,
            rng: RngState::capture(&rng),
            order: Vec::new(),
            cursor: 0,
        };
        Ok(Self {
            vae,
            train,
            val,
            state,
            rng,
            tag,
        })
    }

    pub fn state(&self) -> TrainState {
        let mut s = self.state.clone();
        s.params = self.vae.tree.snapshot();
        s.rng = RngState::capture(&self.rng);
        s
    }

    pub fn resume(&mut self, state: TrainState) -> Result<()> {
        self.vae.tree.restore(&state.params)?;
        self.rng = state.rng.restore();
        self.state = state;
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        self.state.done || self.state.epoch >= self.vae.config.max_epochs
    }

    fn batch_loss(&self, batch: &[&Pair], eps: Option<Vec<Mat>>) -> Result<(LossReport, ParamGrads)> {
        stage1_batch_loss(&self.vae, batch, eps.as_deref(), self.tag)
    }

    /// Validation report with `z` fixed at the posterior mean; the
    /// contrastive term covers the whole validation set as one batch.
    pub fn validate(&self) -> Result<Option<LossReport>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let batch: Vec<&Pair> = self.val.iter().collect();
        Ok(Some(self.batch_loss(&batch, None)?.0))
    }

    /// One pass over the training pairs followed by validation and the
    /// early-stopping update, which tracks the validation reconstruction
    /// error.
    pub fn run_epoch(&mut self, log: &mut TrainLog) -> Result<()> {
        if self.is_done() {
            return Ok(());
        }
        let c = self.vae.config.clone();
        if self.state.epoch == 0 && self.state.step == 0 {
            if let Some(r) = self.validate()? {
                log.push(self.tag, 0, 0, "val", r)?;
            }
        }
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        for chunk in order.chunks(c.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&Pair> = chunk.iter().map(|&i| &self.train[i]).collect();
            let eps = c.variational.then(|| {
                batch
                    .iter()
                    .map(|_| standard_normal(&mut self.rng, c.hidden_tokens, c.latent_dim))
                    .collect::<Vec<_>>()
            });
            let (report, grads) = self.batch_loss(&batch, eps)?;
            self.state.optimizer.update(&mut self.vae.tree, &grads)?;
            self.state.step += 1;
            log.push(self.tag, self.state.step, self.state.epoch, "train", report)?;
        }
        self.state.epoch += 1;
        match self.validate()? {
            Some(r) => {
                let score = r.mse;
                log.push(self.tag, self.state.step, self.state.epoch, "val", r)?;
                let improved = self.state.best.as_ref().is_none_or(|(b, _)| score < *b);
                if improved {
                    self.state.best = Some((score, self.vae.tree.snapshot()));
                    self.state.bad_rounds = 0;
                } else {
                    self.state.bad_rounds += 1;
                    if self.state.bad_rounds >= c.patience {
                        self.state.done = true;
                    }
                }
            }
            None => self.state.best = Some((f64::NAN, self.vae.tree.snapshot())),
        }
        Ok(())
    }

    /// Runs to completion and returns the best-validation model.
    pub fn run(mut self, log: &mut TrainLog) -> Result<BrainVae> {
        while !self.is_done() {
            self.run_epoch(log)?;
        }
        self.finish()
    }

    pub fn finish(mut self) -> Result<BrainVae> {
        if let Some((_, best)) = &self.state.best {
            self.vae.tree.restore(best)?;
        }
        Ok(self.vae)
    }
}

impl BrainVae {
    /// Architecture fields of `arch` with training fields of `training`.
    fn with_training(arch: &ModelConfig, training: &ModelConfig) -> ModelConfig {
        ModelConfig {
            lambda_kl: training.lambda_kl,
            lambda_clip: training.lambda_clip,
            clip_temperature: training.clip_temperature,
            lr: training.lr,
            betas: training.betas,
            weight_decay: training.weight_decay,
            batch_size: training.batch_size,
            max_epochs: training.max_epochs,
            patience: training.patience,
            val_fraction: training.val_fraction,
            s2n_steps: training.s2n_steps,
            s2n_eval_every: training.s2n_eval_every,
            adapt_epochs: training.adapt_epochs,
            adapt_lr: training.adapt_lr,
            adapt_s2n_steps: training.adapt_s2n_steps,
            ..arch.clone()
        }
    }
}

/// Trains the autoencoder on the training split of `data`.
pub fn train_stage1(data: &Dataset, config: &ModelConfig, log: &mut TrainLog) -> Result<BrainVae> {
    Stage1Trainer::new(data, config)?.run(log)
}

/// Composite stage-1 loss of one batch and its gradient for every leaf.
///
/// `eps` holds one standard-normal grid per example; without it `z` is the
/// posterior mean. The contrastive term is skipped for single-item batches.
pub fn stage1_batch_loss(
vae: &BrainVae,
batch: &[&Pair],
eps: Option<&[Mat]>,
tag: &str,
) -> Result<(LossReport, ParamGrads)> {
    let c = &vae.config;
    let b = batch.len() as f64;
    let mut graphs = Vec::with_capacity(batch.len());
    let mut pooled = Vec::with_capacity(batch.len());
    let (mut mse, mut kl) = (0.0, 0.0);
    for (k, pair) in batch.iter().enumerate() {
        let mut g = Graph::new();
        let x = g.input(pair.x.clone());
        let noise = eps.map(|e| &e[k]);
        let vars = vae.record(&mut g, x, noise, pair.x.ncols())?;
        let mse_v = g.mse(vars.x_hat, pair.x.clone())?;
        let kl_v = g.kl(vars.mu, vars.log_var)?;
        let pool_v = g.mean_rows(vars.z);
        mse += g.scalar(mse_v) / b;
        kl += g.scalar(kl_v) / b;
        pooled.push(g.value(pool_v).row(0).to_vec());
        graphs.push((g, mse_v, kl_v, pool_v));
    }
    let clip_batch: Vec<Vec<f64>> = batch.iter().map(|p| p.clip_pooled.clone()).collect();
    let (clip, diag, clip_grad) = if batch.len() >= 2 {
        let out = softclip_pooled(&rows_to_mat(&pooled), &rows_to_mat(&clip_batch), c.clip_temperature)?;
        (out.loss, out.diag, Some(out.grad_pooled))
    } else {
        (0.0, RetrievalDiag::default(), None)
    };
    let lambda_kl = if c.variational { c.lambda_kl } else { 0.0 };
    let report = composite_loss(mse, kl, clip, diag, lambda_kl, c.lambda_clip);
    non_finite(tag, &report)?;

    let mut grads = ParamGrads::new(&vae.tree);
    for (k, (g, mse_v, kl_v, pool_v)) in graphs.iter().enumerate() {
        let mut seeds = vec![(*mse_v, Mat::from_elem((1, 1), 1.0 / b))];
        if lambda_kl != 0.0 {
            seeds.push((*kl_v, Mat::from_elem((1, 1), lambda_kl / b)));
        }
        if let (Some(cg), true) = (&clip_grad, c.lambda_clip != 0.0) {
            let row = cg.row(k).to_owned().insert_axis(ndarray::Axis(0)) * c.lambda_clip;
            seeds.push((*pool_v, row));
        }
        let back = g.backward(&seeds)?;
        for (id, m) in g.param_grads(&back) {
            grads.add(id, m);
        }
    }
    Ok((report, grads))
}

struct MapPair {
    clip: Mat,
    target: Mat,
}

fn mapper_pairs(data: &Dataset, vae: &BrainVae, keep: &BTreeSet<StimulusId>) -> Result<Vec<MapPair>> {
    data.samples()
        .iter()
        .filter(|s| keep.contains(&s.stimulus))
        .map(|s| {
            Ok(MapPair {
                clip: data.embedding(s.stimulus)?.to_mat(),
                target: vae.infer(&s.to_mat())?.mu,
            })
        })
        .collect()
}

/// Outcome of stage-2 training.
pub struct Stage2Outcome {
    pub mapper: S2nMapper,
    pub best_val: Option<f64>,
    /// Validation loss of predicting all-zero latents.
    pub zero_baseline_val: Option<f64>,
}

/// Stage-2 trainer: regresses posterior-mean latents of a frozen
/// autoencoder from semantic grids.
pub struct Stage2Trainer {
    pub mapper: S2nMapper,
    train: Vec<MapPair>,
    val: Vec<MapPair>,
    state: TrainState,
    rng: ChaCha8Rng,
    steps: u64,
    tag: &'static str,
}

impl Stage2Trainer {
    pub fn new(data: &Dataset, vae: &BrainVae, mapper: S2nMapper, config: &ModelConfig, tag: &'static str) -> Result<Self> {
        config.validate()?;
        let train_data = data.train();
        let (tr, va) = split_validation(&train_data.stimuli(), config.val_fraction, config.seed);
        let train = mapper_pairs(&train_data, vae, &tr)?;
        let val = mapper_pairs(&train_data, vae, &va)?;
        if train.is_empty() {
            return Err(Error::Size("stage 2 needs training pairs".into()));
        }
        let rng = rng_for(config.seed, &[TAG_STAGE2, tag_id(tag)]);
        let optimizer = AdamW::from_config(config);
        let mut mapper = mapper;
        mapper.config = BrainVae::with_training(&mapper.config, config);
        let state = TrainState {
            step: 0,
            epoch: 0,
            optimizer,
            params: mapper.tree.snapshot(),
            best: None,
            bad_rounds: 0,
            done: false,
            rng: RngState::capture(&rng),
            order: Vec::new(),
            cursor: 0,
        };
        Ok(Self {
            mapper,
            train,
            val,
            state,
            rng,
            steps: config.s2n_steps as u64,
            tag,
        })
    }

    pub fn state(&self) -> TrainState {
        let mut s = self.state.clone();
        s.params = self.mapper.tree.snapshot();
        s.rng = RngState::capture(&self.rng);
        s
    }

    pub fn resume(&mut self, state: TrainState) -> Result<()> {
        self.mapper.tree.restore(&state.params)?;
        self.rng = state.rng.restore();
        self.state = state;
        Ok(())
    }

    fn loss(&self, batch: &[&MapPair], with_grads: bool) -> Result<(f64, Option<ParamGrads>)> {
        let b = batch.len() as f64;
        let mut total = 0.0;
        let mut grads = with_grads.then(|| ParamGrads::new(&self.mapper.tree));
        for pair in batch {
            let mut g = Graph::new();
            let x = g.input(pair.clip.clone());
            let out = self.mapper.record(&mut g, x)?;
            let l = g.mse(out, pair.target.clone())?;
            total += g.scalar(l) / b;
            if let Some(acc) = &mut grads {
                let back = g.backward(&[(l, Mat::from_elem((1, 1), 1.0 / b))])?;
                for (id, m) in g.param_grads(&back) {
                    acc.add(id, m);
                }
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite {
                component: format!("{} alignment loss", self.tag),
            });
        }
        Ok((total, grads))
    }

    pub fn validate(&self) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let batch: Vec<&MapPair> = self.val.iter().collect();
        Ok(Some(self.loss(&batch, false)?.0))
    }

    pub fn zero_baseline(&self) -> Option<f64> {
        if self.val.is_empty() {
            return None;
        }
        let n = self.val.len() as f64;
        Some(
            self.val
                .iter()
                .map(|p| p.target.mapv(|v| v * v).mean().unwrap_or(0.0))
                .sum::<f64>()
                / n,
        )
    }

    fn report(loss: f64) -> LossReport {
        composite_loss(loss, 0.0, 0.0, RetrievalDiag::default(), 0.0, 0.0)
    }

    fn evaluate(&mut self, log: &mut TrainLog) -> Result<()> {
        let snapshot = || self.mapper.tree.snapshot();
        match self.validate()? {
            Some(v) => {
                log.push(self.tag, self.state.step, self.state.epoch, "val", Self::report(v))?;
                if self.state.best.as_ref().is_none_or(|(b, _)| v < *b) {
                    self.state.best = Some((v, snapshot()));
                }
            }
            None => self.state.best = Some((f64::NAN, snapshot())),
        }
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.steps
    }

    /// Runs up to `n` optimizer steps, evaluating every `s2n_eval_every`.
    pub fn run_steps(&mut self, n: u64, log: &mut TrainLog) -> Result<()> {
        let c = self.mapper.config.clone();
        if self.state.step == 0 && self.state.best.is_none() {
            self.evaluate(log)?;
        }
        let bs = c.batch_size.min(self.train.len()).max(1);
        for _ in 0..n {
            if self.is_done() {
                break;
            }
            let mut idx = Vec::with_capacity(bs);
            while idx.len() < bs {
                if self.state.cursor >= self.state.order.len() {
                    self.state.order = (0..self.train.len()).collect();
                    self.state.order.shuffle(&mut self.rng);
                    self.state.cursor = 0;
                    self.state.epoch += 1;
                }
                idx.push(self.state.order[self.state.cursor]);
                self.state.cursor += 1;
            }
            let batch: Vec<&MapPair> = idx.iter().map(|&i| &self.train[i]).collect();
            let (loss, grads) = self.loss(&batch, true)?;
            self.state
                .optimizer
                .update(&mut self.mapper.tree, grads.as_ref().expect("requested"))?;
            self.state.step += 1;
            log.push(self.tag, self.state.step, self.state.epoch, "train", Self::report(loss))?;
            if self.state.step.is_multiple_of(c.s2n_eval_every as u64) || self.is_done() {
                self.evaluate(log)?;
            }
        }
        Ok(())
    }

    pub fn run(mut self, log: &mut TrainLog) -> Result<Stage2Outcome> {
        self.run_steps(self.steps, log)?;
        let zero = self.zero_baseline();
        let best_val = self.state.best.as_ref().map(|(v, _)| *v).filter(|v| v.is_finite());
        if let Some((_, best)) = &self.state.best {
            self.mapper.tree.restore(best)?;
        }
        Ok(Stage2Outcome {
            mapper: self.mapper,
            best_val,
            zero_baseline_val: zero,
        })
    }
}

/// Trains a fresh mapper against the frozen autoencoder.
pub fn train_stage2(data: &Dataset, vae: &BrainVae, config: &ModelConfig, log: &mut TrainLog) -> Result<Stage2Outcome> {
    let mapper = S2nMapper::new(&BrainVae::with_training(&vae.config, config))?;
    Stage2Trainer::new(data, vae, mapper, config, "stage2")?.run(log)
}

/// Models adapted to a new subject.
pub struct Adapted {
    pub vae: BrainVae,
    pub s2n: S2nMapper,
    pub source_subjects: Vec<SubjectId>,
    pub target_subject: SubjectId,
}

/// Fine-tunes the whole autoencoder and the mapper's MLP leaves on a small
/// dataset from one subject the source models were not trained on, for
/// `adapt_epochs` and `adapt_s2n_steps` respectively at `adapt_lr`.
pub fn adapt_few_shot(
    vae: &BrainVae,
    s2n: &S2nMapper,
    novel: &Dataset,
    source_subjects: &[SubjectId],
    config: &ModelConfig,
    log: &mut TrainLog,
) -> Result<Adapted> {
    adapt_with_partition(vae, s2n, novel, source_subjects, config, Partition::MlpOnly, log)
}

/// [`adapt_few_shot`] with a chosen mapper partition.
pub fn adapt_with_partition(
    vae: &BrainVae,
    s2n: &S2nMapper,
    novel: &Dataset,
    source_subjects: &[SubjectId],
    config: &ModelConfig,
    partition: Partition,
    log: &mut TrainLog,
) -> Result<Adapted> {
    let subjects = novel.subjects();
    let target = match subjects.iter().collect::<Vec<_>>().as_slice() {
        [one] => **one,
        _ => {
            return Err(Error::Protocol(format!(
                "adaptation data must hold exactly one subject, found {subjects:?}"
            )))
        }
    };
    if source_subjects.contains(&target) {
        return Err(Error::Protocol(format!(
            "subject {target} is already in the source training set"
        )));
    }
    // A few-shot subset is too small to hold out a meaningful validation
    // split, so adaptation runs for a fixed budget on all of it.
    let budget = ModelConfig {
        val_fraction: 0.0,
        lr: config.adapt_lr,
        max_epochs: config.adapt_epochs,
        s2n_steps: config.adapt_s2n_steps,
        ..config.clone()
    };
    let adapted_vae = Stage1Trainer::from_model(novel, vae.clone(), &budget, "adapt-vae")?.run(log)?;
    let mut mapper = s2n.clone();
    mapper.set_partition(partition);
    let out = Stage2Trainer::new(novel, &adapted_vae, mapper, &budget, "adapt-s2n")?.run(log)?;
    Ok(Adapted {
        vae: adapted_vae,
        s2n: out.mapper,
        source_subjects: source_subjects.to_vec(),
        target_subject: target,
    })
}

/// `decode(s2n(z_clip) + nf·ε, v_out)`; `nf = 0` uses no randomness.
pub fn synthesize<R: Rng + ?Sized>(
    z_clip: &Mat,
    s2n: &S2nMapper,
    vae: &BrainVae,
    nf: f64,
    rng: &mut R,
    v_out: usize,
) -> Result<Mat> {
    if nf.is_nan() || nf < 0.0 {
        return Err(Error::Range(format!("noise factor {nf} must be >= 0")));
    }
    let mut z = s2n.forward(z_clip)?;
    if nf > 0.0 {
        let (rows, cols) = z.dim();
        z = z + standard_normal(rng, rows, cols) * nf;
    }
    vae.decode(&z, v_out)
}

/// Decodes the semantic grid directly, skipping the mapper.
pub fn synthesize_without_mapper(z_clip: &Mat, vae: &BrainVae, v_out: usize) -> Result<Mat> {
    vae.decode(z_clip, v_out)
}
