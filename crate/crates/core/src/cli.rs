//! Command-line entry points.
//!
//! Every command writes its outputs plus a `run.json` manifest into
//! `--out`. The manifest records the parsed invocation with absolute input
//! paths, the resolved configuration, a SHA-256 digest of the inputs, and a
//! digest of every deterministic output, so `v2f replay` can rerun the
//! command and verify the outputs bit for bit.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{eval_decoder, generate_augmented_set, train_toy_decoder, DecoderReport, RidgeDecoder};
use crate::config::{ModelConfig, SubjectId};
use crate::data::{sample_dataset, Dataset, FmriSample, Split, SplitSizes};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, stimulus_gallery, EvalOptions, Embedder};
use crate::metrics::EvalReport;
use crate::params::{read_json, write_json};
use crate::pipeline::{adapt_with_partition, synthesize, synthesize_without_mapper, train_stage1, train_stage2, TrainLog};
use crate::plot::{line_panels_svg, Series};
use crate::s2n::{Partition, S2nMapper};
use crate::seed::rng_for;
use crate::vae::BrainVae;
use crate::world::{make_synthetic_world, SyntheticWorldSpec};

/// Name of the per-command manifest.
pub const RUN_MANIFEST: &str = "run.json";
/// Name of the JSON-lines training log inside checkpoint directories.
pub const TRAIN_LOG: &str = "train_log.jsonl";
const SUBJECTS_FILE: &str = "subjects.json";

const TAG_GEN: u64 = 11;
const TAG_SYNTH: u64 = 12;
const TAG_EVAL: u64 = 13;
const TAG_AUG: u64 = 14;

#[derive(Parser, Debug)]
#[command(name = "v2f", version, about = "Synthesize and evaluate fMRI responses from semantic embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train the autoencoder (stage 1).
    TrainVae(TrainVaeArgs),
    /// Train the semantic-to-neural mapper against a frozen autoencoder (stage 2).
    TrainS2n(TrainS2nArgs),
    /// Adapt trained models to a new subject from a few sessions.
    Adapt(AdaptArgs),
    /// Synthesize fMRI for the test stimuli of one subject.
    Synthesize(SynthesizeArgs),
    /// Evaluate synthesized and recorded fMRI of one subject.
    Evaluate(EvaluateArgs),
    /// Compare a ridge decoder trained with and without synthetic pairs.
    AugmentDecode(AugmentDecodeArgs),
    /// Rerun a command from its manifest and verify its outputs.
    Replay(ReplayArgs),
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Common {
    /// JSON model configuration; unspecified fields keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenDataArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// JSON world specification; defaults to the desk world.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub train: usize,
    #[arg(long, default_value_t = 20)]
    pub test: usize,
    #[arg(long, default_value_t = 40)]
    pub sessions: u32,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainVaeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Train on this subject only; all subjects when absent.
    #[arg(long)]
    pub subject: Option<SubjectId>,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainS2nArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long)]
    pub subject: Option<SubjectId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionArg {
    Full,
    MlpOnly,
}

impl From<PartitionArg> for Partition {
    fn from(p: PartitionArg) -> Self {
        match p {
            PartitionArg::Full => Partition::Full,
            PartitionArg::MlpOnly => Partition::MlpOnly,
        }
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long)]
    pub s2n: PathBuf,
    /// The new subject.
    #[arg(long)]
    pub subject: SubjectId,
    /// Number of training sessions of the new subject to use.
    #[arg(long, default_value_t = 1)]
    pub hours: u32,
    #[arg(long, value_enum, default_value_t = PartitionArg::MlpOnly)]
    pub partition: PartitionArg,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vae: PathBuf,
    /// Mapper checkpoint; without it the semantic grid is decoded directly.
    #[arg(long)]
    pub s2n: Option<PathBuf>,
    #[arg(long)]
    pub subject: SubjectId,
    #[arg(long, default_value_t = 0.0)]
    pub nf: f64,
    /// Syntheses per stimulus.
    #[arg(long, default_value_t = 1)]
    pub samples: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderArg {
    /// Pooled posterior mean of the evaluated autoencoder.
    Encoder,
    /// Ridge probe fit on the subject's recorded training trials.
    Probe,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long)]
    pub s2n: Option<PathBuf>,
    /// Defaults to the first subject with test trials.
    #[arg(long)]
    pub subject: Option<SubjectId>,
    #[arg(long, default_value_t = 0.0)]
    pub nf: f64,
    #[arg(long, default_value_t = 300)]
    pub candidates: usize,
    #[arg(long, default_value_t = 30)]
    pub repeats: usize,
    #[arg(long, value_enum, default_value_t = EmbedderArg::Encoder)]
    pub embedder: EmbedderArg,
    /// Ridge strength of the probe embedder.
    #[arg(long, default_value_t = 1.0)]
    pub ridge: f64,
    /// Also write `curves.svg` from the checkpoints' training logs.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentDecodeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long)]
    pub s2n: PathBuf,
    #[arg(long)]
    pub subject: SubjectId,
    /// Sessions of real training data.
    #[arg(long, default_value_t = 1)]
    pub hours: u32,
    #[arg(long, default_value_t = 0.0)]
    pub nf: f64,
    /// Synthetic-to-real ratios to compare, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 4])]
    pub ratios: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub ridge: f64,
    #[arg(long, default_value_t = 300)]
    pub candidates: usize,
    #[arg(long, default_value_t = 30)]
    pub repeats: usize,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A `run.json` written by an earlier command.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the rerun; defaults to the recorded output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Record of one command execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub invocation: Command,
    pub config: serde_json::Value,
    pub seed: u64,
    /// SHA-256 over every declared input file.
    pub input_hash: String,
    /// Output file (relative to the output directory) → SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
}

/// What a command reports besides its files.
struct Outcome {
    config: serde_json::Value,
    seed: u64,
    json: serde_json::Value,
    table: Option<String>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(lines) => {
            println!("{lines}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit status for a failed command: 3 for a non-finite abort, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

/// Runs a parsed command and returns its standard-output text.
pub fn run(command: Command) -> Result<String> {
    match command {
        Command::Replay(args) => replay(&args),
        other => Ok(execute(absolutize(other)?)?.1),
    }
}

fn abs(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

fn abs_opt(p: &Option<PathBuf>) -> Result<Option<PathBuf>> {
    p.as_deref().map(abs).transpose()
}

/// Rewrites every path in the invocation as an absolute path.
fn absolutize(mut command: Command) -> Result<Command> {
    fn common(c: &mut Common) -> Result<()> {
        c.config = abs_opt(&c.config)?;
        c.out = abs(&c.out)?;
        Ok(())
    }
    match &mut command {
        Command::GenData(a) => {
            common(&mut a.common)?;
            a.spec = abs_opt(&a.spec)?;
        }
        Command::TrainVae(a) => {
            common(&mut a.common)?;
            a.data = abs(&a.data)?;
        }
        Command::TrainS2n(a) => {
            common(&mut a.common)?;
            a.data = abs(&a.data)?;
            a.vae = abs(&a.vae)?;
        }
        Command::Adapt(a) => {
            common(&mut a.common)?;
            a.data = abs(&a.data)?;
            a.vae = abs(&a.vae)?;
            a.s2n = abs(&a.s2n)?;
        }
        Command::Synthesize(a) => {
            common(&mut a.common)?;
            a.data = abs(&a.data)?;
            a.vae = abs(&a.vae)?;
            a.s2n = abs_opt(&a.s2n)?;
        }
        Command::Evaluate(a) => {
            common(&mut a.common)?;
            a.data = abs(&a.data)?;
            a.vae = abs(&a.vae)?;
            a.s2n = abs_opt(&a.s2n)?;
        }
        Command::AugmentDecode(a) => {
            common(&mut a.common)?;
            a.data = abs(&a.data)?;
            a.vae = abs(&a.vae)?;
            a.s2n = abs(&a.s2n)?;
        }
        Command::Replay(a) => {
            a.manifest = abs(&a.manifest)?;
            a.out = abs_opt(&a.out)?;
        }
    }
    Ok(command)
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::TrainVae(_) => "train-vae",
            Command::TrainS2n(_) => "train-s2n",
            Command::Adapt(_) => "adapt",
            Command::Synthesize(_) => "synthesize",
            Command::Evaluate(_) => "evaluate",
            Command::AugmentDecode(_) => "augment-decode",
            Command::Replay(_) => "replay",
        }
    }

    fn common_mut(&mut self) -> Option<&mut Common> {
        match self {
            Command::GenData(a) => Some(&mut a.common),
            Command::TrainVae(a) => Some(&mut a.common),
            Command::TrainS2n(a) => Some(&mut a.common),
            Command::Adapt(a) => Some(&mut a.common),
            Command::Synthesize(a) => Some(&mut a.common),
            Command::Evaluate(a) => Some(&mut a.common),
            Command::AugmentDecode(a) => Some(&mut a.common),
            Command::Replay(_) => None,
        }
    }

    /// Declared input paths.
    fn inputs(&self) -> Vec<PathBuf> {
        let mut v: Vec<Option<&PathBuf>> = Vec::new();
        let config = |c: &Common| c.config.clone();
        let mut out: Vec<PathBuf> = match self {
            Command::GenData(a) => {
                v.push(a.spec.as_ref());
                config(&a.common).into_iter().collect()
            }
            Command::TrainVae(a) => {
                v.push(Some(&a.data));
                config(&a.common).into_iter().collect()
            }
            Command::TrainS2n(a) => {
                v.extend([Some(&a.data), Some(&a.vae)]);
                config(&a.common).into_iter().collect()
            }
            Command::Adapt(a) => {
                v.extend([Some(&a.data), Some(&a.vae), Some(&a.s2n)]);
                config(&a.common).into_iter().collect()
            }
            Command::Synthesize(a) => {
                v.extend([Some(&a.data), Some(&a.vae), a.s2n.as_ref()]);
                config(&a.common).into_iter().collect()
            }
            Command::Evaluate(a) => {
                v.extend([Some(&a.data), Some(&a.vae), a.s2n.as_ref()]);
                config(&a.common).into_iter().collect()
            }
            Command::AugmentDecode(a) => {
                v.extend([Some(&a.data), Some(&a.vae), Some(&a.s2n)]);
                config(&a.common).into_iter().collect()
            }
            Command::Replay(a) => vec![a.manifest.clone()],
        };
        out.extend(v.into_iter().flatten().cloned());
        out
    }
}

/// Files excluded from digests: manifests and wall-clock training logs.
fn hashed(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name != RUN_MANIFEST && !name.ends_with(".jsonl")
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(root, &p, out)?;
        } else if hashed(&p) {
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            out.push((rel, p));
        }
    }
    Ok(())
}

fn files_of(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    if path.is_dir() {
        let mut v = Vec::new();
        walk(path, path, &mut v)?;
        Ok(v)
    } else if path.exists() {
        Ok(vec![(String::new(), path.to_path_buf())])
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "input does not exist")))
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digest over the relative names and contents of every input file.
pub fn input_hash(inputs: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for input in inputs {
        for (rel, p) in files_of(input)? {
            h.update(rel.as_bytes());
            h.update([0]);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Digest of every deterministic file under `dir`.
pub fn output_digests(dir: &Path) -> Result<BTreeMap<String, String>> {
    files_of(dir)?
        .into_iter()
        .map(|(rel, p)| Ok((rel, sha256_file(&p)?)))
        .collect()
}

fn execute(command: Command) -> Result<(RunManifest, String)> {
    let start = Instant::now();
    let inputs = command.inputs();
    let digest = input_hash(&inputs)?;
    let out_dir = match &command {
        Command::GenData(a) => a.common.out.clone(),
        Command::TrainVae(a) => a.common.out.clone(),
        Command::TrainS2n(a) => a.common.out.clone(),
        Command::Adapt(a) => a.common.out.clone(),
        Command::Synthesize(a) => a.common.out.clone(),
        Command::Evaluate(a) => a.common.out.clone(),
        Command::AugmentDecode(a) => a.common.out.clone(),
        Command::Replay(_) => unreachable!("replay is dispatched separately"),
    };
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let outcome = match &command {
        Command::GenData(a) => gen_data(a)?,
        Command::TrainVae(a) => train_vae(a)?,
        Command::TrainS2n(a) => train_s2n(a)?,
        Command::Adapt(a) => adapt(a)?,
        Command::Synthesize(a) => synthesize_cmd(a)?,
        Command::Evaluate(a) => evaluate_cmd(a)?,
        Command::AugmentDecode(a) => augment_decode(a)?,
        Command::Replay(_) => unreachable!("replay is dispatched separately"),
    };
    let manifest = RunManifest {
        command: command.name().into(),
        invocation: command,
        config: outcome.config,
        seed: outcome.seed,
        input_hash: digest,
        outputs: output_digests(&out_dir)?,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_json(&out_dir.join(RUN_MANIFEST), &manifest)?;
    let mut text = serde_json::to_string_pretty(&outcome.json)?;
    if let Some(t) = outcome.table {
        text.push('\n');
        text.push_str(&t);
    }
    Ok((manifest, text))
}

/// Reruns the recorded invocation and checks inputs and outputs against
/// the recorded digests.
fn replay(args: &ReplayArgs) -> Result<String> {
    let recorded: RunManifest = read_json(&args.manifest)?;
    let mut command = recorded.invocation.clone();
    if matches!(command, Command::Replay(_)) {
        return Err(Error::Protocol("a replay manifest cannot itself be replayed".into()));
    }
    let now = input_hash(&command.inputs())?;
    if now != recorded.input_hash {
        return Err(Error::Protocol(format!(
            "inputs changed since the recorded run (recorded {}, now {now})",
            recorded.input_hash
        )));
    }
    if let (Some(out), Some(common)) = (&args.out, command.common_mut()) {
        common.out = out.clone();
    }
    let (fresh, _) = execute(command)?;
    let differing: Vec<&String> = recorded
        .outputs
        .keys()
        .chain(fresh.outputs.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| recorded.outputs.get(*k) != fresh.outputs.get(*k))
        .collect();
    if !differing.is_empty() {
        return Err(Error::Protocol(format!("replay outputs differ: {differing:?}")));
    }
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "replayed": recorded.command,
        "identical_outputs": fresh.outputs.len(),
    }))?)
}

/// Defaults, then the config file, then `--seed`.
pub fn resolve_config(common: &Common) -> Result<ModelConfig> {
    let mut c = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => ModelConfig::desk(),
    };
    if let Some(seed) = common.seed {
        c.seed = seed;
    }
    c.validate()?;
    Ok(c)
}

fn config_json(c: &ModelConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(c)?)
}

fn gen_data(a: &GenDataArgs) -> Result<Outcome> {
    let spec: SyntheticWorldSpec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticWorldSpec::desk(),
    };
    let seed = match &a.common.config {
        Some(_) => resolve_config(&a.common)?.seed,
        None => a.common.seed.unwrap_or(0),
    };
    let world = make_synthetic_world(&spec, seed)?;
    let sizes = SplitSizes {
        train: a.train,
        test: a.test,
        sessions: a.sessions,
    };
    let data = sample_dataset(&world, sizes, &mut rng_for(seed, &[TAG_GEN]))?;
    data.save(&a.common.out)?;
    write_json(&a.common.out.join("world.json"), &spec)?;
    let json = serde_json::json!({
        "samples": data.len(),
        "stimuli": data.stimuli().len(),
        "subjects": data.voxel_counts(),
        "sessions": data.n_sessions(),
    });
    Ok(Outcome {
        config: serde_json::json!({ "world": spec, "sizes": sizes }),
        seed,
        json,
        table: None,
    })
}

fn select(data: &Dataset, subject: Option<SubjectId>) -> Result<Dataset> {
    match subject {
        Some(s) if data.subjects().contains(&s) => Ok(data.for_subject(s)),
        Some(s) => Err(Error::Config(format!("subject {s} is not in the dataset"))),
        None => Ok(data.clone()),
    }
}

fn final_losses(log: &TrainLog) -> serde_json::Value {
    serde_json::json!({
        "train": log.last("train").map(|r| &r.report),
        "val": log.last("val").map(|r| &r.report),
        "records": log.records.len(),
    })
}

fn train_vae(a: &TrainVaeArgs) -> Result<Outcome> {
    let config = resolve_config(&a.common)?;
    let data = select(&Dataset::load(&a.data)?, a.subject)?;
    let mut log = TrainLog::to_file(&a.common.out.join(TRAIN_LOG))?;
    let vae = train_stage1(&data, &config, &mut log)?;
    vae.save(&a.common.out)?;
    write_json(&a.common.out.join(SUBJECTS_FILE), &data.train().subjects())?;
    Ok(Outcome {
        config: config_json(&config)?,
        seed: config.seed,
        json: final_losses(&log),
        table: None,
    })
}

fn train_s2n(a: &TrainS2nArgs) -> Result<Outcome> {
    let config = resolve_config(&a.common)?;
    let data = select(&Dataset::load(&a.data)?, a.subject)?;
    let vae = BrainVae::load(&a.vae)?;
    let mut log = TrainLog::to_file(&a.common.out.join(TRAIN_LOG))?;
    let out = train_stage2(&data, &vae, &config, &mut log)?;
    out.mapper.save(&a.common.out)?;
    Ok(Outcome {
        config: config_json(&config)?,
        seed: config.seed,
        json: serde_json::json!({
            "best_val": out.best_val,
            "zero_baseline_val": out.zero_baseline_val,
            "records": log.records.len(),
        }),
        table: None,
    })
}

fn adapt(a: &AdaptArgs) -> Result<Outcome> {
    let config = resolve_config(&a.common)?;
    let data = Dataset::load(&a.data)?;
    let novel = select(&data, Some(a.subject))?.train().subset_hours(a.hours)?;
    let vae = BrainVae::load(&a.vae)?;
    let s2n = S2nMapper::load(&a.s2n)?;
    let sources_path = a.vae.join(SUBJECTS_FILE);
    let sources: Vec<SubjectId> = if sources_path.exists() {
        read_json(&sources_path)?
    } else {
        Vec::new()
    };
    let mut log = TrainLog::to_file(&a.common.out.join(TRAIN_LOG))?;
    let adapted = adapt_with_partition(&vae, &s2n, &novel, &sources, &config, a.partition.into(), &mut log)?;
    adapted.vae.save(&a.common.out.join("vae"))?;
    adapted.s2n.save(&a.common.out.join("s2n"))?;
    let mut subjects = sources.clone();
    subjects.push(a.subject);
    write_json(&a.common.out.join("vae").join(SUBJECTS_FILE), &subjects)?;
    Ok(Outcome {
        config: config_json(&config)?,
        seed: config.seed,
        json: serde_json::json!({
            "source_subjects": adapted.source_subjects,
            "target_subject": adapted.target_subject,
            "samples": novel.len(),
            "partition": Partition::from(a.partition),
        }),
        table: None,
    })
}

fn synthesize_cmd(a: &SynthesizeArgs) -> Result<Outcome> {
    let config = resolve_config(&a.common)?;
    let data = Dataset::load(&a.data)?;
    let vae = BrainVae::load(&a.vae)?;
    let s2n = a.s2n.as_deref().map(S2nMapper::load).transpose()?;
    let test = select(&data, Some(a.subject))?.test();
    let v = *test
        .voxel_counts()
        .get(&a.subject)
        .ok_or_else(|| Error::Config(format!("subject {} has no test trials", a.subject)))?;
    let mut rng = rng_for(config.seed, &[TAG_SYNTH]);
    let mut samples = Vec::new();
    let mut embeddings = BTreeMap::new();
    for stim in test.stimuli() {
        let emb = data.embedding(stim)?;
        for trial in 0..a.samples {
            let x = match &s2n {
                Some(m) => synthesize(&emb.to_mat(), m, &vae, a.nf, &mut rng, v)?,
                None => synthesize_without_mapper(&emb.to_mat(), &vae, v)?,
            };
            samples.push(FmriSample {
                subject: a.subject,
                stimulus: stim,
                trial,
                split: Split::Test,
                session: 0,
                values: x.iter().map(|&t| t as f32).collect(),
            });
        }
        embeddings.insert(stim, emb.clone());
    }
    let synth = Dataset::new(samples, embeddings, 1)?;
    synth.save(&a.common.out)?;
    Ok(Outcome {
        config: config_json(&config)?,
        seed: config.seed,
        json: serde_json::json!({ "samples": synth.len(), "voxels": v, "nf": a.nf }),
        table: None,
    })
}

/// Ridge probe from recorded training trials of `subject` to pooled
/// embeddings.
pub fn fit_probe(data: &Dataset, subject: SubjectId, ridge: f64) -> Result<RidgeDecoder> {
    let train = data.train().for_subject(subject);
    let xs: Vec<Vec<f64>> = train
        .samples()
        .iter()
        .map(|s| s.values.iter().map(|&v| v as f64).collect())
        .collect();
    let ys: Vec<Vec<f64>> = train
        .samples()
        .iter()
        .map(|s| Ok(data.embedding(s.stimulus)?.pooled()))
        .collect::<Result<_>>()?;
    train_toy_decoder(&xs, &ys, ridge)
}

fn curves(dirs: &[(&str, &Path)]) -> Result<Vec<Series>> {
    let mut series = Vec::new();
    for (label, dir) in dirs {
        let path = dir.join(TRAIN_LOG);
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut by_stage: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: crate::pipeline::LogRecord = serde_json::from_str(line)?;
            if rec.split == "val" {
                by_stage
                    .entry(rec.stage)
                    .or_default()
                    .push((rec.step as f64, rec.report.mse));
            }
        }
        for (stage, points) in by_stage {
            series.push(Series {
                label: format!("{label}: {stage} validation MSE"),
                points,
            });
        }
    }
    Ok(series)
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<Outcome> {
    let config = resolve_config(&a.common)?;
    let data = Dataset::load(&a.data)?;
    let vae = BrainVae::load(&a.vae)?;
    let s2n = a.s2n.as_deref().map(S2nMapper::load).transpose()?;
    let subject = match a.subject {
        Some(s) => s,
        None => *data
            .test()
            .subjects()
            .iter()
            .next()
            .ok_or_else(|| Error::Size("dataset has no test trials".into()))?,
    };
    let probe = match a.embedder {
        EmbedderArg::Probe => Some(fit_probe(&data, subject, a.ridge)?),
        EmbedderArg::Encoder => None,
    };
    let embedder = match &probe {
        Some(p) => Embedder::Probe(p),
        None => Embedder::Encoder(&vae),
    };
    let opts = EvalOptions {
        candidates: a.candidates,
        repeats: a.repeats,
        nf: a.nf,
        use_mapper: s2n.is_some(),
        ..EvalOptions::default()
    };
    let mut rng = rng_for(config.seed, &[TAG_EVAL]);
    let report: EvalReport = evaluate(&vae, s2n.as_ref(), embedder, &data, subject, &opts, &mut rng)?;
    write_json(&a.common.out.join("report.json"), &report)?;
    if a.plot {
        let mut dirs = vec![("autoencoder", a.vae.as_path())];
        if let Some(p) = &a.s2n {
            dirs.push(("mapper", p.as_path()));
        }
        let svg = line_panels_svg("Training curves", "step", &curves(&dirs)?);
        fs::write(a.common.out.join("curves.svg"), svg).map_err(|e| Error::io(&a.common.out, e))?;
    }
    Ok(Outcome {
        config: config_json(&config)?,
        seed: config.seed,
        json: serde_json::to_value(&report)?,
        table: Some(report.render_table()),
    })
}

/// One row of the augmentation comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRow {
    pub label: String,
    pub real_pairs: usize,
    pub synthetic_pairs: usize,
    pub report: DecoderReport,
}

fn render_augment(rows: &[AugmentRow]) -> String {
    let mut s = format!(
        "{:<16} {:>6} {:>6} {:>16} {:>16} {:>8} {:>8}\n",
        "Decoder", "Real", "Syn", "Image", "Brain", "2-way I", "2-way B"
    );
    for r in rows {
        let pct = |m: f64, sd: f64| format!("{:.1}% ± {:.1}", 100.0 * m, 100.0 * sd);
        s.push_str(&format!(
            "{:<16} {:>6} {:>6} {:>16} {:>16} {:>7.1}% {:>7.1}%\n",
            r.label,
            r.real_pairs,
            r.synthetic_pairs,
            pct(r.report.image_retrieval.mean, r.report.image_retrieval.sd),
            pct(r.report.brain_retrieval.mean, r.report.brain_retrieval.sd),
            100.0 * r.report.two_way_image,
            100.0 * r.report.two_way_brain,
        ));
    }
    s
}

fn augment_decode(a: &AugmentDecodeArgs) -> Result<Outcome> {
    let config = resolve_config(&a.common)?;
    let data = Dataset::load(&a.data)?;
    let vae = BrainVae::load(&a.vae)?;
    let s2n = S2nMapper::load(&a.s2n)?;
    let subject_data = select(&data, Some(a.subject))?;
    let real = subject_data.train().subset_hours(a.hours)?;
    let real_stimuli = real.stimuli();
    let mut rng = rng_for(config.seed, &[TAG_AUG]);
    let mut pool: Vec<_> = data
        .train()
        .stimuli()
        .into_iter()
        .filter(|s| !real_stimuli.contains(s))
        .collect();
    pool.shuffle(&mut rng);
    let unseen: Vec<_> = pool.iter().map(|&s| data.embedding(s)).collect::<Result<_>>()?;
    let test = subject_data.test();
    let gallery = stimulus_gallery(&data);
    let model_id = a.s2n.display().to_string();

    let mut rows = Vec::new();
    for &ratio in std::iter::once(&0).chain(&a.ratios) {
        let set = generate_augmented_set(&vae, &s2n, &model_id, &real, &unseen, ratio, a.nf, &mut rng)?;
        let (xs, ys) = set.pairs()?;
        let decoder = train_toy_decoder(&xs, &ys, a.ridge)?;
        let report = eval_decoder(&decoder, &set.stimuli(), &test, &gallery, a.candidates, a.repeats, 1000, &mut rng)?;
        rows.push(AugmentRow {
            label: if ratio == 0 {
                format!("real({}h)", a.hours)
            } else {
                format!("real({}h)+DA({ratio}x)", a.hours)
            },
            real_pairs: real.len(),
            synthetic_pairs: set.synthetic.len(),
            report,
        });
    }
    write_json(&a.common.out.join("augment_report.json"), &rows)?;
    Ok(Outcome {
        config: config_json(&config)?,
        seed: config.seed,
        json: serde_json::to_value(&rows)?,
        table: Some(render_augment(&rows)),
    })
}
