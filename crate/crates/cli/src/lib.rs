//! The `memrw` command surface: data generation, training, evaluation and
//! single-query rewriting. Every command is a plain function so tests can
//! drive the pipeline without spawning processes.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use memrw_core::checkpoint::CheckpointError;
use memrw_core::corpus::{
    generate_synthetic, read_jsonl, write_jsonl, CorpusError, DatasetSplit, GenConfig, Grammar, NBest,
    RephrasePair, UserMemory,
};
use memrw_core::eval::{compute_metrics, write_prcurve_csv, EvalError, Metrics};
use memrw_core::nn::AdamState;
use memrw_core::pipeline::{build_model, learn_vocab, predict_all, train_config_for, train_model};
use memrw_core::{Checkpoint, Model, ModelError, ModelKind, RewriteDecision, Rewriter, RunConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEED_ENV: &str = "MEMRW_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Divergence(_) => "divergence",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Checkpoint(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    /// The single-line form printed on stderr.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("memrw: error[{}]: {msg}", self.kind())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Config(m) => CliError::Config(format!("config error: {m}")),
            CorpusError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Divergence(m) => CliError::Divergence(format!("training diverged: {m}")),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Checkpoint(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

/// Sets `dotted.key = value` inside a TOML table. The value is parsed as a
/// TOML literal and falls back to a bare string.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let mut table = root;
    for part in &path[..path.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: {part} is not a table")))?;
    }
    table.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

/// Reads the run config (defaults when `path` is None), applies `--set`
/// overrides and then the seed from the environment, and validates.
pub fn load_config(path: Option<&Path>, overrides: &[String], env_seed: Option<&str>) -> Result<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| io_err(p, e))?,
        None => String::new(),
    };
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(format!("config error: {}", e.message())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(s) = env_seed {
        let seed: u64 = s
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("config error: {SEED_ENV}={s:?} is not an unsigned integer")))?;
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    let cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("config error: {}", e.message().trim())))?;
    cfg.validate().map_err(|m| CliError::Config(format!("config error: {m}")))?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub train_users: Vec<String>,
    pub test_users: Vec<String>,
}

/// The generator inputs saved next to the data, so evaluation can rebuild
/// the annotating grammar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub seed: u64,
    pub data: GenConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenReport {
    pub seed: u64,
    pub n_users: usize,
    pub n_pairs: usize,
    pub n_train_pairs: usize,
    pub n_test_pairs: usize,
    pub n_train_users: usize,
    pub n_test_users: usize,
    pub rewritable_fraction: f64,
    pub mean_memory_entries: f64,
}

pub struct Data {
    pub split: DatasetSplit,
    pub config: DataConfig,
    pub grammar: Grammar,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn users_of(pairs: &[RephrasePair]) -> BTreeSet<String> {
    pairs.iter().map(|p| p.user_id.clone()).collect()
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<GenReport> {
    let split = generate_synthetic(&cfg.data, cfg.seed)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;

    let train_users = users_of(&split.train);
    let test_users: BTreeSet<String> = split
        .memories
        .keys()
        .filter(|u| !train_users.contains(*u))
        .cloned()
        .collect();
    let pairs_path = out.join("pairs.jsonl");
    let f = File::create(&pairs_path).map_err(|e| io_err(&pairs_path, e))?;
    write_jsonl(BufWriter::new(f), split.train.iter().chain(&split.test))?;
    let mem_path = out.join("memories.jsonl");
    let f = File::create(&mem_path).map_err(|e| io_err(&mem_path, e))?;
    write_jsonl(BufWriter::new(f), split.memories.values())?;
    write_json(
        &out.join("split.json"),
        &SplitFile {
            seed: cfg.seed,
            train_users: train_users.iter().cloned().collect(),
            test_users: test_users.iter().cloned().collect(),
        },
    )?;
    write_json(
        &out.join("gen_config.json"),
        &DataConfig {
            seed: cfg.seed,
            data: cfg.data.clone(),
        },
    )?;

    let n_pairs = split.train.len() + split.test.len();
    let rewritable = split.train.iter().chain(&split.test).filter(|p| p.rewritable).count();
    let entries: usize = split.memories.values().map(|m| m.entries.len()).sum();
    let report = GenReport {
        seed: cfg.seed,
        n_users: split.memories.len(),
        n_pairs,
        n_train_pairs: split.train.len(),
        n_test_pairs: split.test.len(),
        n_train_users: train_users.len(),
        n_test_users: test_users.len(),
        rewritable_fraction: rewritable as f64 / n_pairs.max(1) as f64,
        mean_memory_entries: entries as f64 / split.memories.len().max(1) as f64,
    };
    write_json(&out.join("gen_report.json"), &report)?;
    Ok(report)
}

pub fn load_data(dir: &Path) -> Result<Data> {
    let config: DataConfig = read_json(&dir.join("gen_config.json"))?;
    let split_file: SplitFile = read_json(&dir.join("split.json"))?;
    let open = |name: &str| {
        let p = dir.join(name);
        File::open(&p).map(BufReader::new).map_err(|e| io_err(&p, e))
    };
    let pairs: Vec<RephrasePair> = read_jsonl(open("pairs.jsonl")?)?;
    let memories: Vec<UserMemory> = read_jsonl(open("memories.jsonl")?)?;
    for p in &pairs {
        p.first_turn.validate()?;
    }
    let train_users: BTreeSet<&str> = split_file.train_users.iter().map(String::as_str).collect();
    let (train, test) = pairs.into_iter().partition(|p| train_users.contains(p.user_id.as_str()));
    let grammar = Grammar::new(config.data.grammar.clone())?;
    Ok(Data {
        split: DatasetSplit {
            train,
            test,
            memories: memories.into_iter().map(|m| (m.user_id.clone(), m)).collect(),
        },
        config,
        grammar,
    })
}

pub fn parse_kind(s: &str) -> Result<ModelKind> {
    match s {
        "retrieval" => Ok(ModelKind::Retrieval),
        "pointer" => Ok(ModelKind::Pointer),
        "pointer_no_memory" | "pointer-no-memory" => Ok(ModelKind::PointerNoMemory),
        _ => Err(CliError::Input(format!(
            "unknown model kind {s:?} (expected retrieval, pointer or pointer_no_memory)"
        ))),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub model_kind: ModelKind,
    pub epochs_run: usize,
    pub total_epochs: usize,
    pub final_loss: Option<f64>,
    pub seconds: f64,
}

/// Path of the loss trace written beside a checkpoint.
pub fn trace_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".trace.json");
    PathBuf::from(s)
}

/// Trains from scratch, or continues `resume` for another
/// `*_train.epochs` epochs with its optimizer state.
pub fn train(
    kind: ModelKind,
    data: &Data,
    cfg: &RunConfig,
    out: &Path,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    let start = Instant::now();
    let mut tc = train_config_for(kind, cfg);
    let (mut model, mut adam, mut trace, seed) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.header.model_kind != kind {
                return Err(CliError::Checkpoint(format!(
                    "checkpoint mismatch: {} holds a {} model, not {}",
                    path.display(),
                    ckpt.header.model_kind.as_str(),
                    kind.as_str()
                )));
            }
            let (model, adam) = Model::from_checkpoint(&ckpt)?;
            let adam = adam.unwrap_or_else(|| AdamState::with_lr(model.params(), tc.lr));
            tc.lr = adam.lr;
            (model, adam, ckpt.header.trace, ckpt.header.seed)
        }
        None => {
            let vocab = learn_vocab(&data.split, cfg.subword.num_merges)
                .map_err(|e| CliError::Input(e.to_string()))?;
            let model = build_model(kind, cfg, vocab, &data.split.train)?;
            let adam = AdamState::with_lr(model.params(), tc.lr);
            (model, adam, Default::default(), cfg.seed)
        }
    };
    // Each resumed leg draws a fresh shuffle order.
    let done = trace.epochs.len() as u64;
    let leg = train_model(&mut model, &mut adam, &data.split, &tc, seed.wrapping_add(done))?;
    trace.steps.extend(leg.steps);
    trace.epochs.extend(leg.epochs);

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    model.to_checkpoint(seed, &tc, Some(&adam), &trace).save(out)?;
    write_json(&trace_path(out), &trace)?;
    Ok(TrainSummary {
        model_kind: kind,
        epochs_run: tc.epochs,
        total_epochs: trace.epochs.len(),
        final_loss: trace.last_epoch(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_kind: ModelKind,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Serialize)]
pub struct Runtime {
    pub load_seconds: f64,
    pub predict_seconds: f64,
    pub metrics_seconds: f64,
    pub threads: usize,
}

/// Scores the test split. metrics.json holds only deterministic values;
/// wall-clock timings go to runtime.json.
pub fn eval(checkpoint: &Path, data: &Data, out: &Path) -> Result<EvalReport> {
    let t0 = Instant::now();
    let ckpt = Checkpoint::load(checkpoint)?;
    let (model, _) = Model::from_checkpoint(&ckpt)?;
    let t1 = Instant::now();
    let preds = predict_all(&model, &data.split.test, &data.split, &data.grammar)?;
    let t2 = Instant::now();
    let (metrics, curve) = compute_metrics(&preds)?;
    let t3 = Instant::now();

    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let report = EvalReport {
        model_kind: model.kind(),
        metrics,
    };
    write_json(&out.join("metrics.json"), &report)?;
    let csv = out.join("prcurve.csv");
    let f = File::create(&csv).map_err(|e| io_err(&csv, e))?;
    write_prcurve_csv(BufWriter::new(f), &curve)?;
    write_json(
        &out.join("runtime.json"),
        &Runtime {
            load_seconds: (t1 - t0).as_secs_f64(),
            predict_seconds: (t2 - t1).as_secs_f64(),
            metrics_seconds: (t3 - t2).as_secs_f64(),
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    )?;
    Ok(report)
}

/// Accepts either a full n-best object or a bare list of hypothesis strings.
pub fn parse_nbest(text: &str) -> Result<NBest> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Input {
        Full(NBest),
        Texts(Vec<String>),
    }
    let nb = match serde_json::from_str::<Input>(text).map_err(|e| CliError::Input(format!("n-best: {e}")))? {
        Input::Full(nb) => nb,
        Input::Texts(texts) => {
            let hyps: Vec<Vec<String>> = texts.iter().map(|t| memrw_core::corpus::tokens(t)).collect();
            let scores = (0..hyps.len()).map(|i| -(i as f64)).collect();
            NBest { hyps, scores }
        }
    };
    nb.validate().map_err(|e| CliError::Input(format!("n-best: {e}")))?;
    Ok(nb)
}

pub fn parse_memory(text: &str) -> Result<UserMemory> {
    let m: UserMemory = serde_json::from_str(text).map_err(|e| CliError::Input(format!("memory: {e}")))?;
    if let Some(e) = m.entries.iter().find(|e| e.utterance.tokens.is_empty()) {
        return Err(CliError::Input(format!("memory: empty utterance (frequency {})", e.frequency)));
    }
    Ok(m)
}

pub fn rewrite(model: &Model, nbest: &NBest, memory: &UserMemory, threshold: f64) -> Result<RewriteDecision> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Input(format!("threshold {threshold} is outside [0, 1]")));
    }
    Ok(model.rewrite(nbest, memory, threshold)?)
}

pub fn load_model(checkpoint: &Path) -> Result<Model> {
    let ckpt = Checkpoint::load(checkpoint)?;
    Ok(Model::from_checkpoint(&ckpt)?.0)
}

pub fn write_line(mut w: impl Write, value: &impl Serialize) -> Result<()> {
    let s = serde_json::to_string(value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w, "{s}").map_err(|e| CliError::Io(e.to_string()))
}
