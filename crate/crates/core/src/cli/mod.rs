//! Command-line harness: configuration, run manifests and the subcommands
//! that chain data generation, ε estimation, training, evaluation, sweeps
//! and reporting.

mod config;
mod manifest;

pub use config::{apply_override, load_config, RunConfig, SweepSettings, TrainMode};
pub use manifest::{sha256_file, FileHash, Manifest};

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encode::{EncodeError, ImageEncoder, TextEncoder};
use crate::eval::{
    compute_modality_offset, image_captioning_eval, noise_sweep, read_sweep_csv, references_by_scene, render_charts,
    text_reconstruction_eval, write_sweep_csv, EvalError, Method, MetricsReport, SweepConfig, SweepInputs, SweepRow,
    METRIC_NAMES,
};
use crate::model::{load_checkpoint, save_checkpoint, CaptionModel, Checkpoint, ModelError};
use crate::train::{
    estimate_epsilon, optimize, paired_examples, text_examples, NoiseSource, Start, TrainError, TrainOutcome,
};
use crate::world::{
    generate_corpus, read_corpus, read_scenes, write_corpus, write_scenes, Caption, Corpus, Scene, Split, Vocabulary,
    WorldError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing {path}; run `noisecap {producer}` first")]
    MissingArtifact { path: PathBuf, producer: &'static str },
    #[error("{0} already exists; pass --force to overwrite")]
    Exists(PathBuf),
    #[error("nothing to report under {0}: no sweep or eval results found")]
    EmptyReport(PathBuf),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for usage errors, 2 for failures while running a command.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Parser, Debug)]
#[command(name = "noisecap", version, about = "Noise-injected text-only caption decoder on a synthetic embedding testbed")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run config, or a manifest JSON whose embedded config is reused.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Config override `dotted.key=value`; repeatable, applied in order.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus and scenes.
    GenData,
    /// Estimate ε from caption groups of training scenes.
    EstimateEps,
    /// Train a decoder and write a checkpoint.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every method over the noise grid.
    Sweep,
    /// Summarize sweep and eval results of a run directory.
    Report { run_dir: Option<PathBuf> },
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let cfg = load_config(&cli.common)?;
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg, cli.common.force),
        Command::EstimateEps => cmd_estimate_eps(&cfg, cli.common.force),
        Command::Train => cmd_train(&cfg, cli.common.force),
        Command::Eval { checkpoint } => cmd_eval(&cfg, checkpoint.as_deref(), cli.common.force),
        Command::Sweep => cmd_sweep(&cfg, cli.common.force),
        Command::Report { run_dir } => cmd_report(&cfg, run_dir.as_deref(), cli.common.force),
    }
}

/// Fixed locations of every artifact inside a run directory.
pub mod layout {
    pub const CORPUS: &str = "data/corpus.jsonl";
    pub const SCENES: &str = "data/scenes.jsonl";
    pub const EPSILON: &str = "epsilon.json";
    pub const CHECKPOINT: &str = "checkpoints/model.gdck";
    pub const TRAIN_LOG: &str = "train_log.csv";
    pub const EVAL_METRICS: &str = "eval/metrics.csv";
    pub const EVAL_REPORTS: &str = "eval/reports.json";
    pub const SWEEP_DIR: &str = "sweep";
    pub const REPORT_DIR: &str = "report";
    pub const MANIFEST_DIR: &str = "manifests";
}

/// Stored ε estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRecord {
    pub epsilon: f64,
    pub epsilon_sq: f64,
    pub scene_ids: Vec<u64>,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    command: &'static str,
    force: bool,
    clock: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a RunConfig, command: &'static str, force: bool) -> Self {
        Run { cfg, command, force, clock: Instant::now(), inputs: Vec::new(), outputs: Vec::new() }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.cfg.out.join(rel)
    }

    fn input(&mut self, rel: &str, producer: &'static str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if !p.is_file() {
            return Err(CliError::MissingArtifact { path: p, producer });
        }
        self.inputs.push(p.clone());
        Ok(p)
    }

    /// Claims an output path, refusing to clobber without `--force`.
    fn output(&mut self, p: PathBuf) -> Result<PathBuf, CliError> {
        if p.exists() && !self.force {
            return Err(CliError::Exists(p));
        }
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        self.outputs.push(p.clone());
        Ok(p)
    }

    /// Records files a renderer wrote under `dir`, which must not have existed before.
    fn rendered(&mut self, dir: &Path, render: impl FnOnce(&Path) -> Result<Vec<PathBuf>, EvalError>) -> Result<(), CliError> {
        if dir.exists() && !self.force {
            return Err(CliError::Exists(dir.to_path_buf()));
        }
        self.outputs.extend(render(dir)?);
        Ok(())
    }

    fn manifest_path(&self) -> PathBuf {
        self.cfg.out.join(layout::MANIFEST_DIR).join(format!("{}.json", self.command))
    }

    fn finish(self, summary: serde_json::Value) -> Result<Vec<PathBuf>, CliError> {
        let root = &self.cfg.out;
        let hash = |ps: &[PathBuf]| -> Result<Vec<FileHash>, CliError> {
            ps.iter().map(|p| FileHash::of(p, root).map_err(io_err(p))).collect()
        };
        let manifest = Manifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.cfg.clone(),
            inputs: hash(&self.inputs)?,
            outputs: hash(&self.outputs)?,
            summary,
            wall_seconds: self.clock.elapsed().as_secs_f64(),
        };
        let path = self.manifest_path();
        manifest.write(&path).map_err(io_err(&path))?;
        let mut out = self.outputs;
        out.push(path);
        Ok(out)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let s = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&s)?)
}

pub fn cmd_gen_data(cfg: &RunConfig, force: bool) -> Result<Vec<PathBuf>, CliError> {
    let mut run = Run::new(cfg, "gen-data", force);
    let corpus_path = run.output(run.path(layout::CORPUS))?;
    let scenes_path = run.output(run.path(layout::SCENES))?;
    let vocab = Vocabulary::from_grammar();
    let (corpus, scenes) = generate_corpus(&cfg.world, &vocab)?;
    write_corpus(&corpus, &corpus_path)?;
    write_scenes(&scenes, &corpus, &scenes_path)?;
    run.finish(serde_json::json!({ "captions": corpus.len(), "scenes": scenes.len(), "vocab_hash": vocab.hash() }))
}

struct Data {
    vocab: Vocabulary,
    corpus: Corpus,
    scenes: Vec<Scene>,
}

fn load_data(run: &mut Run<'_>, with_scenes: bool) -> Result<Data, CliError> {
    let vocab = Vocabulary::from_grammar();
    let corpus = read_corpus(&run.input(layout::CORPUS, "gen-data")?, &vocab)?;
    let scenes = if with_scenes {
        read_scenes(&run.input(layout::SCENES, "gen-data")?)?.iter().map(|r| r.scene()).collect()
    } else {
        Vec::new()
    };
    Ok(Data { vocab, corpus, scenes })
}

fn encoders(cfg: &RunConfig, vocab: &Vocabulary) -> Result<ImageEncoder, CliError> {
    let text = TextEncoder::new(cfg.text_encoder.clone(), vocab)?;
    Ok(ImageEncoder::new(text, cfg.gap.clone())?)
}

/// Caption groups of the first `n` training scenes, in scene-id order.
pub fn estimation_groups(corpus: &Corpus, n: usize) -> Vec<(u64, Vec<&Caption>)> {
    corpus.groups().into_iter().filter(|(id, _)| corpus.scene_split(*id) == Some(Split::Train)).take(n).collect()
}

pub fn cmd_estimate_eps(cfg: &RunConfig, force: bool) -> Result<Vec<PathBuf>, CliError> {
    let mut run = Run::new(cfg, "estimate-eps", force);
    let data = load_data(&mut run, false)?;
    let out = run.output(run.path(layout::EPSILON))?;
    let text = TextEncoder::new(cfg.text_encoder.clone(), &data.vocab)?;
    let groups = estimation_groups(&data.corpus, cfg.noise_groups);
    if groups.len() < cfg.noise_groups {
        return Err(CliError::Config(format!(
            "noise_groups = {} but the corpus has only {} training scenes",
            cfg.noise_groups,
            groups.len()
        )));
    }
    let captions: Vec<Vec<&Caption>> = groups.iter().map(|(_, g)| g.clone()).collect();
    let eps = estimate_epsilon(&captions, &text)?;
    let record = EpsilonRecord { epsilon: eps, epsilon_sq: eps * eps, scene_ids: groups.iter().map(|(id, _)| *id).collect() };
    write_json(&out, &record)?;
    println!("epsilon {:.6} (epsilon^2 {:.6}) from {} scenes", eps, eps * eps, groups.len());
    run.finish(serde_json::to_value(&record)?)
}

fn resolve_epsilon(run: &mut Run<'_>) -> Result<f32, CliError> {
    match run.cfg.noise.source {
        NoiseSource::Fixed => Ok(run.cfg.noise.epsilon),
        NoiseSource::Estimated => {
            let p = run.input(layout::EPSILON, "estimate-eps")?;
            Ok(read_json::<EpsilonRecord>(&p)?.epsilon as f32)
        }
    }
}

fn fresh_model(cfg: &RunConfig, vocab: &Vocabulary) -> Result<CaptionModel, CliError> {
    let mut mc = cfg.model.clone();
    if mc.vocab_size == 0 {
        mc.vocab_size = vocab.len();
    }
    Ok(CaptionModel::new(mc, cfg.seed)?)
}

pub fn cmd_train(cfg: &RunConfig, force: bool) -> Result<Vec<PathBuf>, CliError> {
    let mut run = Run::new(cfg, "train", force);
    let data = load_data(&mut run, cfg.mode == TrainMode::SupervisedPaired)?;
    let eps = resolve_epsilon(&mut run)?;
    let ckpt_path = run.output(run.path(layout::CHECKPOINT))?;
    let log_path = run.output(run.path(layout::TRAIN_LOG))?;
    let image = encoders(cfg, &data.vocab)?;
    let train: Vec<&Caption> = data.corpus.split(Split::Train).collect();
    let val: Vec<&Caption> = data.corpus.split(Split::Val).collect();
    let (tr, va) = match cfg.mode {
        TrainMode::TextOnly => {
            let t = image.text_encoder();
            (text_examples(train.iter().copied(), t)?, text_examples(val.iter().copied(), t)?)
        }
        TrainMode::SupervisedPaired => (
            paired_examples(train.iter().copied(), &data.scenes, &image)?,
            paired_examples(val.iter().copied(), &data.scenes, &image)?,
        ),
    };
    let model = fresh_model(cfg, &data.vocab)?;
    let TrainOutcome { model, optimizer, log, best_val_loss, steps_run, epsilon } =
        optimize(Start::Fresh(model), &tr, &va, eps, &cfg.train)?;
    let step = optimizer.step;
    save_checkpoint(&Checkpoint::new(model, &data.vocab, step, epsilon, Some(optimizer)), &ckpt_path)?;
    log.write_csv(&log_path)?;
    run.finish(serde_json::json!({
        "epsilon": epsilon,
        "steps_run": steps_run,
        "best_val_loss": best_val_loss,
        "final_loss": log.rows.last().map(|r| r.loss),
    }))
}

fn report_csv_rows(reports: &BTreeMap<String, MetricsReport>) -> Vec<[String; 3]> {
    let mut rows = Vec::new();
    for (method, r) in reports {
        for (metric, value) in r.values() {
            rows.push([method.clone(), metric.to_string(), format!("{value:.6}")]);
        }
    }
    rows
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, force: bool) -> Result<Vec<PathBuf>, CliError> {
    let mut run = Run::new(cfg, "eval", force);
    let data = load_data(&mut run, true)?;
    let ckpt_path = match checkpoint {
        Some(p) if p.is_file() => {
            run.inputs.push(p.to_path_buf());
            p.to_path_buf()
        }
        Some(p) => return Err(CliError::MissingArtifact { path: p.to_path_buf(), producer: "train" }),
        None => run.input(layout::CHECKPOINT, "train")?,
    };
    let metrics_path = run.output(run.path(layout::EVAL_METRICS))?;
    let reports_path = run.output(run.path(layout::EVAL_REPORTS))?;
    let model = load_checkpoint(&ckpt_path, &data.vocab)?.model;
    let image = encoders(cfg, &data.vocab)?;
    let text = image.text_encoder();
    let split_of = |s: &Scene| data.corpus.scene_split(s.scene_id);
    let test_scenes: Vec<&Scene> = data.scenes.iter().filter(|s| split_of(s) == Some(Split::Test)).collect();
    let test: Vec<&Caption> = data.corpus.split(Split::Test).collect();
    let refs = references_by_scene(test.iter().copied(), &data.vocab);
    let train_texts = text_examples(data.corpus.split(Split::Train), text)?.into_iter().map(|e| e.embedding).collect::<Vec<_>>();
    let train_images = data
        .scenes
        .iter()
        .filter(|s| split_of(s) == Some(Split::Train))
        .map(|s| image.encode_image(s).map(|e| e.values))
        .collect::<Result<Vec<_>, _>>()?;
    let offset = compute_modality_offset(&train_texts, &train_images)?;
    let recon: Vec<&Caption> = test.iter().step_by(cfg.sweep.recon_stride.max(1)).copied().collect();
    let mut reports = BTreeMap::new();
    let d = &cfg.decode;
    reports.insert(
        Method::ImageCaptioning.name().to_string(),
        image_captioning_eval(&model, &test_scenes, &refs, &image, None, d)?,
    );
    reports.insert(Method::TextReconstruction.name().to_string(), text_reconstruction_eval(&model, &recon, text, d)?);
    reports.insert(
        Method::OffsetCorrected.name().to_string(),
        image_captioning_eval(&model, &test_scenes, &refs, &image, Some(&offset), d)?,
    );
    let mut w = csv::Writer::from_path(&metrics_path).map_err(EvalError::from)?;
    w.write_record(["method", "metric", "value"]).map_err(EvalError::from)?;
    for r in report_csv_rows(&reports) {
        w.write_record(&r).map_err(EvalError::from)?;
    }
    w.flush().map_err(io_err(&metrics_path))?;
    write_json(&reports_path, &reports)?;
    let summary: BTreeMap<&String, BTreeMap<&str, f64>> =
        reports.iter().map(|(m, r)| (m, r.values().into_iter().collect())).collect();
    for (m, vals) in &summary {
        println!("{m}: {}", vals.iter().map(|(k, v)| format!("{k}={v:.4}")).collect::<Vec<_>>().join(" "));
    }
    run.finish(serde_json::to_value(&summary)?)
}

/// Run id of a config: a short hash of everything except the output directory.
pub fn run_id(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.out = PathBuf::new();
    let json = serde_json::to_vec(&c).unwrap_or_default();
    manifest::sha256_hex(&json)[..12].to_string()
}

pub fn sweep_config(cfg: &RunConfig) -> SweepConfig {
    SweepConfig {
        grid: cfg.sweep.grid.clone(),
        methods: cfg.sweep.methods.clone(),
        seed: cfg.seed,
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        supervised_steps: cfg.sweep.supervised_steps,
        decode: cfg.sweep.decode.clone(),
        recon_stride: cfg.sweep.recon_stride,
        run_id: run_id(cfg),
    }
}

pub fn cmd_sweep(cfg: &RunConfig, force: bool) -> Result<Vec<PathBuf>, CliError> {
    let mut run = Run::new(cfg, "sweep", force);
    let data = load_data(&mut run, true)?;
    let sc = sweep_config(cfg);
    let dir = run.path(layout::SWEEP_DIR).join(&sc.run_id);
    let csv_path = run.output(dir.join("sweep.csv"))?;
    let failures_path = run.output(dir.join("failures.json"))?;
    let image = encoders(cfg, &data.vocab)?;
    let inputs = SweepInputs { corpus: &data.corpus, scenes: &data.scenes, image: &image };
    let result = noise_sweep(&inputs, &sc, |e, r| {
        eprintln!("sweep: epsilon_sq {e} done ({} rows, {} failures)", r.rows.len(), r.failures.len());
    })?;
    write_sweep_csv(&result.rows, &csv_path)?;
    write_json(&failures_path, &result.failures)?;
    run.rendered(&dir.join("charts"), |d| render_charts(&result.rows, d))?;
    run.finish(serde_json::json!({ "run_id": sc.run_id, "rows": result.rows.len(), "failures": result.failures.len() }))
}

fn collect_files(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if !dir.is_dir() {
        return Ok(());
    }
    let mut entries: Vec<PathBuf> =
        std::fs::read_dir(dir).map_err(io_err(dir))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, name, out)?;
        } else if p.file_name().is_some_and(|n| n == name) {
            out.push(p);
        }
    }
    Ok(())
}

fn read_eval_csv(path: &Path) -> Result<Vec<(String, String, f64)>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(EvalError::from)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(EvalError::from)?;
        let value = rec.get(2).and_then(|v| v.parse().ok()).ok_or_else(|| {
            CliError::Config(format!("{}: malformed eval row", path.display()))
        })?;
        rows.push((rec.get(0).unwrap_or("").to_string(), rec.get(1).unwrap_or("").to_string(), value));
    }
    Ok(rows)
}

fn markdown_table(rows: &[SweepRow]) -> String {
    let mut keys: Vec<(u64, String, Method, String)> = Vec::new();
    let mut cells: BTreeMap<(u64, String, Method, String, String), f64> = BTreeMap::new();
    let mut grid: Vec<f64> = Vec::new();
    for r in rows {
        let k = (r.seed, r.run_id.clone(), r.method, r.metric.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
        if !grid.contains(&r.epsilon_sq) {
            grid.push(r.epsilon_sq);
        }
        cells.insert((r.seed, r.run_id.clone(), r.method, r.metric.clone(), format!("{}", r.epsilon_sq)), r.value);
    }
    grid.sort_by(f64::total_cmp);
    keys.sort_by(|a, b| {
        (a.0, &a.1, a.2, METRIC_NAMES.iter().position(|m| *m == a.3)).cmp(&(b.0, &b.1, b.2, METRIC_NAMES.iter().position(|m| *m == b.3)))
    });
    let mut s = String::from("| run | seed | method | metric |");
    for e in &grid {
        s.push_str(&format!(" ε²={e} |"));
    }
    s.push_str("\n|---|---|---|---|");
    s.push_str(&"---|".repeat(grid.len()));
    s.push('\n');
    for (seed, run, method, metric) in keys {
        s.push_str(&format!("| {run} | {seed} | {method} | {metric} |"));
        for e in &grid {
            match cells.get(&(seed, run.clone(), method, metric.clone(), format!("{e}"))) {
                Some(v) => s.push_str(&format!(" {v:.4} |")),
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    s
}

pub fn cmd_report(cfg: &RunConfig, run_dir: Option<&Path>, force: bool) -> Result<Vec<PathBuf>, CliError> {
    let root = run_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.clone());
    if !root.is_dir() {
        return Err(CliError::EmptyReport(root));
    }
    let cfg = RunConfig { out: root.clone(), ..cfg.clone() };
    let mut run = Run::new(&cfg, "report", force);
    let mut sweep_files = Vec::new();
    collect_files(&root.join(layout::SWEEP_DIR), "sweep.csv", &mut sweep_files)?;
    let eval_file = root.join(layout::EVAL_METRICS);
    if sweep_files.is_empty() && !eval_file.is_file() {
        return Err(CliError::EmptyReport(root));
    }
    let mut rows = Vec::new();
    for f in &sweep_files {
        rows.extend(read_sweep_csv(f)?);
        run.inputs.push(f.clone());
    }
    let mut md = String::from("# Run summary\n\n");
    if eval_file.is_file() {
        run.inputs.push(eval_file.clone());
        md.push_str("## Evaluation\n\n| method | metric | value |\n|---|---|---|\n");
        for (m, k, v) in read_eval_csv(&eval_file)? {
            md.push_str(&format!("| {m} | {k} | {v:.4} |\n"));
        }
        md.push('\n');
    }
    let dir = root.join(layout::REPORT_DIR);
    if !rows.is_empty() {
        md.push_str("## Noise sweep\n\n");
        md.push_str(&markdown_table(&rows));
        let all = run.output(dir.join("sweep_all.csv"))?;
        write_sweep_csv(&rows, &all)?;
        run.rendered(&dir.join("charts"), |d| render_charts(&rows, d))?;
    }
    let summary = run.output(dir.join("summary.md"))?;
    std::fs::write(&summary, &md).map_err(io_err(&summary))?;
    run.finish(serde_json::json!({ "sweep_files": sweep_files.len(), "rows": rows.len() }))
}
