//! The `mcm` command-line front end.
//!
//! Exit codes: 0 success, 2 usage, configuration or data errors, 3
//! numerical failures (non-finite loss, or every matrix cell failing).

mod config;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{RunConfig, KEYS};

use crate::data::{
    class_stats, load_dataset, preprocess, stratified_split, write_dataset, DatasetSplit, EncodedBatch, Example,
    Label, SplitRole,
};
use crate::embeddings::{train_skipgram, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{predict, Checkpoint, Model};
use crate::rng::{Rng, Stream};
use crate::train::{
    evaluate, experiment_matrix, grid_search, train, CellRecord, Metrics, VALIDATION_FRACTION,
};

#[derive(Debug, Parser)]
#[command(
    name = "mcm",
    version,
    about = "Sentiment classification of code-switched short text",
    after_help = "Settings are KEY=VALUE arguments or lines of a --config file; run `mcm keys` to list them."
)]
pub struct Cli {
    /// Flat `key = value` file applied over the defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Concurrent grid or matrix cells.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory (default: runs/<command>-<unix time>-s<seed>).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Select checkpoints on a validation split carved from the training
    /// data instead of on the test split.
    #[arg(long, global = true)]
    pub honest_validation: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lowercase, normalize whitespace, drop texts under two tokens.
    Preprocess {
        #[arg(value_name = "INPUT [KEY=VALUE]...", required = true)]
        args: Vec<String>,
    },
    /// Stratified train/test split (test_fraction, default 0.2).
    Split {
        #[arg(value_name = "INPUT [KEY=VALUE]...", required = true)]
        args: Vec<String>,
    },
    /// Train skip-gram embeddings on one or more text files.
    EmbedTrain {
        #[arg(value_name = "CORPUS... [KEY=VALUE]...", required = true)]
        args: Vec<String>,
    },
    /// Train one model (needs train= and test=).
    Train {
        #[arg(value_name = "KEY=VALUE")]
        args: Vec<String>,
    },
    /// Score a checkpoint on a labeled file (needs checkpoint= and test=).
    Evaluate {
        #[arg(value_name = "KEY=VALUE")]
        args: Vec<String>,
    },
    /// Hyperparameter grid on a validation slice of train=.
    GridSearch {
        #[arg(value_name = "KEY=VALUE")]
        args: Vec<String>,
    },
    /// The model x embedding x finetune comparison (needs train= and test=).
    Matrix {
        /// Continue the run in --out, skipping cells already completed.
        #[arg(long)]
        resume: bool,
        #[arg(value_name = "KEY=VALUE")]
        args: Vec<String>,
    },
    /// Classify one text per stdin line (needs checkpoint=).
    Predict {
        #[arg(value_name = "KEY=VALUE")]
        args: Vec<String>,
    },
    /// List configuration keys with their defaults.
    Keys,
}

/// Standard streams, injectable for tests.
pub struct Io<'a> {
    pub input: &'a mut dyn BufRead,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(io.err, "{}", e.render().ansi());
            return code;
        }
    };
    match dispatch(cli, io) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Positional arguments containing `=` are overrides, the rest are inputs.
fn split_args(args: &[String]) -> (Vec<PathBuf>, Vec<&str>) {
    let (kv, inputs): (Vec<&String>, Vec<&String>) = args.iter().partition(|a| a.contains('='));
    (
        inputs.into_iter().map(PathBuf::from).collect(),
        kv.into_iter().map(String::as_str).collect(),
    )
}

fn resolve(cli: &Cli, overrides: &[&str]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for kv in overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if cli.honest_validation {
        cfg.honest_validation = true;
    }
    Ok(cfg)
}

fn one_input(inputs: &[PathBuf], command: &str) -> Result<PathBuf> {
    match inputs {
        [p] => Ok(p.clone()),
        _ => Err(Error::Config(format!("`{command}` takes exactly one input file, got {}", inputs.len()))),
    }
}

fn no_inputs(inputs: &[PathBuf], command: &str) -> Result<()> {
    match inputs.first() {
        None => Ok(()),
        Some(p) => Err(Error::Config(format!(
            "`{command}` takes KEY=VALUE settings only; unexpected `{}`",
            p.display()
        ))),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("missing required setting `{key}=PATH`")))
}

/// A run's output directory with its audit config and manifest.
struct RunDir {
    path: PathBuf,
    command: &'static str,
    seed: u64,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    created_unix: u64,
    version: &'a str,
    files: &'a [String],
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunDir {
    fn create(cli: &Cli, command: &'static str, cfg: &RunConfig) -> Result<Self> {
        let path = cli
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("runs/{command}-{}-s{}", unix_now(), cfg.seed)));
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        let mut dir = Self {
            path,
            command,
            seed: cfg.seed,
            files: Vec::new(),
        };
        dir.write("config.txt", cfg.to_text().as_bytes())?;
        Ok(dir)
    }

    fn file(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.path.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.file(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn finish(mut self) -> Result<PathBuf> {
        let files = self.files.clone();
        let m = Manifest {
            command: self.command,
            seed: self.seed,
            created_unix: unix_now(),
            version: env!("CARGO_PKG_VERSION"),
            files: &files,
        };
        self.write_json("manifest.json", &m)?;
        Ok(self.path)
    }
}

fn dispatch(cli: Cli, io: &mut Io<'_>) -> Result<i32> {
    let (args, resume) = match &cli.command {
        Command::Keys => {
            let d = RunConfig::default();
            for k in KEYS {
                writeln!(io.out, "{k} = {}", d.get(k).unwrap_or_default()).map_err(stdout_err)?;
            }
            return Ok(0);
        }
        Command::Matrix { args, resume } => (args.clone(), *resume),
        Command::Preprocess { args }
        | Command::Split { args }
        | Command::EmbedTrain { args }
        | Command::Train { args }
        | Command::Evaluate { args }
        | Command::GridSearch { args }
        | Command::Predict { args } => (args.clone(), false),
    };
    let (inputs, overrides) = split_args(&args);
    let cfg = resolve(&cli, &overrides)?;
    match &cli.command {
        Command::Preprocess { .. } => cmd_preprocess(&cli, &cfg, &one_input(&inputs, "preprocess")?, io),
        Command::Split { .. } => cmd_split(&cli, &cfg, &one_input(&inputs, "split")?, io),
        Command::EmbedTrain { .. } => {
            if inputs.is_empty() {
                return Err(Error::Config("`embed-train` needs at least one corpus file".into()));
            }
            cmd_embed_train(&cli, &cfg, &inputs, io)
        }
        Command::Train { .. } => {
            no_inputs(&inputs, "train")?;
            cmd_train(&cli, &cfg, io)
        }
        Command::Evaluate { .. } => {
            no_inputs(&inputs, "evaluate")?;
            cmd_evaluate(&cli, &cfg, io)
        }
        Command::GridSearch { .. } => {
            no_inputs(&inputs, "grid-search")?;
            cmd_grid(&cli, &cfg, io)
        }
        Command::Matrix { .. } => {
            no_inputs(&inputs, "matrix")?;
            cmd_matrix(&cli, &cfg, resume, io)
        }
        Command::Predict { .. } => {
            no_inputs(&inputs, "predict")?;
            cmd_predict(&cfg, io)
        }
        Command::Keys => unreachable!("handled above"),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

macro_rules! say {
    ($w:expr, $($t:tt)*) => {
        writeln!($w, $($t)*).map_err(stdout_err)?
    };
}

fn metrics_line(m: &Metrics) -> String {
    format!(
        "accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}",
        m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
    )
}

/// Loads a labeled file and applies the same normalization as `preprocess`
/// (a no-op on already preprocessed data).
fn load_split(path: &Path, role: SplitRole, io: &mut Io<'_>) -> Result<DatasetSplit> {
    let (kept, report) = preprocess(load_dataset(path)?);
    let dropped = report.input - report.kept;
    if dropped > 0 {
        say!(io.err, "note: {}: dropped {dropped} record(s) with fewer than two tokens", path.display());
    }
    if kept.is_empty() {
        return Err(Error::Empty(format!("{} has no usable records", path.display())));
    }
    Ok(DatasetSplit::new(role, kept))
}

fn cmd_preprocess(cli: &Cli, cfg: &RunConfig, input: &Path, io: &mut Io<'_>) -> Result<i32> {
    let raw = load_dataset(input)?;
    let mut dir = RunDir::create(cli, "preprocess", cfg)?;
    let (kept, report) = preprocess(raw);
    let out = dir.file("preprocessed.tsv");
    write_dataset(&out, &kept)?;
    dir.write_json("report.json", &report)?;
    say!(
        io.out,
        "read {}  kept {}  dropped {} (single token {}, empty {})",
        report.input,
        report.kept,
        report.input - report.kept,
        report.dropped_single_token,
        report.dropped_empty
    );
    if kept.is_empty() {
        say!(io.err, "warning: no records left after preprocessing");
    } else {
        say!(io.out, "{}", class_stats(&kept)?);
    }
    say!(io.out, "wrote {}", out.display());
    dir.finish()?;
    Ok(0)
}

fn cmd_split(cli: &Cli, cfg: &RunConfig, input: &Path, io: &mut Io<'_>) -> Result<i32> {
    let examples = load_dataset(input)?;
    let mut rng = Rng::new(cfg.seed, Stream::Split);
    let (train, test) = stratified_split(&examples, cfg.test_fraction, &mut rng)?;
    let mut dir = RunDir::create(cli, "split", cfg)?;
    for (name, split) in [("train.tsv", &train), ("test.tsv", &test)] {
        let p = dir.file(name);
        write_dataset(&p, split.examples())?;
        say!(io.out, "{}: {} records", p.display(), split.len());
        if !split.is_empty() {
            say!(io.out, "{}", class_stats(split.examples())?);
        }
    }
    dir.finish()?;
    Ok(0)
}

/// One sentence per line. Labeled TSV lines contribute their text field.
fn read_corpus(paths: &[PathBuf]) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for line in text.lines() {
            let fields: Vec<&str> = line.split('\t').collect();
            let body = match fields.as_slice() {
                [label, text, ..] if label.trim().parse::<Label>().is_ok() => text,
                _ => line,
            };
            let toks: Vec<String> = body.to_lowercase().split_whitespace().map(String::from).collect();
            if !toks.is_empty() {
                out.push(toks);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("corpus has no tokens".into()));
    }
    Ok(out)
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn cmd_embed_train(cli: &Cli, cfg: &RunConfig, inputs: &[PathBuf], io: &mut Io<'_>) -> Result<i32> {
    let corpus = read_corpus(inputs)?;
    let tokens: usize = corpus.iter().map(Vec::len).sum();
    let vocab = Vocabulary::build(corpus.iter().flatten().map(String::as_str), cfg.min_freq);
    let sg = cfg.skipgram_config();
    sg.validate()?;
    let mut rng = Rng::new(cfg.seed, Stream::NegativeSampling);
    let (matrix, curve) = train_skipgram(&corpus, &vocab, &sg, &mut rng)?;
    let mut dir = RunDir::create(cli, "embed-train", cfg)?;
    let out = dir.file("embeddings.txt");
    matrix.save(&out, &vocab)?;
    let loss: String = curve.iter().enumerate().map(|(i, l)| format!("{}\t{l}\n", (i as u64 + 1) * sg.loss_window)).collect();
    dir.write("loss.tsv", format!("iteration\tloss\n{loss}").as_bytes())?;
    say!(io.out, "corpus {tokens} tokens  vocabulary {} entries", vocab.len() - 2);
    say!(io.out, "wrote {} ({} x {})", out.display(), vocab.len() - 1, matrix.dim());
    for word in &cfg.neighbors {
        let Some(i) = vocab.get(word) else {
            say!(io.out, "{word}: not in vocabulary");
            continue;
        };
        let mut sims: Vec<(f64, usize)> = (2..vocab.len())
            .filter(|&j| j != i)
            .map(|j| (cosine(matrix.row(i), matrix.row(j)), j))
            .collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let top: Vec<String> = sims
            .iter()
            .take(5)
            .map(|&(s, j)| format!("{} {s:.3}", vocab.token(j).unwrap_or("?")))
            .collect();
        say!(io.out, "{word}: {}", top.join(", "));
    }
    dir.finish()?;
    Ok(0)
}

/// (fit, selection) splits: the test split, or a stratified validation
/// slice of the training data under honest validation.
fn selection_splits(cfg: &RunConfig, train: DatasetSplit, test: &DatasetSplit) -> Result<(DatasetSplit, DatasetSplit)> {
    if cfg.honest_validation {
        let mut rng = Rng::new(cfg.seed, Stream::Split);
        let (fit, val) = stratified_split(train.examples(), VALIDATION_FRACTION, &mut rng)?;
        Ok((fit, val.with_role(SplitRole::Validation)))
    } else {
        Ok((train, test.clone()))
    }
}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = KEYS
        .iter()
        .map(|k| (k.to_string(), serde_json::Value::String(cfg.get(k).unwrap_or_default())))
        .collect();
    serde_json::Value::Object(map)
}

fn cmd_train(cli: &Cli, cfg: &RunConfig, io: &mut Io<'_>) -> Result<i32> {
    let train_split = load_split(required(&cfg.train, "train")?, SplitRole::Train, io)?;
    let test = load_split(required(&cfg.test, "test")?, SplitRole::Test, io)?;
    let (fit, select) = selection_splits(cfg, train_split, &test)?;
    let vocab = crate::data::build_vocab(&fit, cfg.min_freq)?;
    let table = cfg.sources().build(cfg.embedding, &vocab, &fit, cfg.seed)?;
    let model_cfg = cfg.model_config(vocab.len(), table.dim());
    let model = Model::with_embedding(model_cfg, &table, &mut Rng::new(cfg.seed, Stream::Init))?;
    let tc = cfg.train_config();
    let mut dir = RunDir::create(cli, "train", cfg)?;
    say!(
        io.out,
        "{} with {} embeddings ({}), finetune {}: {} training / {} selection records, vocabulary {}",
        cfg.model.display_name(),
        cfg.embedding,
        table.provenance,
        cfg.finetune,
        fit.len(),
        select.len(),
        vocab.len()
    );
    let trained = train(model, &vocab, &fit, &select, &tc)?;
    for e in &trained.log.epochs {
        say!(
            io.err,
            "epoch {:>3}  train loss {:.4}  eval loss {:.4}  {}{}",
            e.epoch,
            e.train_loss,
            e.eval_loss,
            metrics_line(&e.metrics),
            if e.checkpointed { "  *" } else { "" }
        );
    }
    let scored = evaluate(&trained.model, &vocab, &test, tc.batch_size, tc.max_len)?;
    dir.write_json("train_log.json", &trained.log)?;
    dir.write_json("metrics.json", &scored.metrics)?;
    let stop = trained.log.stop;
    let best = trained.log.best_epoch;
    let ckpt = trained.checkpoint(vocab, config_json(cfg));
    let path = dir.file("checkpoint.bin");
    ckpt.save(&path)?;
    say!(io.out, "stopped: {stop}; best epoch {best}");
    say!(io.out, "test {}", metrics_line(&scored.metrics));
    if cfg.honest_validation {
        say!(io.out, "checkpoint selected on a validation split of the training data");
    }
    say!(io.out, "wrote {}", dir.finish()?.display());
    Ok(0)
}

fn cmd_evaluate(cli: &Cli, cfg: &RunConfig, io: &mut Io<'_>) -> Result<i32> {
    let ckpt = Checkpoint::load(required(&cfg.checkpoint, "checkpoint")?)?;
    let split = load_split(required(&cfg.test, "test")?, SplitRole::Test, io)?;
    let ev = evaluate(&ckpt.model, &ckpt.vocab, &split, cfg.batch_size, cfg.max_len)?;
    let mut dir = RunDir::create(cli, "evaluate", cfg)?;
    dir.write_json("metrics.json", &ev.metrics)?;
    say!(io.out, "{} records  {}", split.len(), metrics_line(&ev.metrics));
    for (c, l) in Label::ALL.iter().enumerate() {
        say!(
            io.out,
            "  {:<9} precision {:.4}  recall {:.4}  f1 {:.4}",
            l.as_str(),
            ev.metrics.precision[c],
            ev.metrics.recall[c],
            ev.metrics.f1[c]
        );
    }
    dir.finish()?;
    Ok(0)
}

fn cmd_grid(cli: &Cli, cfg: &RunConfig, io: &mut Io<'_>) -> Result<i32> {
    let train_split = load_split(required(&cfg.train, "train")?, SplitRole::Train, io)?;
    let base = cfg.model_config(2, cfg.embed_dim);
    let report = grid_search(&cfg.grid(), &base, &train_split, &cfg.train_config(), cfg.jobs)?;
    let mut dir = RunDir::create(cli, "grid-search", cfg)?;
    let mut tsv = String::from("kernels\tdropout\toptimizer\tlr\taccuracy\tmacro_f1\tbest_epoch\n");
    for s in &report.scores {
        let p = s.point;
        tsv.push_str(&format!(
            "{}-{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{}\n",
            p.kernels.0, p.kernels.1, p.dropout, p.optimizer, p.lr, s.accuracy, s.macro_f1, s.best_epoch
        ));
    }
    dir.write("grid.tsv", tsv.as_bytes())?;
    dir.write_json("grid.json", &report)?;
    write!(io.out, "{tsv}").map_err(stdout_err)?;
    let b = report.best().point;
    say!(
        io.out,
        "best: kernels={},{} dropout={} optimizer={} lr={}",
        b.kernels.0,
        b.kernels.1,
        b.dropout,
        b.optimizer,
        b.lr
    );
    dir.finish()?;
    Ok(0)
}

const CELL_MANIFEST: &str = "cells.jsonl";

fn read_cell_manifest(path: &Path) -> Result<Vec<CellRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Config text without the settings that may change between a run and its
/// resumption.
fn resumable_text(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with("jobs "))
        .collect::<Vec<_>>()
        .join("\n")
}

fn cmd_matrix(cli: &Cli, cfg: &RunConfig, resume: bool, io: &mut Io<'_>) -> Result<i32> {
    let done = match (&cli.out, resume) {
        (None, true) => return Err(Error::Config("--resume needs --out pointing at the interrupted run".into())),
        (Some(out), true) => {
            let previous = out.join("config.txt");
            if let Ok(text) = fs::read_to_string(&previous) {
                if resumable_text(&text) != resumable_text(&cfg.to_text()) {
                    return Err(Error::Config(format!(
                        "configuration differs from the interrupted run in {}",
                        previous.display()
                    )));
                }
            }
            read_cell_manifest(&out.join(CELL_MANIFEST))?
        }
        (_, false) => Vec::new(),
    };
    let train_split = load_split(required(&cfg.train, "train")?, SplitRole::Train, io)?;
    let test = load_split(required(&cfg.test, "test")?, SplitRole::Test, io)?;
    let mut dir = RunDir::create(cli, "matrix", cfg)?;
    let manifest_path = dir.file(CELL_MANIFEST);
    if !resume {
        File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    }
    let manifest = Mutex::new(
        fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&manifest_path)
            .map_err(|e| Error::io(&manifest_path, e))?,
    );
    let log = Mutex::new(Vec::<String>::new());
    let on_record = |r: &CellRecord| -> Result<()> {
        let line = serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?;
        let mut f = manifest.lock().expect("manifest lock");
        writeln!(f, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
        let status = match r.metrics() {
            Some(m) => metrics_line(m),
            None => "FAILED".into(),
        };
        log.lock().expect("log lock").push(format!("{}: {status}", r.id));
        Ok(())
    };
    let report = experiment_matrix(&cfg.matrix_config(), &train_split, &test, &done, &on_record)?;
    for line in log.into_inner().expect("log lock") {
        say!(io.err, "{line}");
    }
    dir.write("results.tsv", report.to_tsv().as_bytes())?;
    let table = report.render_table();
    dir.write("table.txt", table.as_bytes())?;
    write!(io.out, "{table}").map_err(stdout_err)?;
    if report.resumed > 0 {
        say!(io.out, "{} cell(s) reused from the manifest", report.resumed);
    }
    for r in report.failed() {
        if let crate::train::CellOutcome::Failed { error } = &r.outcome {
            say!(io.err, "cell {} failed: {error}", r.id);
        }
    }
    let path = dir.finish()?;
    say!(io.out, "wrote {}", path.display());
    if report.succeeded() == 0 {
        say!(io.err, "error: every cell failed");
        return Ok(3);
    }
    Ok(0)
}

fn cmd_predict(cfg: &RunConfig, io: &mut Io<'_>) -> Result<i32> {
    let ckpt = Checkpoint::load(required(&cfg.checkpoint, "checkpoint")?)?;
    let classes = ckpt.model.config().classes;
    let mut lines = Vec::new();
    for line in io.input.lines() {
        lines.push(line.map_err(|e| Error::io("<stdin>", e))?);
    }
    for chunk in lines.chunks(cfg.batch_size.max(1)) {
        let rows: Vec<(Vec<String>, usize)> = chunk
            .iter()
            .map(|l| (Example::new(l.to_lowercase(), Label::Negative).tokens().map(String::from).collect(), 0))
            .collect();
        let batch = EncodedBatch::encode(&rows, &ckpt.vocab, cfg.max_len)?;
        let probs = ckpt.model.infer_batch(&batch)?.final_probs;
        for (row, label) in probs.data().chunks(classes).zip(predict(&probs)) {
            let name = Label::from_index(label).map(Label::as_str).unwrap_or("?");
            let ps: Vec<String> = row.iter().map(|p| format!("{p:.6}")).collect();
            say!(io.out, "{name}\t{}", ps.join("\t"));
        }
    }
    Ok(0)
}
