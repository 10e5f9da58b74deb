//! Flat `key = value` run configuration.
//!
//! Values resolve in three layers: built-in defaults, then a config file,
//! then command-line overrides. Unknown keys are errors at every layer. The
//! resolved configuration is written next to each run's outputs in the same
//! format, so it can be fed back with `--config`.

use std::path::{Path, PathBuf};

use crate::embeddings::SkipGramConfig;
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind};
use crate::optim::OptimizerKind;
use crate::train::{EmbeddingKind, EmbeddingSources, Grid, MatrixConfig, Selection, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub multilingual: Option<PathBuf>,

    pub model: ModelKind,
    pub embedding: EmbeddingKind,
    pub finetune: bool,
    pub embed_dim: usize,
    pub filters: usize,
    pub kernels: (usize, usize),
    pub lstm_units: usize,
    pub learner_dense: (usize, usize),
    pub disc_dense: (usize, usize),
    pub dropout: f64,
    pub aux_weight: f64,
    pub baseline_filters: usize,
    pub attention_hidden: usize,

    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_len: usize,
    pub patience: usize,
    pub selection: Selection,
    pub seed: u64,
    pub jobs: usize,
    pub honest_validation: bool,
    pub test_fraction: f64,
    pub min_freq: usize,

    pub models: Vec<ModelKind>,
    pub embeddings: Vec<EmbeddingKind>,
    pub finetune_modes: Vec<bool>,

    pub grid_kernels: Vec<(usize, usize)>,
    pub grid_dropout: Vec<f64>,
    pub grid_optimizers: Vec<OptimizerKind>,
    pub grid_lr: Vec<f64>,

    pub sg_window: usize,
    pub sg_negatives: usize,
    pub sg_iterations: u64,
    pub sg_lr: f64,
    /// Tokens whose nearest neighbors `embed-train` reports.
    pub neighbors: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let mx = MatrixConfig::default();
        let g = Grid::default();
        let sg = SkipGramConfig::default();
        Self {
            train: None,
            test: None,
            checkpoint: None,
            pretrained: None,
            multilingual: None,
            model: m.kind,
            embedding: EmbeddingKind::Random,
            finetune: m.finetune,
            embed_dim: m.embed_dim,
            filters: m.filters,
            kernels: m.kernels,
            lstm_units: m.lstm_units,
            learner_dense: m.learner_dense,
            disc_dense: m.disc_dense,
            dropout: m.dropout,
            aux_weight: m.aux_weight,
            baseline_filters: m.baseline_filters,
            attention_hidden: m.attention_hidden,
            epochs: t.epochs,
            optimizer: t.optimizer,
            lr: t.lr,
            batch_size: t.batch_size,
            max_len: t.max_len,
            patience: t.patience,
            selection: t.selection,
            seed: t.seed,
            jobs: 1,
            honest_validation: false,
            test_fraction: 0.2,
            min_freq: 1,
            models: mx.models,
            embeddings: mx.embeddings,
            finetune_modes: mx.finetune,
            grid_kernels: g.kernels,
            grid_dropout: g.dropout,
            grid_optimizers: g.optimizers,
            grid_lr: g.lr,
            sg_window: sg.window,
            sg_negatives: sg.negatives,
            sg_iterations: sg.iterations,
            sg_lr: sg.lr_start,
            neighbors: Vec::new(),
        }
    }
}

/// Every accepted key, in the order the audit file lists them.
pub const KEYS: &[&str] = &[
    "train",
    "test",
    "checkpoint",
    "pretrained",
    "multilingual",
    "model",
    "embedding",
    "finetune",
    "embed_dim",
    "filters",
    "kernels",
    "lstm_units",
    "learner_dense",
    "disc_dense",
    "dropout",
    "aux_weight",
    "baseline_filters",
    "attention_hidden",
    "epochs",
    "optimizer",
    "lr",
    "batch_size",
    "max_len",
    "patience",
    "selection",
    "seed",
    "jobs",
    "honest_validation",
    "test_fraction",
    "min_freq",
    "models",
    "embeddings",
    "finetune_modes",
    "grid_kernels",
    "grid_dropout",
    "grid_optimizers",
    "grid_lr",
    "sg_window",
    "sg_negatives",
    "sg_iterations",
    "sg_lr",
    "neighbors",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}` as a number")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

/// `a,b` (or `a-b` inside lists, where commas separate entries).
fn pair(key: &str, v: &str) -> Result<(usize, usize)> {
    let (a, b) = v
        .split_once([',', '-'])
        .ok_or_else(|| Error::Config(format!("`{key}`: expected two numbers like 1,2, got `{v}`")))?;
    Ok((num(key, a.trim())?, num(key, b.trim())?))
}

fn list<T>(v: &str, mut f: impl FnMut(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(&mut f).collect()
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "train" => self.train = path(v),
            "test" => self.test = path(v),
            "checkpoint" => self.checkpoint = path(v),
            "pretrained" => self.pretrained = path(v),
            "multilingual" => self.multilingual = path(v),
            "model" => self.model = v.parse()?,
            "embedding" => self.embedding = v.parse()?,
            "finetune" => self.finetune = flag(key, v)?,
            "embed_dim" => self.embed_dim = num(key, v)?,
            "filters" => self.filters = num(key, v)?,
            "kernels" => self.kernels = pair(key, v)?,
            "lstm_units" => self.lstm_units = num(key, v)?,
            "learner_dense" => self.learner_dense = pair(key, v)?,
            "disc_dense" => self.disc_dense = pair(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "aux_weight" => self.aux_weight = num(key, v)?,
            "baseline_filters" => self.baseline_filters = num(key, v)?,
            "attention_hidden" => self.attention_hidden = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "lr" => self.lr = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "max_len" => self.max_len = num(key, v)?,
            "patience" => self.patience = num(key, v)?,
            "selection" => self.selection = v.parse()?,
            "seed" => self.seed = num(key, v)?,
            "jobs" => self.jobs = num(key, v)?,
            "honest_validation" => self.honest_validation = flag(key, v)?,
            "test_fraction" => self.test_fraction = num(key, v)?,
            "min_freq" => self.min_freq = num(key, v)?,
            "models" => self.models = list(v, str::parse)?,
            "embeddings" => self.embeddings = list(v, str::parse)?,
            "finetune_modes" => self.finetune_modes = list(v, |s| flag(key, s))?,
            "grid_kernels" => self.grid_kernels = list(v, |s| pair(key, s))?,
            "grid_dropout" => self.grid_dropout = list(v, |s| num(key, s))?,
            "grid_optimizers" => self.grid_optimizers = list(v, str::parse)?,
            "grid_lr" => self.grid_lr = list(v, |s| num(key, s))?,
            "sg_window" => self.sg_window = num(key, v)?,
            "sg_negatives" => self.sg_negatives = num(key, v)?,
            "sg_iterations" => self.sg_iterations = num(key, v)?,
            "sg_lr" => self.sg_lr = num(key, v)?,
            "neighbors" => self.neighbors = list(v, |s| Ok(s.to_string()))?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key `{key}`; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let pairs = |p: (usize, usize)| format!("{},{}", p.0, p.1);
        Some(match key {
            "train" => show_path(&self.train),
            "test" => show_path(&self.test),
            "checkpoint" => show_path(&self.checkpoint),
            "pretrained" => show_path(&self.pretrained),
            "multilingual" => show_path(&self.multilingual),
            "model" => self.model.to_string(),
            "embedding" => self.embedding.to_string(),
            "finetune" => self.finetune.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "filters" => self.filters.to_string(),
            "kernels" => pairs(self.kernels),
            "lstm_units" => self.lstm_units.to_string(),
            "learner_dense" => pairs(self.learner_dense),
            "disc_dense" => pairs(self.disc_dense),
            "dropout" => self.dropout.to_string(),
            "aux_weight" => self.aux_weight.to_string(),
            "baseline_filters" => self.baseline_filters.to_string(),
            "attention_hidden" => self.attention_hidden.to_string(),
            "epochs" => self.epochs.to_string(),
            "optimizer" => self.optimizer.to_string(),
            "lr" => self.lr.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_len" => self.max_len.to_string(),
            "patience" => self.patience.to_string(),
            "selection" => match self.selection {
                Selection::Accuracy => "accuracy".into(),
                Selection::MacroF1 => "macro_f1".into(),
            },
            "seed" => self.seed.to_string(),
            "jobs" => self.jobs.to_string(),
            "honest_validation" => self.honest_validation.to_string(),
            "test_fraction" => self.test_fraction.to_string(),
            "min_freq" => self.min_freq.to_string(),
            "models" => join(&self.models),
            "embeddings" => join(&self.embeddings),
            "finetune_modes" => join(&self.finetune_modes),
            "grid_kernels" => self
                .grid_kernels
                .iter()
                .map(|&(a, b)| format!("{a}-{b}"))
                .collect::<Vec<_>>()
                .join(","),
            "grid_dropout" => join(&self.grid_dropout),
            "grid_optimizers" => join(&self.grid_optimizers),
            "grid_lr" => join(&self.grid_lr),
            "sg_window" => self.sg_window.to_string(),
            "sg_negatives" => self.sg_negatives.to_string(),
            "sg_iterations" => self.sg_iterations.to_string(),
            "sg_lr" => self.sg_lr.to_string(),
            "neighbors" => self.neighbors.join(","),
            _ => return None,
        })
    }

    /// Applies a config file on top of the current values.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            // A line starting with `#` is a comment; otherwise ` #` ends the
            // value, but only once the value has started, so a value such as
            // `#tag` survives a write/read round trip.
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            let v = v.trim_start();
            let v = v.split(" #").next().unwrap_or("").trim_end();
            self.set(k.trim(), v).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// `KEY=VALUE` override from the command line.
    pub fn apply_override(&mut self, arg: &str) -> Result<()> {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{arg}`")))?;
        self.set(k.trim(), v)
    }

    /// Audit rendering; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let v = self.get(key).expect("every listed key renders");
            out.push_str(&format!("{key} = {v}\n"));
        }
        out
    }

    pub fn model_config(&self, vocab_size: usize, embed_dim: usize) -> ModelConfig {
        ModelConfig {
            kind: self.model,
            vocab_size,
            embed_dim,
            finetune: self.finetune,
            filters: self.filters,
            kernels: self.kernels,
            lstm_units: self.lstm_units,
            learner_dense: self.learner_dense,
            disc_dense: self.disc_dense,
            dropout: self.dropout,
            aux_weight: self.aux_weight,
            classes: crate::data::NUM_CLASSES,
            baseline_filters: self.baseline_filters,
            attention_hidden: self.attention_hidden,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            optimizer: self.optimizer,
            lr: self.lr,
            batch_size: self.batch_size,
            max_len: self.max_len,
            patience: self.patience,
            selection: self.selection,
            seed: self.seed,
            cell: 0,
            target_accuracy: None,
        }
    }

    pub fn skipgram_config(&self) -> SkipGramConfig {
        SkipGramConfig {
            dim: self.embed_dim,
            window: self.sg_window,
            negatives: self.sg_negatives,
            iterations: self.sg_iterations,
            lr_start: self.sg_lr,
            ..SkipGramConfig::default()
        }
    }

    pub fn sources(&self) -> EmbeddingSources {
        EmbeddingSources {
            dim: self.embed_dim,
            pretrained: self.pretrained.clone(),
            multilingual: self.multilingual.clone(),
            skipgram: self.skipgram_config(),
        }
    }

    pub fn grid(&self) -> Grid {
        Grid {
            kernels: self.grid_kernels.clone(),
            dropout: self.grid_dropout.clone(),
            optimizers: self.grid_optimizers.clone(),
            lr: self.grid_lr.clone(),
        }
    }

    pub fn matrix_config(&self) -> MatrixConfig {
        MatrixConfig {
            models: self.models.clone(),
            embeddings: self.embeddings.clone(),
            finetune: self.finetune_modes.clone(),
            model: self.model_config(2, self.embed_dim),
            train: self.train_config(),
            sources: self.sources(),
            honest_validation: self.honest_validation,
            jobs: self.jobs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_text_round_trips() {
        let mut c = RunConfig::default();
        for kv in [
            "model=convnet",
            "kernels=2,3",
            "grid_kernels=1-2,3-4",
            "finetune_modes=true",
            "pretrained=vecs/elmo.txt",
            "neighbors=acha,bura",
            "lr=0.0005",
        ] {
            c.apply_override(kv).unwrap();
        }
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), Path::new("audit")).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::default().to_text().lines().count(), KEYS.len());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = RunConfig::default();
        assert!(c.apply_override("modle=mcm").is_err());
        let err = c.apply_text("epochs = 3\nbogus = 1\n", Path::new("f.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert_eq!(c.epochs, 3);
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut c = RunConfig::default();
        let e = c.apply_override("epochs=many").unwrap_err().to_string();
        assert!(e.contains("epochs"), "{e}");
        assert!(c.apply_override("model=transformer").unwrap_err().to_string().contains("mcm|"));
        assert!(c.apply_override("finetune=maybe").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let mut c = RunConfig::default();
        c.apply_text("# header\n\nseed = 7  # trailing\nneighbors = #tag,b # note\n", Path::new("x")).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.neighbors, vec!["#tag", "b"]);
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), Path::new("x")).unwrap();
        assert_eq!(back.neighbors, c.neighbors);
    }
}
