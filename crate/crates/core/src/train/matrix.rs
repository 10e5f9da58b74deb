//! The model × embedding × finetune comparison matrix and its reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::VALIDATION_FRACTION;
use super::metrics::Metrics;
use super::trainer::{evaluate, train, StopReason, TrainConfig};
use super::worker_pool;
use crate::data::{build_vocab, stratified_split, DatasetSplit, SplitRole};
use crate::embeddings::{
    char_hash_matrix, init_random, load_pretrained, train_skipgram, EmbeddingMatrix, Provenance, SkipGramConfig,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, ModelKind};
use crate::rng::{Rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Random,
    /// Vectors from a file, or the character-hash encoder when no file is
    /// configured.
    Pretrained,
    /// Skip-gram vectors, from a file or trained on the training split.
    Multilingual,
}

impl EmbeddingKind {
    pub const ALL: [EmbeddingKind; 3] = [Self::Random, Self::Pretrained, Self::Multilingual];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Pretrained => "pretrained",
            Self::Multilingual => "multilingual",
        }
    }
}

impl std::str::FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "pretrained" | "char-hash" | "char-fallback" => Ok(Self::Pretrained),
            "multilingual" => Ok(Self::Multilingual),
            _ => Err(Error::Config(format!(
                "unknown embedding `{s}` (expected random|pretrained|multilingual)"
            ))),
        }
    }
}

impl std::fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where each embedding kind comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSources {
    /// Width of random, character-hash and freshly trained tables. File
    /// vectors keep their own width.
    pub dim: usize,
    pub pretrained: Option<PathBuf>,
    pub multilingual: Option<PathBuf>,
    pub skipgram: SkipGramConfig,
}

impl Default for EmbeddingSources {
    fn default() -> Self {
        Self {
            dim: 300,
            pretrained: None,
            multilingual: None,
            skipgram: SkipGramConfig::default(),
        }
    }
}

impl EmbeddingSources {
    pub fn build(
        &self,
        kind: EmbeddingKind,
        vocab: &Vocabulary,
        corpus: &DatasetSplit,
        seed: u64,
    ) -> Result<EmbeddingMatrix> {
        match kind {
            EmbeddingKind::Random => init_random(vocab, self.dim, &mut Rng::new(seed, Stream::Embedding)),
            EmbeddingKind::Pretrained => match &self.pretrained {
                Some(path) => load_pretrained(path, vocab, seed),
                None => char_hash_matrix(vocab, self.dim, seed),
            },
            EmbeddingKind::Multilingual => match &self.multilingual {
                Some(path) => {
                    let mut m = load_pretrained(path, vocab, seed)?;
                    m.provenance = Provenance::Multilingual;
                    Ok(m)
                }
                None => {
                    let sentences: Vec<Vec<&str>> = corpus.examples().iter().map(|e| e.tokens().collect()).collect();
                    let cfg = SkipGramConfig {
                        dim: self.dim,
                        ..self.skipgram.clone()
                    };
                    let mut rng = Rng::new(seed, Stream::NegativeSampling);
                    Ok(train_skipgram(&sentences, vocab, &cfg, &mut rng)?.0)
                }
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatrixCell {
    pub model: ModelKind,
    pub embedding: EmbeddingKind,
    pub finetune: bool,
}

impl MatrixCell {
    /// Stable identifier used by the resume manifest.
    pub fn id(&self) -> String {
        let mode = if self.finetune { "finetune" } else { "frozen" };
        format!("{}/{}/{}", self.model, self.embedding, mode)
    }
}

/// Cells in table order. The probe has no layers of its own to pair with
/// an embedding, so it runs once per finetune mode on the pretrained table
/// (or the first listed kind when pretrained is not requested).
pub fn plan_cells(models: &[ModelKind], embeddings: &[EmbeddingKind], finetune: &[bool]) -> Result<Vec<MatrixCell>> {
    if models.is_empty() || embeddings.is_empty() || finetune.is_empty() {
        return Err(Error::Config("experiment matrix needs at least one value on every axis".into()));
    }
    let probe_embedding = if embeddings.contains(&EmbeddingKind::Pretrained) {
        EmbeddingKind::Pretrained
    } else {
        embeddings[0]
    };
    let mut cells = Vec::new();
    for &model in models {
        let kinds = if model == ModelKind::EmbeddingProbe {
            std::slice::from_ref(&probe_embedding)
        } else {
            embeddings
        };
        for &embedding in kinds {
            for &finetune in finetune {
                let cell = MatrixCell { model, embedding, finetune };
                if !cells.contains(&cell) {
                    cells.push(cell);
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Done {
        metrics: Metrics,
        best_epoch: usize,
        stop: StopReason,
        wall_seconds: f64,
    },
    Failed {
        error: String,
    },
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub id: String,
    pub cell: MatrixCell,
    /// What actually filled the embedding table (e.g. `char-hash`).
    pub provenance: String,
    pub outcome: CellOutcome,
}

impl CellRecord {
    pub fn is_done(&self) -> bool {
        matches!(self.outcome, CellOutcome::Done { .. })
    }

    pub fn metrics(&self) -> Option<&Metrics> {
        match &self.outcome {
            CellOutcome::Done { metrics, .. } => Some(metrics),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    pub models: Vec<ModelKind>,
    pub embeddings: Vec<EmbeddingKind>,
    pub finetune: Vec<bool>,
    /// Layer widths shared by every cell; kind, vocabulary, embedding width
    /// and finetune flag are filled in per cell.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sources: EmbeddingSources,
    /// Select checkpoints on a validation slice of the training data rather
    /// than on the test split.
    pub honest_validation: bool,
    pub jobs: usize,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            models: vec![
                ModelKind::Convnet,
                ModelKind::AttentionLstm,
                ModelKind::Simpleconv,
                ModelKind::EmbeddingProbe,
            ],
            embeddings: vec![EmbeddingKind::Random, EmbeddingKind::Pretrained],
            finetune: vec![false, true],
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sources: EmbeddingSources::default(),
            honest_validation: false,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixReport {
    /// In plan order.
    pub records: Vec<CellRecord>,
    pub honest_validation: bool,
    /// Cells taken from an earlier run's manifest.
    pub resumed: usize,
}

/// Runs every planned cell not already completed in `done`. A failing cell
/// becomes a `Failed` record and the rest of the matrix carries on.
/// `on_record` sees each freshly finished cell (for an append-only
/// manifest); its errors abort the run.
pub fn experiment_matrix(
    cfg: &MatrixConfig,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    done: &[CellRecord],
    on_record: &(dyn Fn(&CellRecord) -> Result<()> + Sync),
) -> Result<MatrixReport> {
    let cells = plan_cells(&cfg.models, &cfg.embeddings, &cfg.finetune)?;
    if test_split.is_empty() {
        return Err(Error::Empty("test split".into()));
    }
    let seed = cfg.train.seed;
    let (fit, validation) = if cfg.honest_validation {
        let (f, v) = stratified_split(train_split.examples(), VALIDATION_FRACTION, &mut Rng::new(seed, Stream::Split))?;
        (f, Some(v.with_role(SplitRole::Validation)))
    } else {
        (train_split.clone(), None)
    };
    let eval = validation.as_ref().unwrap_or(test_split);
    let vocab = build_vocab(&fit, 1)?;

    let finished: HashMap<&str, &CellRecord> =
        done.iter().filter(|r| r.is_done()).map(|r| (r.id.as_str(), r)).collect();
    let pending: Vec<(usize, MatrixCell)> = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| !finished.contains_key(c.id().as_str()))
        .map(|(i, c)| (i, *c))
        .collect();

    // Tables are built up front and shared; a source that cannot be built
    // fails only the cells that need it.
    let mut tables: HashMap<EmbeddingKind, std::result::Result<EmbeddingMatrix, String>> = HashMap::new();
    for (_, c) in &pending {
        tables
            .entry(c.embedding)
            .or_insert_with(|| cfg.sources.build(c.embedding, &vocab, &fit, seed).map_err(|e| e.to_string()));
    }

    let run = |&(i, cell): &(usize, MatrixCell)| -> Result<CellRecord> {
        let start = Instant::now();
        let table = &tables[&cell.embedding];
        let provenance = match table {
            Ok(m) => m.provenance.to_string(),
            Err(_) => cell.embedding.to_string(),
        };
        let outcome = (|| -> Result<CellOutcome> {
            let table = table.as_ref().map_err(|e| Error::Config(e.clone()))?;
            let model_cfg = ModelConfig {
                kind: cell.model,
                vocab_size: vocab.len(),
                embed_dim: table.dim(),
                finetune: cell.finetune,
                ..cfg.model.clone()
            };
            let model = Model::with_embedding(model_cfg, table, &mut Rng::for_cell(seed, Stream::Init, i as u64))?;
            let train_cfg = TrainConfig {
                cell: i as u64,
                ..cfg.train.clone()
            };
            let trained = train(model, &vocab, &fit, eval, &train_cfg)?;
            let scored = evaluate(&trained.model, &vocab, test_split, train_cfg.batch_size, train_cfg.max_len)?;
            Ok(CellOutcome::Done {
                metrics: scored.metrics,
                best_epoch: trained.log.best_epoch,
                stop: trained.log.stop,
                wall_seconds: start.elapsed().as_secs_f64(),
            })
        })()
        .unwrap_or_else(|e| CellOutcome::Failed { error: e.to_string() });
        let record = CellRecord {
            id: cell.id(),
            cell,
            provenance,
            outcome,
        };
        on_record(&record)?;
        Ok(record)
    };
    let fresh = worker_pool(cfg.jobs)?.install(|| pending.par_iter().map(run).collect::<Result<Vec<_>>>())?;

    let mut fresh: HashMap<String, CellRecord> = fresh.into_iter().map(|r| (r.id.clone(), r)).collect();
    let records = cells
        .iter()
        .map(|c| {
            let id = c.id();
            fresh.remove(&id).unwrap_or_else(|| finished[id.as_str()].clone())
        })
        .collect();
    Ok(MatrixReport {
        records,
        honest_validation: cfg.honest_validation,
        resumed: cells.len() - pending.len(),
    })
}

pub const RESULTS_HEADER: [&str; 9] = [
    "model",
    "embedding",
    "finetune",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "best_epoch",
    "wall_seconds",
];

impl MatrixReport {
    pub fn succeeded(&self) -> usize {
        self.records.iter().filter(|r| r.is_done()).count()
    }

    pub fn failed(&self) -> impl Iterator<Item = &CellRecord> {
        self.records.iter().filter(|r| !r.is_done())
    }

    /// Tab-separated results, one row per cell. Failed cells carry `NA`.
    pub fn to_tsv(&self) -> String {
        let mut out = RESULTS_HEADER.join("\t");
        out.push('\n');
        for r in &self.records {
            let lead = format!("{}\t{}\t{}", r.cell.model, r.provenance, r.cell.finetune);
            let tail = match &r.outcome {
                CellOutcome::Done {
                    metrics: m,
                    best_epoch,
                    wall_seconds,
                    ..
                } => format!(
                    "{:.4}\t{:.4}\t{:.4}\t{:.4}\t{best_epoch}\t{wall_seconds:.1}",
                    m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
                ),
                CellOutcome::Failed { .. } => ["NA"; 6].join("\t"),
            };
            let _ = writeln!(out, "{lead}\t{tail}");
        }
        out
    }

    /// Aligned text with one row per (model, embedding) and the frozen and
    /// finetuned scores side by side.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(ModelKind, &str)> = Vec::new();
        for r in &self.records {
            let key = (r.cell.model, r.provenance.as_str());
            if !rows.contains(&key) {
                rows.push(key);
            }
        }
        let half = |ft: bool, key: (ModelKind, &str)| -> String {
            let r = self
                .records
                .iter()
                .find(|r| r.cell.finetune == ft && (r.cell.model, r.provenance.as_str()) == key);
            match r.map(|r| &r.outcome) {
                Some(CellOutcome::Done { metrics: m, .. }) => format!(
                    "{:>6.2} {:>6.2} {:>6.2} {:>6.2}",
                    m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
                ),
                Some(CellOutcome::Failed { .. }) => format!("{:^27}", "failed"),
                None => format!("{:^27}", "-"),
            }
        };
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:<13} | {:^27} | {:^27}", "", "", "Without finetuning", "With finetuning");
        let cols = format!("{:>6} {:>6} {:>6} {:>6}", "Acc", "P", "R", "F1");
        let _ = writeln!(out, "{:<16} {:<13} | {cols} | {cols}", "Model", "Embedding");
        let _ = writeln!(out, "{}", "-".repeat(16 + 1 + 13 + 3 + 27 + 3 + 27));
        for key in rows {
            let _ = writeln!(
                out,
                "{:<16} {:<13} | {} | {}",
                key.0.display_name(),
                key.1,
                half(false, key),
                half(true, key)
            );
        }
        if self.honest_validation {
            out.push_str("\ncheckpoints selected on a validation split carved from training data\n");
        } else {
            out.push_str("\ncheckpoints selected on the test split\n");
        }
        out
    }
}
