//! Epoch loop with per-epoch evaluation, best-checkpoint selection and
//! early stopping.

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics};
use crate::data::{make_batches, DatasetSplit, EncodedBatch};
use crate::embeddings::Vocabulary;
use crate::error::{Error, Result};
use crate::models::{predict, Checkpoint, Model};
use crate::nn::{Ctx, Mode};
use crate::optim::{AdamConfig, Optimizer, OptimizerKind};
use crate::rng::{Rng, Stream};

/// Which eval-split number decides the kept checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Accuracy,
    MacroF1,
}

impl Selection {
    pub fn score(self, m: &Metrics) -> f64 {
        match self {
            Self::Accuracy => m.accuracy,
            Self::MacroF1 => m.macro_f1,
        }
    }
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Self::Accuracy),
            "macro_f1" | "f1" => Ok(Self::MacroF1),
            _ => Err(Error::Config(format!("unknown selection metric `{s}` (expected accuracy|macro_f1)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_len: usize,
    pub patience: usize,
    pub selection: Selection,
    pub seed: u64,
    /// Sub-task id mixed into the shuffle and dropout streams, so parallel
    /// grid or matrix cells draw independent numbers.
    pub cell: u64,
    /// Stop as soon as eval accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            optimizer: OptimizerKind::Adam,
            lr: 0.002,
            batch_size: 64,
            max_len: 60,
            patience: 10,
            selection: Selection::Accuracy,
            seed: 0,
            cell: 0,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted: a frozen run is a useful control.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, patience and batch size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max length must be at least 2".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Optimizer<f32> {
        let config = AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        };
        Optimizer::new(self.optimizer, config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-example training objective, auxiliary terms included.
    pub train_loss: f64,
    /// Mean cross-entropy of the final head on the eval split.
    pub eval_loss: f64,
    pub metrics: Metrics,
    /// A new checkpoint was taken at this epoch.
    pub checkpointed: bool,
    /// The returned checkpoint comes from this epoch.
    pub best: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped { epoch: usize },
    TargetReached { epoch: usize },
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Completed => write!(f, "completed"),
            Self::EarlyStopped { epoch } => write!(f, "early-stopped at epoch {epoch}"),
            Self::TargetReached { epoch } => write!(f, "target accuracy reached at epoch {epoch}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
    pub best_epoch: usize,
    /// Single-row batches dropped because batch normalization needs two.
    pub skipped_batches: usize,
}

impl TrainLog {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

/// Best model with the optimizer state it was saved with.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model<f32>,
    pub optimizer: Optimizer<f32>,
    pub log: TrainLog,
}

impl Trained {
    pub fn checkpoint(self, vocab: Vocabulary, run_config: serde_json::Value) -> Checkpoint {
        let best = self.log.best();
        Checkpoint {
            epoch: best.epoch,
            metric: best.metrics.accuracy,
            model: self.model,
            vocab,
            optimizer: self.optimizer,
            run_config,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub loss: f64,
    pub predictions: Vec<usize>,
}

fn check_vocab(model: &Model<f32>, vocab: &Vocabulary) -> Result<()> {
    if model.config().vocab_size != vocab.len() {
        return Err(Error::shape("vocabulary", &[vocab.len()], &[model.config().vocab_size]));
    }
    Ok(())
}

fn evaluate_batches(model: &Model<f32>, batches: &[EncodedBatch]) -> Result<Evaluation> {
    let classes = model.config().classes;
    let (mut truth, mut predictions) = (Vec::new(), Vec::new());
    let mut loss = 0.0;
    for b in batches {
        let probs = model.infer_batch(b)?.final_probs;
        for (row, &y) in probs.data().chunks(classes).zip(&b.labels) {
            if y >= classes {
                return Err(Error::LabelOutOfRange { label: y, classes });
            }
            loss -= (row[y] as f64).max(f64::MIN_POSITIVE).ln();
        }
        predictions.extend(predict(&probs));
        truth.extend_from_slice(&b.labels);
    }
    let metrics = compute_metrics(&truth, &predictions, classes)?;
    Ok(Evaluation {
        metrics,
        loss: loss / truth.len() as f64,
        predictions,
    })
}

/// Inference-mode pass over a whole split.
pub fn evaluate(
    model: &Model<f32>,
    vocab: &Vocabulary,
    split: &DatasetSplit,
    batch_size: usize,
    max_len: usize,
) -> Result<Evaluation> {
    check_vocab(model, vocab)?;
    if split.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let batches = make_batches(split.examples(), vocab, batch_size, max_len, None)?;
    evaluate_batches(model, &batches)
}

/// Trains `model` on `train`, scoring on `eval` after every epoch.
///
/// The kept checkpoint is the first epoch with the best selection score;
/// training stops once eval loss has not improved for `patience` epochs.
pub fn train(
    mut model: Model<f32>,
    vocab: &Vocabulary,
    train: &DatasetSplit,
    eval: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<Trained> {
    cfg.validate()?;
    check_vocab(&model, vocab)?;
    if train.is_empty() || eval.is_empty() {
        return Err(Error::Empty("training and evaluation splits must be nonempty".into()));
    }
    let mut shuffle = Rng::for_cell(cfg.seed, Stream::Shuffle, cfg.cell);
    let mut dropout = Rng::for_cell(cfg.seed, Stream::Dropout, cfg.cell);
    let mut optimizer = cfg.optimizer();
    let eval_batches = make_batches(eval.examples(), vocab, cfg.batch_size, cfg.max_len, None)?;
    let min_rows = if model.uses_batch_norm() { 2 } else { 1 };

    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, Model<f32>, Optimizer<f32>, usize)> = None;
    let mut best_loss = f64::INFINITY;
    let mut stale = 0;
    let mut skipped = 0;
    let mut stop = StopReason::Completed;

    for epoch in 1..=cfg.epochs {
        let batches = make_batches(train.examples(), vocab, cfg.batch_size, cfg.max_len, Some(&mut shuffle))?;
        let (mut total, mut seen) = (0.0, 0usize);
        for (bi, b) in batches.iter().enumerate() {
            if b.batch() < min_rows {
                skipped += 1;
                continue;
            }
            let located = |e: Error| match e {
                Error::NonFinite(detail) => Error::NonFiniteLoss { epoch, batch: bi, detail },
                other => other,
            };
            let mut ctx = Ctx::new(&model.params, Mode::Train, Some(&mut dropout));
            let mut step = model
                .forward(&mut ctx, &b.indices, &b.mask)
                .and_then(|out| model.loss(&mut ctx.graph, &out, &b.labels))
                .and_then(|loss| ctx.backward(loss))
                .map_err(located)?;
            if !step.loss.is_finite() {
                return Err(located(Error::NonFinite("loss".into())));
            }
            total += step.loss as f64 * b.batch() as f64;
            seen += b.batch();
            step.apply_buffers(&mut model.params)?;
            optimizer.step(&mut model.params, step.grads)?;
        }

        if seen == 0 {
            return Err(Error::Empty(format!("no training batch has at least {min_rows} rows")));
        }
        let ev = evaluate_batches(&model, &eval_batches)?;
        let score = cfg.selection.score(&ev.metrics);
        let improved = best.as_ref().is_none_or(|b| score > b.0);
        if improved {
            best = Some((score, model.clone(), optimizer.clone(), epoch));
        }
        let accuracy = ev.metrics.accuracy;
        records.push(EpochRecord {
            epoch,
            train_loss: total / seen as f64,
            eval_loss: ev.loss,
            metrics: ev.metrics,
            checkpointed: improved,
            best: false,
        });

        if ev.loss < best_loss {
            best_loss = ev.loss;
            stale = 0;
        } else {
            stale += 1;
        }
        if cfg.target_accuracy.is_some_and(|t| accuracy >= t) {
            stop = StopReason::TargetReached { epoch };
            break;
        }
        if stale >= cfg.patience {
            stop = StopReason::EarlyStopped { epoch };
            break;
        }
    }

    let (_, model, optimizer, best_epoch) = best.expect("at least one epoch runs");
    records[best_epoch - 1].best = true;
    Ok(Trained {
        model,
        optimizer,
        log: TrainLog {
            epochs: records,
            stop,
            best_epoch,
            skipped_batches: skipped,
        },
    })
}
