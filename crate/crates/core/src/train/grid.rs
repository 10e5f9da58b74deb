//! Exhaustive hyperparameter grid over kernel sizes, dropout, optimizer and
//! learning rate, scored on a stratified validation slice of the training
//! data with frozen random embeddings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trainer::{train, TrainConfig};
use super::worker_pool;
use crate::data::{build_vocab, stratified_split, DatasetSplit, SplitRole, NUM_CLASSES};
use crate::embeddings::init_random;
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::optim::OptimizerKind;
use crate::rng::{Rng, Stream};

pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub kernels: Vec<(usize, usize)>,
    pub dropout: Vec<f64>,
    pub optimizers: Vec<OptimizerKind>,
    pub lr: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            kernels: vec![(1, 2), (2, 3)],
            dropout: vec![0.3, 0.5],
            optimizers: vec![OptimizerKind::Adam],
            lr: vec![0.002, 0.001],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub kernels: (usize, usize),
    pub dropout: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
}

impl Grid {
    /// Cartesian product, kernels varying slowest.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &kernels in &self.kernels {
            for &dropout in &self.dropout {
                for &optimizer in &self.optimizers {
                    for &lr in &self.lr {
                        out.push(GridPoint { kernels, dropout, optimizer, lr });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub point: GridPoint,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub scores: Vec<GridScore>,
    /// Index into `scores` of the winner (first on ties).
    pub best: usize,
    pub train_counts: [usize; NUM_CLASSES],
    pub validation_counts: [usize; NUM_CLASSES],
}

impl GridReport {
    pub fn best(&self) -> &GridScore {
        &self.scores[self.best]
    }
}

/// Trains one model per grid point. Results do not depend on `jobs`: each
/// point owns its initialization, shuffle and dropout streams.
pub fn grid_search(
    grid: &Grid,
    base: &ModelConfig,
    train_split: &DatasetSplit,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<GridReport> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::Config("grid search needs at least one value on every axis".into()));
    }
    let mut split_rng = Rng::new(cfg.seed, Stream::Split);
    let (fit, validation) = stratified_split(train_split.examples(), VALIDATION_FRACTION, &mut split_rng)?;
    let validation = validation.with_role(SplitRole::Validation);
    let vocab = build_vocab(&fit, 1)?;
    let embedding = init_random(&vocab, base.embed_dim, &mut Rng::new(cfg.seed, Stream::Embedding))?;

    let run = |(i, p): (usize, &GridPoint)| -> Result<GridScore> {
        let model_cfg = ModelConfig {
            vocab_size: vocab.len(),
            finetune: false,
            kernels: p.kernels,
            dropout: p.dropout,
            ..base.clone()
        };
        let mut init = Rng::for_cell(cfg.seed, Stream::Init, i as u64);
        let model = Model::with_embedding(model_cfg, &embedding, &mut init)?;
        let cell_cfg = TrainConfig {
            optimizer: p.optimizer,
            lr: p.lr,
            cell: i as u64,
            ..cfg.clone()
        };
        let trained = train(model, &vocab, &fit, &validation, &cell_cfg)?;
        let best = trained.log.best();
        Ok(GridScore {
            point: *p,
            accuracy: best.metrics.accuracy,
            macro_f1: best.metrics.macro_f1,
            best_epoch: best.epoch,
        })
    };
    let scores = worker_pool(jobs)?.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(run)
            .collect::<Result<Vec<_>>>()
    })?;

    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.accuracy > scores[best].accuracy {
            best = i;
        }
    }
    Ok(GridReport {
        scores,
        best,
        train_counts: fit.class_counts(),
        validation_counts: validation.class_counts(),
    })
}
