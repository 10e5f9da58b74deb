//! Training loop, evaluation metrics, grid search and the experiment matrix.

mod grid;
mod matrix;
mod metrics;
mod trainer;

pub use grid::{grid_search, Grid, GridPoint, GridReport, GridScore, VALIDATION_FRACTION};
pub use matrix::{
    experiment_matrix, plan_cells, CellOutcome, CellRecord, EmbeddingKind, EmbeddingSources, MatrixCell,
    MatrixConfig, MatrixReport, RESULTS_HEADER,
};
pub use metrics::{compute_metrics, Metrics};
pub use trainer::{evaluate, train, EpochRecord, Evaluation, Selection, StopReason, TrainConfig, TrainLog, Trained};

use crate::error::{Error, Result};

/// Dedicated pool so `jobs` caps concurrency without touching the global one.
pub(crate) fn worker_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))
}
