//! Hyperparameter grid search on a validation slice carved from the
//! training split; cells run in parallel and the result does not depend on
//! the worker count.

use mcm::data::synthetic::{generate, SyntheticConfig};
use mcm::data::{stratified_split, DatasetSplit};
use mcm::models::ModelConfig;
use mcm::optim::OptimizerKind;
use mcm::rng::{Rng, Stream};
use mcm::train::{grid_search, Grid, TrainConfig};

fn main() -> mcm::Result<()> {
    let examples = generate(&SyntheticConfig { examples: 1500, cue_noise: 0.05, neutral_cue_rate: 0.1, ..Default::default() }, 3);
    let (train_split, _test): (DatasetSplit, _) = stratified_split(&examples, 0.2, &mut Rng::new(3, Stream::Split))?;

    let grid = Grid {
        kernels: vec![(1, 2), (2, 3)],
        dropout: vec![0.3, 0.5],
        optimizers: vec![OptimizerKind::Adam],
        lr: vec![0.002],
    };
    let base = ModelConfig {
        embed_dim: 64,
        filters: 16,
        lstm_units: 16,
        learner_dense: (16, 8),
        disc_dense: (16, 8),
        ..Default::default()
    };
    let tc = TrainConfig { epochs: 12, patience: 4, seed: 3, ..Default::default() };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = grid_search(&grid, &base, &train_split, &tc, jobs)?;

    println!("fit {:?} / validation {:?}", report.train_counts, report.validation_counts);
    for s in &report.scores {
        println!(
            "kernels {:?} dropout {:.1} lr {}: acc {:.4} macro F1 {:.4} (epoch {})",
            s.point.kernels, s.point.dropout, s.point.lr, s.accuracy, s.macro_f1, s.best_epoch
        );
    }
    let best = report.best();
    println!("best: kernels {:?} dropout {:.1}", best.point.kernels, best.point.dropout);
    Ok(())
}
