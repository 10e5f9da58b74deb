//! The 14-cell comparison (three baselines across embedding source and
//! finetuning, plus the embedding probe) rendered as a results table.
//! Widths and epochs are cut down so it runs in seconds.

use mcm::data::synthetic::{generate, SyntheticConfig};
use mcm::data::stratified_split;
use mcm::models::{ModelConfig, ModelKind};
use mcm::rng::{Rng, Stream};
use mcm::train::{experiment_matrix, CellRecord, MatrixConfig};

fn main() -> mcm::Result<()> {
    let examples = generate(&SyntheticConfig { examples: 1200, cue_noise: 0.05, neutral_cue_rate: 0.1, ..Default::default() }, 4);
    let (tr, te) = stratified_split(&examples, 0.2, &mut Rng::new(4, Stream::Split))?;

    let mut cfg = MatrixConfig::default();
    cfg.models.insert(0, ModelKind::Mcm);
    cfg.model = ModelConfig {
        embed_dim: 64,
        filters: 16,
        lstm_units: 16,
        learner_dense: (16, 8),
        disc_dense: (16, 8),
        baseline_filters: 16,
        attention_hidden: 8,
        ..Default::default()
    };
    cfg.sources.dim = 64;
    cfg.train.epochs = 12;
    cfg.train.patience = 4;
    cfg.jobs = std::thread::available_parallelism().map_or(1, |n| n.get());

    let report = experiment_matrix(&cfg, &tr, &te, &[], &|r: &CellRecord| {
        eprintln!("done {}", r.id);
        Ok(())
    })?;
    println!("{} cells, {} succeeded\n", report.records.len(), report.succeeded());
    print!("{}", report.render_table());
    Ok(())
}
