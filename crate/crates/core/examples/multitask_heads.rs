//! The McM loss: the final head plus one auxiliary head per feature
//! learner, weighted by `aux_weight`. With zero-initialized heads every
//! head starts uniform, so the loss begins at (1 + 3 * aux_weight) * ln 3.

use mcm::data::synthetic::{generate, SyntheticConfig};
use mcm::data::{build_vocab, stratified_split};
use mcm::embeddings::init_random;
use mcm::models::{Model, ModelConfig};
use mcm::rng::{Rng, Stream};
use mcm::train::{evaluate, train, TrainConfig};

fn main() -> mcm::Result<()> {
    let examples = generate(&SyntheticConfig { examples: 900, ..Default::default() }, 2);
    let (tr, te) = stratified_split(&examples, 0.2, &mut Rng::new(2, Stream::Split))?;
    let vocab = build_vocab(&tr, 1)?;

    for aux_weight in [0.0, 0.5, 1.0] {
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            embed_dim: 24,
            filters: 24,
            lstm_units: 24,
            learner_dense: (24, 12),
            disc_dense: (24, 12),
            aux_weight,
            ..Default::default()
        };
        let table = init_random(&vocab, cfg.embed_dim, &mut Rng::new(2, Stream::Embedding))?;
        let model = Model::with_embedding(cfg, &table, &mut Rng::new(2, Stream::Init))?;

        let probs = model.infer_batch(&mcm::data::make_batches(te.examples(), &vocab, 4, 60, None)?[0])?;
        let heads = 1 + probs.aux_probs.len();
        let tc = TrainConfig { epochs: 8, patience: 8, seed: 2, ..Default::default() };
        let t = train(model, &vocab, &tr, &te, &tc)?;
        let first = t.log.epochs[0].train_loss;
        let e = evaluate(&t.model, &vocab, &te, 64, 60)?;
        println!(
            "aux_weight {aux_weight:.1}: {heads} heads, start loss bound {:.3}, epoch-1 loss {first:.3}, test acc {:.3}",
            (1.0 + 3.0 * aux_weight) * 3f64.ln(),
            e.metrics.accuracy
        );
    }
    Ok(())
}
