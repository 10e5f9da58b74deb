//! End-to-end: split, vocabulary, embeddings, McM training with early
//! stopping, test metrics, checkpoint round trip and prediction.

use mcm::data::synthetic::{generate, SyntheticConfig};
use mcm::data::{build_vocab, stratified_split, EncodedBatch, Label};
use mcm::embeddings::init_random;
use mcm::models::{predict, Checkpoint, Model, ModelConfig, ModelKind};
use mcm::rng::{Rng, Stream};
use mcm::train::{evaluate, train, TrainConfig};

fn main() -> mcm::Result<()> {
    let seed = 0;
    let examples = generate(&SyntheticConfig { examples: 1200, ..Default::default() }, seed);
    let (train_split, test_split) = stratified_split(&examples, 0.2, &mut Rng::new(seed, Stream::Split))?;
    let vocab = build_vocab(&train_split, 1)?;

    // narrower than the defaults so the example finishes in seconds
    let cfg = ModelConfig {
        kind: ModelKind::Mcm,
        vocab_size: vocab.len(),
        embed_dim: 32,
        filters: 32,
        lstm_units: 32,
        learner_dense: (32, 16),
        disc_dense: (32, 16),
        ..Default::default()
    };
    let table = init_random(&vocab, cfg.embed_dim, &mut Rng::new(seed, Stream::Embedding))?;
    let model = Model::with_embedding(cfg, &table, &mut Rng::new(seed, Stream::Init))?;
    let tc = TrainConfig { epochs: 15, patience: 4, seed, ..Default::default() };

    let trained = train(model, &vocab, &train_split, &test_split, &tc)?;
    for e in &trained.log.epochs {
        println!(
            "epoch {:>2} train loss {:.4} eval loss {:.4} acc {:.4}{}",
            e.epoch,
            e.train_loss,
            e.eval_loss,
            e.metrics.accuracy,
            if e.best { "  *" } else { "" }
        );
    }
    println!("{}; best epoch {}", trained.log.stop, trained.log.best_epoch);

    let path = std::env::temp_dir().join("mcm-example-checkpoint.bin");
    trained.checkpoint(vocab.clone(), serde_json::json!({ "seed": seed })).save(&path)?;
    let ckpt = Checkpoint::load(&path)?;
    let eval = evaluate(&ckpt.model, &ckpt.vocab, &test_split, 64, tc.max_len)?;
    println!("reloaded checkpoint: test accuracy {:.4} macro F1 {:.4}", eval.metrics.accuracy, eval.metrics.macro_f1);

    let texts = ["bohat acha laga", "kal match hai"];
    let rows: Vec<(Vec<&str>, usize)> = texts.iter().map(|t| (t.split(' ').collect(), 0)).collect();
    let batch = EncodedBatch::encode(&rows, &ckpt.vocab, tc.max_len)?;
    let probs = ckpt.model.infer_batch(&batch)?.final_probs;
    for (text, c) in texts.iter().zip(predict(&probs)) {
        println!("{text:<18} -> {}", Label::ALL[c]);
    }
    Ok(())
}
