//! Trains skip-gram with negative sampling on a corpus where words only
//! co-occur inside their own topic, then lists nearest neighbors.

use mcm::embeddings::{train_skipgram, SkipGramConfig, Vocabulary};
use mcm::rng::{Rng, Stream};

fn main() -> mcm::Result<()> {
    let topics = [
        ["cricket", "match", "wicket", "khel", "team", "jeet"],
        ["sarkar", "vote", "election", "hakumat", "party", "jalsa"],
        ["khana", "biryani", "chai", "mazedar", "dinner", "garam"],
    ];
    let mut rng = Rng::new(1, Stream::Shuffle);
    let corpus: Vec<Vec<&str>> = (0..300)
        .map(|_| {
            let t = &topics[rng.below(topics.len())];
            (0..8).map(|_| t[rng.below(t.len())]).collect()
        })
        .collect();
    let vocab = Vocabulary::build(corpus.iter().flatten().copied(), 1);

    let cfg = SkipGramConfig { dim: 32, iterations: 30_000, ..Default::default() };
    let (m, curve) = train_skipgram(&corpus, &vocab, &cfg, &mut Rng::new(1, Stream::NegativeSampling))?;
    println!("loss {:.3} -> {:.3}", curve[0], curve[curve.len() - 1]);

    let cosine = |a: usize, b: usize| {
        let (x, y) = (m.row(a), m.row(b));
        let dot: f32 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let n = |v: &[f32]| v.iter().map(|p| p * p).sum::<f32>().sqrt();
        dot / (n(x) * n(y))
    };
    for word in ["cricket", "vote", "chai"] {
        let w = vocab.get(word).unwrap();
        let mut near: Vec<(f32, &str)> = (2..vocab.len())
            .filter(|&i| i != w)
            .map(|i| (cosine(w, i), vocab.token(i).unwrap()))
            .collect();
        near.sort_by(|a, b| b.0.total_cmp(&a.0));
        let top: Vec<String> = near[..4].iter().map(|(c, t)| format!("{t} {c:.3}")).collect();
        println!("{word:<8} {}", top.join(", "));
    }
    Ok(())
}
