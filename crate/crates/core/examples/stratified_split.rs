//! Seeded stratified 80-20 split on a synthetic corpus with the class mix
//! of the MultiSenti collection.

use mcm::data::synthetic::{generate, SyntheticConfig};
use mcm::data::{build_vocab, class_stats, stratified_split, Label};
use mcm::rng::{Rng, Stream};

fn main() -> mcm::Result<()> {
    let examples = generate(&SyntheticConfig { examples: 2000, ..Default::default() }, 0);
    let (train, test) = stratified_split(&examples, 0.2, &mut Rng::new(0, Stream::Split))?;
    println!("{} -> train {} / test {}", examples.len(), train.len(), test.len());

    for (name, split) in [("train", &train), ("test", &test)] {
        let stats = class_stats(split.examples())?;
        let shares: Vec<String> = Label::ALL
            .iter()
            .map(|&l| format!("{l} {:.2}%", stats.percent(l)))
            .collect();
        println!("{name:<5} {}", shares.join("  "));
    }

    let (again, _) = stratified_split(&examples, 0.2, &mut Rng::new(0, Stream::Split))?;
    assert_eq!(again.examples(), train.examples());
    println!("same seed, same split");

    let vocab = build_vocab(&train, 2)?;
    println!("vocabulary from train only, min count 2: {} entries", vocab.len());
    Ok(())
}
