//! Vocabulary building, random tables, a pretrained text file with OOV
//! fallback, and the character n-gram hashing encoder.

use std::fs;

use mcm::embeddings::{char_hash_embed, init_random, load_pretrained, Vocabulary};
use mcm::rng::{Rng, Stream};

fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f32]| v.iter().map(|x| x * x).sum::<f32>().sqrt();
    dot / (n(a) * n(b))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = "acha hai yaar bohat acha movie thi bura laga bohat bura";
    let vocab = Vocabulary::build(text.split_whitespace(), 1);
    println!("vocabulary {} entries: {:?}", vocab.len(), vocab.tokens());

    let random = init_random(&vocab, 4, &mut Rng::new(0, Stream::Embedding))?;
    println!("random row for 'acha': {:?}", random.row(vocab.get("acha").unwrap()));

    // word2vec text format; only two of the vocabulary words are covered
    let dir = std::env::temp_dir().join("mcm-embeddings-example");
    fs::create_dir_all(&dir)?;
    let path = dir.join("vectors.txt");
    fs::write(&path, "2 4\nacha 0.1 0.2 0.3 0.4\nbura -0.4 -0.3 -0.2 -0.1\n")?;
    let loaded = load_pretrained(&path, &vocab, 7)?;
    println!("pretrained coverage {:?}, provenance {}", loaded.coverage, loaded.provenance);

    // spelling variants share character n-grams
    let a = char_hash_embed("bohat", 64, 7)?;
    let b = char_hash_embed("bohot", 64, 7)?;
    let c = char_hash_embed("movie", 64, 7)?;
    println!("cos(bohat, bohot) = {:.3}", cosine(&a, &b));
    println!("cos(bohat, movie) = {:.3}", cosine(&a, &c));
    Ok(())
}
