use std::io::Write;

use mcm::embeddings::*;
use mcm::rng::{Rng, Stream};
use mcm::Error;

fn vocab_of(words: &[&str]) -> Vocabulary {
    Vocabulary::build(words.iter().copied(), 1)
}

fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
    p
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn full_coverage_file() {
    let dir = tempfile::tempdir().unwrap();
    let v = vocab_of(&["acha", "bura"]);
    let p = write_file(&dir, "v.txt", "2 3\nacha 1 2 3\nbura 0.5 -1 2e-3\n");
    let m = load_pretrained(&p, &v, 0).unwrap();
    assert_eq!(m.coverage, Some(1.0));
    assert_eq!(m.row(v.get("acha").unwrap()), &[1.0, 2.0, 3.0]);
    assert_eq!(m.row(v.get("bura").unwrap()), &[0.5, -1.0, 0.002]);
    assert_eq!(m.provenance, Provenance::Pretrained);
}

#[test]
fn disjoint_file_falls_back_to_char_hash() {
    let dir = tempfile::tempdir().unwrap();
    let v = vocab_of(&["acha", "bura"]);
    let p = write_file(&dir, "v.txt", "1 4\nother 1 2 3 4\n");
    let m = load_pretrained(&p, &v, 7).unwrap();
    assert_eq!(m.coverage, Some(0.0));
    for t in ["acha", "bura"] {
        assert_eq!(m.row(v.get(t).unwrap()), char_hash_embed(t, 4, 7).unwrap());
    }
    assert!(m.row(PAD).iter().all(|&x| x == 0.0));
}

#[test]
fn inconsistent_dimension_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let v = vocab_of(&["a"]);
    let p = write_file(&dir, "v.txt", "4 4\na 1 2 3 4\nb 1 2 3 4\nc 1 2 3\nd 1 2 3 4\n");
    match load_pretrained(&p, &v, 0).unwrap_err() {
        Error::Parse { line, msg, .. } => {
            assert_eq!(line, 4);
            assert!(msg.contains("dimension 3"), "{msg}");
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let v = vocab_of(&["a"]);
    let cases = [
        ("token_only", "1 2\na\n", 2),
        ("bad_number", "1 2\na 1 x\n", 2),
        ("bad_header", "two 2\na 1 2\n", 1),
        ("count_mismatch", "3 2\na 1 2\n", 1),
        ("empty", "", 1),
    ];
    for (name, body, want) in cases {
        let p = write_file(&dir, name, body);
        match load_pretrained(&p, &v, 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{name}"),
            other => panic!("{name}: {other:?}"),
        }
    }
    assert!(matches!(
        load_pretrained(&dir.path().join("missing"), &v, 0),
        Err(Error::Io { .. })
    ));
}

#[test]
fn load_save_load_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let v = vocab_of(&["acha", "bura", "movie", "yar"]);
    let p = write_file(
        &dir,
        "v.txt",
        "2 5\nacha 0.1 0.2 0.30000001 -4e-7 1e10\nmovie 3.14159 2.71828 1 0 -0\n",
    );
    let first = load_pretrained(&p, &v, 3).unwrap();
    let out = dir.path().join("saved.txt");
    first.save(&out, &v).unwrap();
    let second = load_pretrained(&out, &v, 3).unwrap();
    let bits = |m: &EmbeddingMatrix| m.table.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&first), bits(&second));
    assert_eq!(second.coverage, Some(1.0));
}

#[test]
fn random_matrix_round_trips_through_text() {
    let dir = tempfile::tempdir().unwrap();
    let words: Vec<String> = (0..50).map(|i| format!("tok{i}")).collect();
    let v = Vocabulary::build(words.iter().map(String::as_str), 1);
    let m = init_random(&v, 32, &mut Rng::new(5, Stream::Embedding)).unwrap();
    let out = dir.path().join("r.txt");
    m.save(&out, &v).unwrap();
    let back = load_pretrained(&out, &v, 0).unwrap();
    assert_eq!(back.table, m.table);
}

#[test]
fn edit_distance_one_beats_random_pairs() {
    let mut rng = Rng::new(17, Stream::Embedding);
    let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyz".chars().collect();
    let word = |rng: &mut Rng, n: usize| -> Vec<char> {
        (0..n).map(|_| alphabet[rng.below(alphabet.len())]).collect()
    };
    let (mut near, mut far) = (0.0, 0.0);
    let mut wins = 0;
    for _ in 0..1000 {
        let a = word(&mut rng, 10);
        let mut b = a.clone();
        let at = rng.below(b.len());
        let mut c = alphabet[rng.below(26)];
        while c == b[at] {
            c = alphabet[rng.below(26)];
        }
        b[at] = c;
        let (a, b): (String, String) = (a.iter().collect(), b.iter().collect());
        let (x, y): (String, String) = (word(&mut rng, 10).iter().collect(), word(&mut rng, 10).iter().collect());
        let cn = cosine(&char_hash_embed(&a, 300, 1).unwrap(), &char_hash_embed(&b, 300, 1).unwrap());
        let cf = cosine(&char_hash_embed(&x, 300, 1).unwrap(), &char_hash_embed(&y, 300, 1).unwrap());
        near += cn;
        far += cf;
        wins += (cn > cf) as usize;
    }
    assert!(near / 1000.0 > far / 1000.0 + 0.3, "near {near} far {far}");
    assert!(wins >= 990, "{wins}");
}

#[test]
fn negative_sampler_matches_unigram_power() {
    // Pearson chi-square over 50 categories; 74.919 is the 0.99 quantile
    // of chi-square with 49 degrees of freedom.
    let counts: Vec<u64> = (1..=50).map(|i| (i * i) as u64 % 97 + 3).collect();
    let s = NegativeSampler::new(&counts, 0.75).unwrap();
    let total_w: f64 = counts.iter().map(|&c| (c as f64).powf(0.75)).sum();
    let mut rng = Rng::new(2024, Stream::NegativeSampling);
    let n = 1_000_000;
    let mut seen = vec![0u64; 50];
    for _ in 0..n {
        seen[s.sample(&mut rng)] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&seen)
        .map(|(&c, &o)| {
            let e = n as f64 * (c as f64).powf(0.75) / total_w;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    assert!(chi2 < 74.919, "chi2 = {chi2}");
}

fn toy_corpus() -> Vec<Vec<String>> {
    let lines = [
        "x y", "x y", "x y", "y x",
        "z w v", "w z v", "v w z",
        "a b c", "c b a", "b a c",
    ];
    lines
        .iter()
        .cycle()
        .take(200)
        .map(|s| s.split(' ').map(String::from).collect())
        .collect()
}

#[test]
fn cooccurring_tokens_end_up_closer() {
    let corpus = toy_corpus();
    let v = Vocabulary::build(corpus.iter().flatten().map(String::as_str), 1);
    let cfg = SkipGramConfig {
        dim: 50,
        iterations: 20_000,
        ..Default::default()
    };
    let (m, _) = train_skipgram(&corpus, &v, &cfg, &mut Rng::new(4, Stream::Embedding)).unwrap();
    let row = |t: &str| m.row(v.get(t).unwrap()).to_vec();
    let (x, y, z) = (row("x"), row("y"), row("z"));
    assert!(cosine(&x, &y) > cosine(&x, &z), "{} vs {}", cosine(&x, &y), cosine(&x, &z));
}

/// 6 topics of 6 tokens each; every sentence stays within one topic.
fn topical_corpus(seed: u64) -> Vec<Vec<String>> {
    let mut rng = Rng::new(seed, Stream::Shuffle);
    (0..2000)
        .map(|_| {
            let topic = rng.below(6);
            (0..8).map(|_| format!("t{topic}w{}", rng.below(6))).collect()
        })
        .collect()
}

#[test]
fn windowed_loss_does_not_increase_early() {
    // The schedule spans exactly the ten observed windows.
    let corpus = topical_corpus(1);
    let v = Vocabulary::build(corpus.iter().flatten().map(String::as_str), 1);
    let cfg = SkipGramConfig {
        dim: 50,
        iterations: 10_000,
        ..Default::default()
    };
    for seed in 0..10 {
        let (_, curve) = train_skipgram(&corpus, &v, &cfg, &mut Rng::new(seed, Stream::Embedding)).unwrap();
        assert_eq!(curve.len(), 10);
        for w in curve.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: {curve:?}");
        }
    }
}
