use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Bound of the uniform distribution used for random initialization.
pub const RANDOM_INIT_BOUND: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Random,
    Pretrained,
    Multilingual,
    CharHash,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Pretrained => "pretrained",
            Self::Multilingual => "multilingual",
            Self::CharHash => "char-hash",
        })
    }
}

/// A `V x d` lookup table. Row 0 belongs to PAD and stays zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub table: Tensor<f32>,
    pub trainable: bool,
    pub provenance: Provenance,
    /// Fraction of non-reserved tokens found in a vector file, when loaded
    /// from one.
    pub coverage: Option<f64>,
}

impl EmbeddingMatrix {
    pub fn new(table: Tensor<f32>, provenance: Provenance) -> Result<Self> {
        if table.ndim() != 2 || table.shape()[0] < 1 || table.shape()[1] == 0 {
            return Err(Error::InvalidArgument(format!(
                "embedding table must be V x d with d > 0, got {:?}",
                table.shape()
            )));
        }
        if !table.all_finite() {
            return Err(Error::NonFinite("embedding table".into()));
        }
        let mut m = Self {
            table,
            trainable: true,
            provenance,
            coverage: None,
        };
        m.zero_pad_row();
        Ok(m)
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.table.row(i)
    }

    fn zero_pad_row(&mut self) {
        self.table.row_mut(PAD).iter_mut().for_each(|v| *v = 0.0);
    }

    /// Writes the text format, skipping the PAD row.
    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.vocab_size() {
            return Err(Error::InvalidArgument(format!(
                "vocabulary has {} entries but the matrix has {} rows",
                vocab.len(),
                self.vocab_size()
            )));
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut line = String::new();
        writeln!(w, "{} {}", self.vocab_size() - 1, self.dim()).map_err(|e| Error::io(path, e))?;
        for (i, tok) in vocab.tokens().iter().enumerate().skip(1) {
            line.clear();
            line.push_str(tok);
            for v in self.row(i) {
                // Display prints the shortest string that parses back to the
                // same f32, which makes save/load lossless.
                let _ = write!(line, " {v}");
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Rows i.i.d. uniform in `[-0.05, 0.05)`, PAD zeroed.
pub fn init_random(vocab: &Vocabulary, d: usize, rng: &mut Rng) -> Result<EmbeddingMatrix> {
    if vocab.len() < 2 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "random embeddings need V >= 2 and d > 0 (V={}, d={d})",
            vocab.len()
        )));
    }
    let data = (0..vocab.len() * d)
        .map(|_| rng.uniform(-RANDOM_INIT_BOUND, RANDOM_INIT_BOUND) as f32)
        .collect();
    EmbeddingMatrix::new(Tensor::new(&[vocab.len(), d], data)?, Provenance::Random)
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Character 3-grams of `<token>`, by chars rather than bytes.
fn trigrams(token: &str) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('<')
        .chain(token.chars())
        .chain(std::iter::once('>'))
        .collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

fn basis(gram: &str, d: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(fnv1a(gram.as_bytes(), seed));
    (0..d).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn hash_embed_with(
    token: &str,
    d: usize,
    mut basis_of: impl FnMut(&str) -> Vec<f64>,
) -> Result<Vec<f32>> {
    if token.is_empty() {
        return Err(Error::InvalidArgument("cannot hash-embed an empty token".into()));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let mut acc = vec![0.0f64; d];
    for g in trigrams(token) {
        for (a, b) in acc.iter_mut().zip(basis_of(&g)) {
            *a += b;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(acc.iter().map(|v| (v / norm) as f32).collect())
}

/// Deterministic unit vector for a token: the normalized sum of
/// pseudo-random basis vectors, one per character 3-gram of `<token>`.
/// Tokens sharing 3-grams share directions.
pub fn char_hash_embed(token: &str, d: usize, seed: u64) -> Result<Vec<f32>> {
    hash_embed_with(token, d, |g| basis(g, d, seed))
}

/// Fills rows from `char_hash_embed`, caching basis vectors across tokens.
fn char_hash_rows(
    table: &mut Tensor<f32>,
    vocab: &Vocabulary,
    rows: impl IntoIterator<Item = usize>,
    seed: u64,
) -> Result<()> {
    let d = table.shape()[1];
    let mut cache: HashMap<String, Vec<f64>> = HashMap::new();
    for i in rows {
        let tok = vocab.token(i).expect("row within vocabulary");
        let v = hash_embed_with(tok, d, |g| {
            cache
                .entry(g.to_string())
                .or_insert_with(|| basis(g, d, seed))
                .clone()
        })?;
        table.row_mut(i).copy_from_slice(&v);
    }
    Ok(())
}

/// Character-hash vectors for the whole vocabulary. Used as the stand-in
/// for character-based pretrained vectors when no file is supplied.
pub fn char_hash_matrix(vocab: &Vocabulary, d: usize, seed: u64) -> Result<EmbeddingMatrix> {
    let mut table = Tensor::zeros(&[vocab.len(), d]);
    char_hash_rows(&mut table, vocab, 1..vocab.len(), seed)?;
    EmbeddingMatrix::new(table, Provenance::CharHash)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads a "V d" text vector file. Vocabulary tokens missing from the file
/// get character-hash vectors; the found fraction is reported as coverage.
/// Every line is validated even when its token is not needed.
pub fn load_pretrained(path: &Path, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(parse_err(path, 1, "empty file, expected header \"V d\"")),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (count, d) = match fields.as_slice() {
        [v, d] => match (v.parse::<usize>(), d.parse::<usize>()) {
            (Ok(v), Ok(d)) if d > 0 => (v, d),
            _ => return Err(parse_err(path, 1, format!("bad header `{header}`"))),
        },
        _ => return Err(parse_err(path, 1, format!("bad header `{header}`"))),
    };

    let mut table = Tensor::zeros(&[vocab.len(), d]);
    let mut found = vec![false; vocab.len()];
    let mut rows = 0usize;
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("nonblank line has a field");
        let values: Vec<&str> = parts.collect();
        if values.is_empty() {
            return Err(parse_err(path, lineno, "line has a token but no values"));
        }
        if values.len() != d {
            return Err(parse_err(
                path,
                lineno,
                format!("dimension {} differs from header dimension {d}", values.len()),
            ));
        }
        let idx = match vocab.get(token) {
            Some(i) if i != PAD && !found[i] => i,
            _ => {
                // Still validate the numbers.
                for v in &values {
                    parse_value(path, lineno, v)?;
                }
                continue;
            }
        };
        let row = table.row_mut(idx);
        for (slot, v) in row.iter_mut().zip(&values) {
            *slot = parse_value(path, lineno, v)?;
        }
        found[idx] = true;
    }
    if rows != count {
        return Err(parse_err(
            path,
            1,
            format!("header declares {count} vectors, file has {rows}"),
        ));
    }

    let misses: Vec<usize> = (1..vocab.len()).filter(|&i| !found[i]).collect();
    char_hash_rows(&mut table, vocab, misses.iter().copied(), seed)?;
    let regular = (2..vocab.len()).count();
    let hits = (2..vocab.len()).filter(|&i| found[i]).count();
    let mut m = EmbeddingMatrix::new(table, Provenance::Pretrained)?;
    m.coverage = Some(if regular == 0 {
        0.0
    } else {
        hits as f64 / regular as f64
    });
    Ok(m)
}

fn parse_value(path: &Path, line: usize, s: &str) -> Result<f32> {
    match s.parse::<f32>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(path, line, format!("`{s}` is not a finite number"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn vocab(words: &str) -> Vocabulary {
        Vocabulary::build(words.split_whitespace(), 1)
    }

    #[test]
    fn random_init_is_seeded_and_bounded() {
        let v = vocab("a b c d");
        let m1 = init_random(&v, 300, &mut Rng::new(3, Stream::Embedding)).unwrap();
        let m2 = init_random(&v, 300, &mut Rng::new(3, Stream::Embedding)).unwrap();
        assert_eq!(m1, m2);
        assert!(m1.row(PAD).iter().all(|&x| x == 0.0));
        assert!(m1.table.data().iter().all(|x| x.abs() <= 0.05));
    }

    #[test]
    fn random_init_mean_is_centered() {
        // 10^5 draws from U(-a, a): sd of the mean is a / sqrt(3n).
        let words: Vec<String> = (0..1000).map(|i| format!("w{i}")).collect();
        let v = Vocabulary::build(words.iter().map(String::as_str), 1);
        let m = init_random(&v, 100, &mut Rng::new(11, Stream::Embedding)).unwrap();
        let xs: Vec<f64> = m.table.data()[100..].iter().map(|&x| x as f64).collect();
        assert!(xs.len() >= 100_000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = 0.05 / (3.0 * xs.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd, "mean {mean} vs 3sd {}", 3.0 * sd);
    }

    #[test]
    fn random_init_needs_two_rows() {
        let v = vocab("");
        assert_eq!(v.len(), 2);
        assert!(init_random(&v, 4, &mut Rng::new(0, Stream::Embedding)).is_ok());
        assert!(init_random(&v, 0, &mut Rng::new(0, Stream::Embedding)).is_err());
    }

    #[test]
    fn char_hash_is_deterministic_unit_norm() {
        let a = char_hash_embed("zabardast", 64, 1).unwrap();
        let b = char_hash_embed("zabardast", 64, 1).unwrap();
        assert_eq!(a, b);
        let n: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert_ne!(a, char_hash_embed("zabardast", 64, 2).unwrap());
        assert!(char_hash_embed("", 64, 1).is_err());
    }

    #[test]
    fn single_char_token_has_one_trigram() {
        assert_eq!(trigrams("a"), vec!["<a>"]);
        assert_eq!(trigrams("hé").len(), 2);
    }

    #[test]
    fn cached_rows_match_direct_hash() {
        let v = vocab("acha achaa bura");
        let m = char_hash_matrix(&v, 16, 5).unwrap();
        for i in 1..v.len() {
            assert_eq!(m.row(i), char_hash_embed(v.token(i).unwrap(), 16, 5).unwrap());
        }
        assert!(m.row(PAD).iter().all(|&x| x == 0.0));
    }
}
