use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use super::matrix::{EmbeddingMatrix, Provenance};
use super::vocab::{Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipGramConfig {
    pub dim: usize,
    /// Maximum context radius; each pair draws its radius from `1..=window`.
    pub window: usize,
    pub negatives: usize,
    pub iterations: u64,
    /// Learning rate at iteration 0, decayed linearly towards
    /// `lr_start * lr_floor`.
    pub lr_start: f64,
    pub lr_floor: f64,
    pub unigram_power: f64,
    /// Iterations per entry of the reported loss curve.
    pub loss_window: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            window: 5,
            negatives: 5,
            iterations: 500_000,
            lr_start: 0.025,
            lr_floor: 1e-4,
            unigram_power: 0.75,
            loss_window: 1000,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 {
            return Err(Error::Config(
                "skip-gram needs dim > 0, window >= 1, negatives >= 1".into(),
            ));
        }
        if !(self.lr_start > 0.0) || self.loss_window == 0 {
            return Err(Error::Config(
                "skip-gram needs lr_start > 0 and loss_window >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Draws token indices with probability proportional to `count^power`.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    dist: WeightedIndex<f64>,
    probs: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(counts: &[u64], power: f64) -> Result<Self> {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(power)).collect();
        let total: f64 = weights.iter().sum();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidArgument(format!("negative sampler: {e}")))?;
        Ok(Self {
            dist,
            probs: weights.iter().map(|w| w / total).collect(),
        })
    }

    /// Target probability of each index.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        self.dist.sample(rng.inner_mut())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Skip-gram with negative sampling over an encoded corpus. Keeps input and
/// output vectors in f64 and exposes single steps so training can be
/// observed.
#[derive(Clone, Debug)]
pub struct SkipGram {
    cfg: SkipGramConfig,
    vocab_size: usize,
    sentences: Vec<Vec<usize>>,
    /// (sentence, position) of every token with at least one neighbor.
    centers: Vec<(u32, u32)>,
    sampler: NegativeSampler,
    input: Vec<f64>,
    output: Vec<f64>,
    iteration: u64,
    loss_sum: f64,
    loss_count: u64,
    loss_curve: Vec<f64>,
}

impl SkipGram {
    /// Encodes the corpus, drops out-of-vocabulary tokens and initializes
    /// input vectors uniformly in `±0.5/d` and output vectors at zero.
    pub fn new<S: AsRef<str>>(
        corpus: &[Vec<S>],
        vocab: &Vocabulary,
        cfg: SkipGramConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::Empty("skip-gram corpus".into()));
        }
        let sentences: Vec<Vec<usize>> = corpus
            .iter()
            .map(|s| {
                vocab
                    .encode(s)
                    .into_iter()
                    .filter(|&i| i > UNK)
                    .collect::<Vec<_>>()
            })
            .filter(|s| s.len() >= 2)
            .collect();
        let centers: Vec<(u32, u32)> = sentences
            .iter()
            .enumerate()
            .flat_map(|(si, s)| (0..s.len()).map(move |p| (si as u32, p as u32)))
            .collect();
        if centers.is_empty() {
            return Err(Error::NoTrainingPairs);
        }
        let mut counts = vec![0u64; vocab.len()];
        for s in &sentences {
            for &t in s {
                counts[t] += 1;
            }
        }
        let sampler = NegativeSampler::new(&counts, cfg.unigram_power)?;
        let d = cfg.dim;
        let v = vocab.len();
        let half = 0.5 / d as f64;
        let mut input: Vec<f64> = (0..v * d).map(|_| rng.uniform(-half, half)).collect();
        input[..d].iter_mut().for_each(|x| *x = 0.0);
        Ok(Self {
            vocab_size: v,
            sentences,
            centers,
            sampler,
            input,
            output: vec![0.0; v * d],
            iteration: 0,
            loss_sum: 0.0,
            loss_count: 0,
            loss_curve: Vec::new(),
            cfg,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn sampler(&self) -> &NegativeSampler {
        &self.sampler
    }

    /// Mean loss of each completed window of `cfg.loss_window` iterations.
    pub fn loss_curve(&self) -> &[f64] {
        &self.loss_curve
    }

    fn learning_rate(&self) -> f64 {
        let progress = self.iteration as f64 / self.cfg.iterations.max(1) as f64;
        self.cfg.lr_start * (1.0 - progress).max(self.cfg.lr_floor)
    }

    /// One positive (center, context) pair and its negatives.
    pub fn step(&mut self, rng: &mut Rng) {
        let d = self.cfg.dim;
        let (si, pos) = self.centers[rng.below(self.centers.len())];
        let sent = &self.sentences[si as usize];
        let pos = pos as usize;
        let radius = 1 + rng.below(self.cfg.window);
        let lo = pos.saturating_sub(radius);
        let hi = (pos + radius).min(sent.len() - 1);
        let mut ctx = lo + rng.below(hi - lo);
        if ctx >= pos {
            ctx += 1;
        }
        let center = sent[pos];
        let context = sent[ctx];
        let lr = self.learning_rate();

        let mut grad_in = vec![0.0; d];
        let mut loss = 0.0;
        let v_in = center * d;
        let mut update = |target: usize, label: f64, out: &mut [f64], input: &[f64]| {
            let u = &mut out[target * d..(target + 1) * d];
            let v = &input[v_in..v_in + d];
            let score: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            let p = sigmoid(score);
            loss -= if label > 0.5 { p } else { 1.0 - p }.max(1e-12).ln();
            let g = lr * (label - p);
            for k in 0..d {
                grad_in[k] += g * u[k];
                u[k] += g * v[k];
            }
        };
        update(context, 1.0, &mut self.output, &self.input);
        // A vocabulary whose only sampled token is the context yields no
        // usable negatives.
        let only_context = self.sampler.probs[context] >= 1.0;
        for _ in 0..self.cfg.negatives {
            if only_context {
                break;
            }
            let neg = loop {
                let n = self.sampler.sample(rng);
                if n != context {
                    break n;
                }
            };
            update(neg, 0.0, &mut self.output, &self.input);
        }
        for (w, g) in self.input[v_in..v_in + d].iter_mut().zip(&grad_in) {
            *w += g;
        }

        self.iteration += 1;
        self.loss_sum += loss;
        self.loss_count += 1;
        if self.loss_count == self.cfg.loss_window {
            self.loss_curve.push(self.loss_sum / self.loss_count as f64);
            self.loss_sum = 0.0;
            self.loss_count = 0;
        }
    }

    pub fn run(&mut self, iterations: u64, rng: &mut Rng) {
        for _ in 0..iterations {
            self.step(rng);
        }
    }

    /// Input-side vectors as an embedding matrix.
    pub fn input_matrix(&self) -> Result<EmbeddingMatrix> {
        let data = self.input.iter().map(|&x| x as f32).collect();
        let table = Tensor::new(&[self.vocab_size, self.cfg.dim], data)?;
        EmbeddingMatrix::new(table, Provenance::Multilingual)
    }
}

/// Trains for `cfg.iterations` steps and returns the input vectors together
/// with the windowed loss curve.
pub fn train_skipgram<S: AsRef<str>>(
    corpus: &[Vec<S>],
    vocab: &Vocabulary,
    cfg: &SkipGramConfig,
    rng: &mut Rng,
) -> Result<(EmbeddingMatrix, Vec<f64>)> {
    let mut sg = SkipGram::new(corpus, vocab, cfg.clone(), rng)?;
    sg.run(cfg.iterations, rng);
    Ok((sg.input_matrix()?, sg.loss_curve.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn corpus(text: &[&str]) -> Vec<Vec<String>> {
        text.iter()
            .map(|s| s.split_whitespace().map(String::from).collect())
            .collect()
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let c = corpus(&["a b c", "b c a"]);
        let v = Vocabulary::build(c.iter().flatten().map(String::as_str), 1);
        let cfg = SkipGramConfig {
            dim: 8,
            iterations: 0,
            ..Default::default()
        };
        let init = SkipGram::new(&c, &v, cfg.clone(), &mut Rng::new(1, Stream::Embedding))
            .unwrap()
            .input_matrix()
            .unwrap();
        let (m, curve) = train_skipgram(&c, &v, &cfg, &mut Rng::new(1, Stream::Embedding)).unwrap();
        assert_eq!(m, init);
        assert!(curve.is_empty());
        assert_eq!(m.provenance, Provenance::Multilingual);
    }

    #[test]
    fn single_token_sentences_have_no_pairs() {
        let c = corpus(&["a", "b", "a"]);
        let v = Vocabulary::build(c.iter().flatten().map(String::as_str), 1);
        let err = SkipGram::new(&c, &v, SkipGramConfig::default(), &mut Rng::new(0, Stream::Embedding))
            .unwrap_err();
        assert!(matches!(err, Error::NoTrainingPairs));
    }

    #[test]
    fn pad_row_stays_zero_and_training_is_seeded() {
        let c = corpus(&["x y", "y z w", "w x"]);
        let v = Vocabulary::build(c.iter().flatten().map(String::as_str), 1);
        let cfg = SkipGramConfig {
            dim: 6,
            iterations: 500,
            ..Default::default()
        };
        let run = || train_skipgram(&c, &v, &cfg, &mut Rng::new(9, Stream::Embedding)).unwrap().0;
        let a = run();
        assert_eq!(a, run());
        assert!(a.row(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_config() {
        let c = corpus(&["a b"]);
        let v = Vocabulary::build(c.iter().flatten().map(String::as_str), 1);
        for cfg in [
            SkipGramConfig { window: 0, ..Default::default() },
            SkipGramConfig { negatives: 0, ..Default::default() },
            SkipGramConfig { dim: 0, ..Default::default() },
        ] {
            assert!(SkipGram::new(&c, &v, cfg, &mut Rng::new(0, Stream::Embedding)).is_err());
        }
    }
}
