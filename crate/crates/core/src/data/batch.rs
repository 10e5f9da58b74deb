use super::Example;
use crate::embeddings::{Vocabulary, PAD, UNK};
use crate::error::{Error, Result};
use crate::nn::SequenceMask;
use crate::rng::Rng;

/// Row-major `batch x len` token indices, padded with PAD past each
/// sequence's length.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch {
    pub indices: Vec<usize>,
    pub mask: SequenceMask,
    pub labels: Vec<usize>,
}

impl EncodedBatch {
    pub fn batch(&self) -> usize {
        self.mask.batch()
    }

    pub fn len(&self) -> usize {
        self.mask.padded_len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch() == 0
    }

    /// Encodes token lists, truncating to `max_len`. A text without tokens
    /// is encoded as a lone UNK so every row has length at least one.
    pub fn encode<S: AsRef<str>>(
        rows: &[(Vec<S>, usize)],
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("batch".into()));
        }
        let encoded: Vec<Vec<usize>> = rows
            .iter()
            .map(|(toks, _)| {
                let mut ids = vocab.encode(&toks[..toks.len().min(max_len)]);
                if ids.is_empty() {
                    ids.push(UNK);
                }
                ids
            })
            .collect();
        let len = encoded.iter().map(Vec::len).max().unwrap_or(1);
        let mut indices = vec![PAD; rows.len() * len];
        for (r, ids) in encoded.iter().enumerate() {
            indices[r * len..r * len + ids.len()].copy_from_slice(ids);
        }
        let lengths = encoded.iter().map(Vec::len).collect();
        Ok(Self {
            indices,
            mask: SequenceMask::new(lengths, len)?,
            labels: rows.iter().map(|(_, l)| *l).collect(),
        })
    }
}

/// Splits examples into batches in input order, or in a seeded shuffled
/// order when `shuffle` is given. The last batch may be short.
pub fn make_batches(
    examples: &[Example],
    vocab: &Vocabulary,
    batch_size: usize,
    max_len: usize,
    shuffle: Option<&mut Rng>,
) -> Result<Vec<EncodedBatch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if max_len < 2 {
        return Err(Error::InvalidArgument("max length must be at least 2".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(rng) = shuffle {
        rng.shuffle(&mut order);
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<(Vec<&str>, usize)> = chunk
                .iter()
                .map(|&i| (examples[i].tokens().collect(), examples[i].label.index()))
                .collect();
            EncodedBatch::encode(&rows, vocab, max_len)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;
    use crate::rng::{Rng, Stream};
    use proptest::prelude::*;

    fn examples(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example::new(format!("w{i} common tok{}", i % 3), Label::ALL[i % 3]))
            .collect()
    }

    fn vocab(exs: &[Example]) -> Vocabulary {
        Vocabulary::build(exs.iter().flat_map(|e| e.tokens()), 1)
    }

    #[test]
    fn final_partial_batch_is_emitted() {
        let exs = examples(5);
        let b = make_batches(&exs, &vocab(&exs), 2, 60, None).unwrap();
        assert_eq!(b.iter().map(EncodedBatch::batch).collect::<Vec<_>>(), vec![2, 2, 1]);
    }

    #[test]
    fn long_text_is_truncated() {
        let text: Vec<String> = (0..70).map(|i| format!("t{i}")).collect();
        let exs = vec![Example::new(text.join(" "), Label::Neutral)];
        let v = vocab(&exs);
        let b = &make_batches(&exs, &v, 4, 60, None).unwrap()[0];
        assert_eq!(b.mask.lengths(), &[60]);
        assert_eq!(b.indices, v.encode(&text[..60]));
    }

    #[test]
    fn shuffle_is_seeded() {
        let exs = examples(40);
        let v = vocab(&exs);
        let run = |seed| make_batches(&exs, &v, 8, 60, Some(&mut Rng::new(seed, Stream::Shuffle))).unwrap();
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn rejects_bad_sizes() {
        let exs = examples(2);
        let v = vocab(&exs);
        assert!(make_batches(&exs, &v, 0, 60, None).is_err());
        assert!(make_batches(&exs, &v, 1, 1, None).is_err());
    }

    proptest! {
        #[test]
        fn padding_cells_are_pad(lens in proptest::collection::vec(1usize..12, 1..10), max_len in 2usize..8) {
            let exs: Vec<Example> = lens
                .iter()
                .map(|&n| Example::new((0..n).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" "), Label::Positive))
                .collect();
            let v = vocab(&exs);
            for b in make_batches(&exs, &v, 3, max_len, None).unwrap() {
                for r in 0..b.batch() {
                    let len = b.mask.lengths()[r];
                    prop_assert!(len >= 1 && len <= max_len);
                    for t in 0..b.len() {
                        let idx = b.indices[r * b.len() + t];
                        prop_assert!(idx < v.len());
                        prop_assert_eq!(t >= len, idx == PAD);
                    }
                }
            }
        }
    }
}
