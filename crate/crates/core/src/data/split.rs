use serde::{Deserialize, Serialize};

use super::{Example, Label, NUM_CLASSES};
use crate::embeddings::Vocabulary;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Test,
    Validation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub role: SplitRole,
    examples: Vec<Example>,
    class_counts: [usize; NUM_CLASSES],
}

impl DatasetSplit {
    pub fn new(role: SplitRole, examples: Vec<Example>) -> Self {
        let mut class_counts = [0; NUM_CLASSES];
        for ex in &examples {
            class_counts[ex.label.index()] += 1;
        }
        Self {
            role,
            examples,
            class_counts,
        }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        self.class_counts
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn with_role(mut self, role: SplitRole) -> Self {
        self.role = role;
        self
    }
}

/// Per-class held-out counts: `round(f * N)` in total, distributed by
/// largest remainder of `f * n_c`, ties going to the lower class index.
pub(crate) fn largest_remainder(counts: &[usize], fraction: f64) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let total = (fraction * n as f64).round() as usize;
    // The epsilon absorbs representation error such as 0.29 * 100.
    let quotas: Vec<f64> = counts.iter().map(|&c| fraction * c as f64).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = take.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - take[a] as f64;
        let rb = quotas[b] - take[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &c in order.iter().cycle().take(total.saturating_sub(assigned)) {
        take[c] += 1;
    }
    for (t, &c) in take.iter_mut().zip(counts) {
        *t = (*t).min(c);
    }
    take
}

/// Splits into (train, test), choosing the held-out members of each class
/// uniformly at random. Both halves keep the input order.
pub fn stratified_split(
    examples: &[Example],
    test_fraction: f64,
    rng: &mut Rng,
) -> Result<(DatasetSplit, DatasetSplit)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, ex) in examples.iter().enumerate() {
        by_class[ex.label.index()].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() == 1 {
            return Err(Error::ClassTooSmall {
                class: Label::ALL[c].to_string(),
                count: 1,
            });
        }
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let take = largest_remainder(&counts, test_fraction);
    let mut held_out = vec![false; examples.len()];
    for (members, &k) in by_class.iter_mut().zip(&take) {
        rng.shuffle(members);
        for &i in &members[..k] {
            held_out[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (ex, &h) in examples.iter().zip(&held_out) {
        if h {
            test.push(ex.clone());
        } else {
            train.push(ex.clone());
        }
    }
    Ok((
        DatasetSplit::new(SplitRole::Train, train),
        DatasetSplit::new(SplitRole::Test, test),
    ))
}

/// Vocabulary over the training split only, so held-out text cannot leak in.
pub fn build_vocab(train: &DatasetSplit, min_freq: usize) -> Result<Vocabulary> {
    if train.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    Ok(Vocabulary::build(
        train.examples().iter().flat_map(|e| e.tokens()),
        min_freq,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::UNK;
    use crate::rng::{Rng, Stream};
    use proptest::prelude::*;

    fn fixture(counts: [usize; 3]) -> Vec<Example> {
        let mut v = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                v.push(Example::new(format!("c{c} ex{i}"), Label::ALL[c]));
            }
        }
        v
    }

    #[test]
    fn worked_largest_remainder() {
        assert_eq!(largest_remainder(&[5, 3, 2], 0.2), vec![1, 1, 0]);
        // Equal remainders: the lower class index wins.
        assert_eq!(largest_remainder(&[5, 5, 5], 0.1), vec![1, 1, 0]);
        assert_eq!(largest_remainder(&[100, 100, 100], 0.29), vec![29, 29, 29]);
    }

    #[test]
    fn worked_split() {
        let (train, test) = stratified_split(&fixture([5, 3, 2]), 0.2, &mut Rng::new(0, Stream::Split)).unwrap();
        assert_eq!(test.class_counts(), [1, 1, 0]);
        assert_eq!(train.class_counts(), [4, 2, 2]);
        assert_eq!(test.role, SplitRole::Test);
    }

    #[test]
    fn zero_fraction_gives_empty_test() {
        let (train, test) = stratified_split(&fixture([4, 3, 2]), 0.0, &mut Rng::new(0, Stream::Split)).unwrap();
        assert!(test.is_empty());
        assert_eq!(train.len(), 9);
    }

    #[test]
    fn singleton_class_is_rejected() {
        let err = stratified_split(&fixture([4, 1, 2]), 0.2, &mut Rng::new(0, Stream::Split)).unwrap_err();
        assert!(matches!(err, Error::ClassTooSmall { count: 1, .. }));
    }

    #[test]
    fn vocab_ignores_test_only_tokens() {
        let train = DatasetSplit::new(SplitRole::Train, vec![Example::new("a a b", Label::Negative)]);
        let v = build_vocab(&train, 2).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a"]);
        assert_eq!(v.encode(&["onlyintest"]), vec![UNK]);
        assert!(build_vocab(&DatasetSplit::new(SplitRole::Train, vec![]), 1).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(a in 2usize..60, b in 2usize..60, c in 2usize..60, seed: u64, f in 0.0f64..0.9) {
            let data = fixture([a, b, c]);
            let (train, test) = stratified_split(&data, f, &mut Rng::new(seed, Stream::Split)).unwrap();
            prop_assert_eq!(train.len() + test.len(), data.len());
            let mut all: Vec<&Example> = train.examples().iter().chain(test.examples()).collect();
            all.sort_by(|x, y| x.text.cmp(&y.text));
            let mut orig: Vec<&Example> = data.iter().collect();
            orig.sort_by(|x, y| x.text.cmp(&y.text));
            prop_assert_eq!(all, orig);
            for (k, &n) in [a, b, c].iter().enumerate() {
                let diff = test.class_counts()[k] as f64 - f * n as f64;
                prop_assert!(diff.abs() < 1.0 + 1e-9, "class {} diff {}", k, diff);
            }
            prop_assert_eq!(test.len(), (f * data.len() as f64).round() as usize);
        }
    }
}
