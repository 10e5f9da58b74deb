use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Dense token/index mapping with PAD at 0 and UNK at 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    min_freq: usize,
}

impl Vocabulary {
    /// Counts tokens and keeps those seen at least `min_freq` times, most
    /// frequent first, ties broken lexicographically so the order does not
    /// depend on hash iteration. The reserved literals are never admitted as
    /// corpus tokens.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut list = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        list.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        Self::from_list(list, min_freq)
    }

    /// Rebuilds a vocabulary from its full index order (as stored in a
    /// checkpoint). The first two entries must be the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>, min_freq: usize) -> crate::Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(crate::Error::InvalidArgument(
                "vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        let v = Self::from_list(tokens, min_freq);
        if v.index.len() != v.tokens.len() {
            return Err(crate::Error::InvalidArgument(
                "vocabulary has duplicate tokens".into(),
            ));
        }
        Ok(v)
    }

    fn from_list(tokens: Vec<String>, min_freq: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            index,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false: the reserved entries are present.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn index_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_or_unk(t.as_ref())).collect()
    }

    /// Indices outside the vocabulary decode to the UNK literal.
    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn min_freq_two_keeps_repeated_tokens() {
        let v = Vocabulary::build("a a b".split(' '), 2);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a"]);
    }

    #[test]
    fn min_freq_one_keeps_everything() {
        let v = Vocabulary::build("c a b a".split(' '), 1);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b", "c"]);
    }

    #[test]
    fn reserved_literals_never_collide() {
        let v = Vocabulary::build(["<pad>", "<pad>", "<unk>", "<unk>", "x", "x"], 1);
        assert_eq!(v.len(), 3);
        assert_eq!(v.get("<pad>"), Some(PAD));
        assert_eq!(v.get("<unk>"), Some(UNK));
    }

    #[test]
    fn encode_known_and_unknown() {
        let v = Vocabulary::build("a b a b".split(' '), 1);
        assert_eq!(v.encode(&["a", "b"]), vec![2, 3]);
        assert_eq!(v.encode(&["zzz"]), vec![UNK]);
    }

    #[test]
    fn from_tokens_rejects_bad_prefix() {
        assert!(Vocabulary::from_tokens(vec!["a".into(), "b".into()], 1).is_err());
        assert!(Vocabulary::from_tokens(
            vec!["<pad>".into(), "<unk>".into(), "a".into(), "a".into()],
            1
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(words in proptest::collection::vec("[a-z]{1,6}", 1..40)) {
            let v = Vocabulary::build(words.iter().map(String::as_str), 1);
            let enc = v.encode(&words);
            prop_assert!(enc.iter().all(|&i| i < v.len() && i >= 2));
            prop_assert_eq!(v.decode(&enc), words);
        }
    }
}
