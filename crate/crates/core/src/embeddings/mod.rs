//! Token vocabularies and the embedding tables fed to the models: random
//! initialization, vectors read from a text file (with a character 3-gram
//! hash fallback), and skip-gram vectors trained on in-domain text.

mod matrix;
mod skipgram;
mod vocab;

pub use matrix::{
    char_hash_embed, char_hash_matrix, init_random, load_pretrained, EmbeddingMatrix, Provenance,
    RANDOM_INIT_BOUND,
};
pub use skipgram::{train_skipgram, NegativeSampler, SkipGram, SkipGramConfig};
pub use vocab::{Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
