//! Synthetic token corpora with analytically known statistics, plus the
//! frozen embedding provider that carries tokens into the flow's space.

pub mod embedding;
pub mod markov;
pub mod seq2seq;

pub use embedding::EmbeddingProvider;
pub use markov::MarkovSource;
pub use seq2seq::{Seq2SeqTask, TaskKind};

/// Token id. The reserved pad id is 0.
pub type Token = usize;

pub const PAD_TOKEN: Token = 0;

/// Vocabulary descriptor: ids live in `[0, size)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Self {
        assert!(size > 0, "vocabulary must be non-empty");
        Vocab { size }
    }

    pub fn contains(&self, t: Token) -> bool {
        t < self.size
    }
}

/// Fixed-length token sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq(pub Vec<Token>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Token] {
        &self.0
    }
}

impl std::ops::Deref for TokenSeq {
    type Target = [Token];

    fn deref(&self) -> &[Token] {
        &self.0
    }
}
