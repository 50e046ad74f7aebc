//! Online CBOW hostname embeddings trained with negative sampling.
//!
//! Each update reconstructs every token of a window from the mean input
//! embedding of the other tokens in that window.

mod io;
pub mod kernel;
mod model;
mod sampler;
mod vocab;

use thiserror::Error;

pub use io::{FORMAT_VERSION, MAGIC};
pub use model::{cosine, EmbeddingModel, Init, ModelConfig, ModelSnapshot, Targets, TrainStats};
pub use sampler::UnigramTable;
pub use vocab::{Vocabulary, DEFAULT_MAX_VOCAB, FIRST_ID, OOV, PAD};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("sequence needs at least two real tokens")]
    DegenerateSequence,
    #[error("context has no non-PAD token")]
    EmptyContext,
    #[error("token id {0} out of range")]
    OutOfRange(u32),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("model file is corrupt or truncated")]
    CorruptFile,
    #[error("model file version {found} not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl PartialEq for EmbedError {
    fn eq(&self, other: &Self) -> bool {
        use EmbedError::*;
        match (self, other) {
            (DegenerateSequence, DegenerateSequence) | (EmptyContext, EmptyContext) | (CorruptFile, CorruptFile) => {
                true
            }
            (OutOfRange(a), OutOfRange(b)) => a == b,
            (Config(a), Config(b)) => a == b,
            (VersionMismatch { found: a, supported: b }, VersionMismatch { found: c, supported: d }) => {
                a == c && b == d
            }
            (Io(a), Io(b)) => a.kind() == b.kind(),
            _ => false,
        }
    }
}
