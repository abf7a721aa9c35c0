use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("gradient root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("loss function is not deterministic across repeated evaluations")]
    Nondeterministic,
    #[error("chunk accumulator is full ({0} entries); flush before accumulating")]
    ChunkFull(usize),
    #[error("chunk accumulator is empty")]
    EmptyChunk,
    #[error("refinement budget of {0} steps exhausted")]
    RefinementExhausted(usize),
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("missing auxiliary record: {0}")]
    MissingAux(&'static str),
    #[error("layer {layer}: {source}")]
    Layer { layer: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// The innermost error beneath any layer context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Layer { source, .. } => source.root(),
            e => e,
        }
    }

    /// Whether a non-finite value caused this error.
    pub fn is_non_finite(&self) -> bool {
        matches!(self.root(), Error::NonFinite(_))
    }

    pub(crate) fn in_layer(self, layer: usize) -> Self {
        Error::Layer {
            layer,
            source: Box::new(self),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_cause_through_layers() {
        let e = Error::NonFinite("exp").in_layer(0).in_layer(3);
        assert!(e.is_non_finite());
        assert_eq!(e.root(), &Error::NonFinite("exp"));
        assert!(!Error::EmptyChunk.in_layer(1).is_non_finite());
    }
}
