use std::fmt;

use peftlab_autograd::AutogradError;

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    /// Configuration violates a structural invariant.
    InvalidConfig(String),
    /// Input sequence (plus any prefix) exceeds `max_seq_len`.
    SequenceTooLong { tokens: usize, prefix: usize, max_seq_len: usize },
    /// A token id is outside the vocabulary.
    TokenOutOfRange { id: u32, vocab_size: usize },
    /// Past key/values do not match the model dimensions.
    PastShapeMismatch { detail: String },
    /// Prompt for generation was empty.
    EmptyPrompt,
    /// Error bubbled up from the autodiff layer.
    Autograd(AutogradError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidConfig(msg) => write!(f, "invalid model config: {msg}"),
            Self::SequenceTooLong { tokens, prefix, max_seq_len } => write!(
                f,
                "sequence of {tokens} tokens with prefix {prefix} exceeds max_seq_len {max_seq_len}"
            ),
            Self::TokenOutOfRange { id, vocab_size } => {
                write!(f, "token id {id} is outside vocab of size {vocab_size}")
            }
            Self::PastShapeMismatch { detail } => write!(f, "past key/values mismatch: {detail}"),
            Self::EmptyPrompt => write!(f, "generation prompt is empty"),
            Self::Autograd(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Autograd(e) => Some(e),
            _ => None,
        }
    }
}

impl From<AutogradError> for ModelError {
    fn from(e: AutogradError) -> Self {
        Self::Autograd(e)
    }
}
