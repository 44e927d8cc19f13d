use std::fmt;

use peftlab_autograd::AutogradError;
use peftlab_model::ModelError;

pub type Result<T> = std::result::Result<T, AdapterError>;

#[derive(Debug)]
pub enum AdapterError {
    /// Adapter dimensions do not fit the model they are attached to.
    DimensionMismatch { detail: String },
    /// A LoRA target name resolves to no adaptable model matrix.
    UnknownTarget { name: String },
    /// A consumed adapter was merged a second time.
    AlreadyMerged,
    /// A training stage was started with zero trainable parameters.
    NothingToTrain,
    EmptyDataset,
    /// Loss went non-finite; tagged with the stage it happened in.
    Diverged { stage: &'static str, epoch: usize, step: usize },

    // Checkpoint container errors, one variant per failure class.
    BadMagic,
    UnsupportedVersion { found: u32 },
    UnknownKind { found: u8 },
    KindMismatch { expected: &'static str, found: &'static str },
    ChecksumMismatch,
    Truncated,
    ConfigCorrupt(String),
    TensorShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    MissingTensor { name: String },
    UnexpectedTensor { name: String },

    Io(std::io::Error),
    Model(ModelError),
    Autograd(AutogradError),
}

impl fmt::Display for AdapterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionMismatch { detail } => write!(f, "dimension mismatch: {detail}"),
            Self::UnknownTarget { name } => write!(f, "unknown adaptation target '{name}'"),
            Self::AlreadyMerged => write!(f, "adapter was already merged into a model"),
            Self::NothingToTrain => write!(f, "nothing to train: no unfrozen adapter parameters"),
            Self::EmptyDataset => write!(f, "training dataset is empty"),
            Self::Diverged { stage, epoch, step } => {
                write!(f, "loss diverged (NaN/inf) in {stage} stage at epoch {epoch}, step {step}")
            }
            Self::BadMagic => write!(f, "not a PEFT1 checkpoint (bad magic)"),
            Self::UnsupportedVersion { found } => {
                write!(f, "unsupported checkpoint version {found}")
            }
            Self::UnknownKind { found } => write!(f, "unknown checkpoint kind tag {found}"),
            Self::KindMismatch { expected, found } => {
                write!(f, "checkpoint holds a {found} payload, expected {expected}")
            }
            Self::ChecksumMismatch => write!(f, "checkpoint checksum mismatch (corrupt file)"),
            Self::Truncated => write!(f, "checkpoint file is truncated"),
            Self::ConfigCorrupt(msg) => write!(f, "checkpoint config block is invalid: {msg}"),
            Self::TensorShapeMismatch { name, expected, found } => write!(
                f,
                "tensor '{name}' has shape {found:?}, expected {expected:?}"
            ),
            Self::MissingTensor { name } => write!(f, "checkpoint is missing tensor '{name}'"),
            Self::UnexpectedTensor { name } => {
                write!(f, "checkpoint contains unexpected tensor '{name}'")
            }
            Self::Io(e) => write!(f, "io error: {e}"),
            Self::Model(e) => write!(f, "{e}"),
            Self::Autograd(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for AdapterError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io(e) => Some(e),
            Self::Model(e) => Some(e),
            Self::Autograd(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for AdapterError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<ModelError> for AdapterError {
    fn from(e: ModelError) -> Self {
        Self::Model(e)
    }
}

impl From<AutogradError> for AdapterError {
    fn from(e: AutogradError) -> Self {
        Self::Autograd(e)
    }
}
