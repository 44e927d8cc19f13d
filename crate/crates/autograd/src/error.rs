use std::fmt;

pub type Result<T> = std::result::Result<T, AutogradError>;

/// Errors from tensor construction, graph ops, and the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub enum AutogradError {
    /// Tensor data length does not match the product of the shape.
    DataLength { shape: Vec<usize>, expected: usize, got: usize },
    /// Two operands have incompatible shapes for the named operation.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// The operation needs a scalar (single-element) tensor.
    NotScalar { op: &'static str, shape: Vec<usize> },
    /// Cross entropy with every position masked out.
    EmptyLoss,
    /// A target id is outside `[0, classes)`.
    TargetOutOfRange {
        position: usize,
        target: usize,
        classes: usize,
    },
    /// An auxiliary buffer (mask, ids) has the wrong length.
    AuxLength { op: &'static str, expected: usize, got: usize },
    /// An embedding lookup id is outside the table.
    IndexOutOfRange { index: usize, rows: usize },
    /// A column slice reaches past the tensor width.
    SliceOutOfRange { start: usize, len: usize, cols: usize },
    /// Optimizer state does not match the parameter it is applied to.
    StateShapeMismatch { name: String, expected: usize, got: usize },
}

impl fmt::Display for AutogradError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DataLength { shape, expected, got } => write!(
                f,
                "data length {got} does not match shape {shape:?} (expected {expected})"
            ),
            Self::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Self::NotScalar { op, shape } => {
                write!(f, "{op}: expected a scalar tensor, got shape {shape:?}")
            }
            Self::EmptyLoss => write!(f, "empty loss: every position is masked"),
            Self::TargetOutOfRange { position, target, classes } => write!(
                f,
                "target {target} at position {position} is outside [0, {classes})"
            ),
            Self::AuxLength { op, expected, got } => {
                write!(f, "{op}: auxiliary buffer has length {got}, expected {expected}")
            }
            Self::IndexOutOfRange { index, rows } => {
                write!(f, "lookup index {index} is outside a table with {rows} rows")
            }
            Self::SliceOutOfRange { start, len, cols } => {
                write!(f, "column slice {start}..{} exceeds width {cols}", start + len)
            }
            Self::StateShapeMismatch { name, expected, got } => write!(
                f,
                "optimizer state for '{name}' has {got} elements, parameter has {expected}"
            ),
        }
    }
}

impl std::error::Error for AutogradError {}
