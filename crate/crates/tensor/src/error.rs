use std::fmt;

pub type Result<T> = std::result::Result<T, TensorError>;

/// Errors raised by tensor construction, primitive operations, and the tape.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes do not satisfy the operation's contract.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Shapes cannot be aligned under trailing-axis broadcasting.
    IncompatibleBroadcast { lhs: Vec<usize>, rhs: Vec<usize> },
    /// Axis index out of range for the operand's rank.
    InvalidAxis { axis: usize, rank: usize },
    /// Reduction over zero elements where the result is undefined.
    EmptyReduction { op: &'static str, shape: Vec<usize> },
    /// Buffer length does not match the product of the shape extents.
    DataLength { expected: usize, got: usize },
    /// `backward` was called on a tensor that is not a scalar.
    NonScalarLoss { shape: Vec<usize> },
    /// A node id does not belong to this tape.
    DetachedGraph,
    /// A second backward pass was requested on a consumed tape.
    TapeConsumed,
    /// Operation-specific failure (layer contracts, invalid parameters).
    Op { op: &'static str, message: String },
}

impl TensorError {
    pub fn op(op: &'static str, message: impl Into<String>) -> Self {
        TensorError::Op {
            op,
            message: message.into(),
        }
    }
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            TensorError::IncompatibleBroadcast { lhs, rhs } => {
                write!(f, "shapes {lhs:?} and {rhs:?} do not broadcast")
            }
            TensorError::InvalidAxis { axis, rank } => {
                write!(f, "axis {axis} out of range for rank {rank}")
            }
            TensorError::EmptyReduction { op, shape } => {
                write!(f, "{op} over zero elements of shape {shape:?}")
            }
            TensorError::DataLength { expected, got } => {
                write!(
                    f,
                    "data length {got} does not match shape product {expected}"
                )
            }
            TensorError::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            TensorError::DetachedGraph => {
                write!(f, "node does not belong to this tape")
            }
            TensorError::TapeConsumed => {
                write!(f, "tape already consumed by a previous backward pass")
            }
            TensorError::Op { op, message } => write!(f, "{op}: {message}"),
        }
    }
}

impl std::error::Error for TensorError {}
