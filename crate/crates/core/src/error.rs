use std::fmt;
use std::io;

use cgtn_tensor::TensorError;

pub type Result<T> = std::result::Result<T, CoreError>;

/// Errors surfaced by dataset handling, architecture parsing, training,
/// and the symbolic engine.
#[derive(Debug)]
pub enum CoreError {
    Tensor(TensorError),
    Io(io::Error),
    /// Malformed text input (architecture files, config files).
    Parse {
        what: &'static str,
        line: usize,
        message: String,
    },
    /// Dataset or serialized file does not match its format contract.
    Data(String),
    Checksum {
        file: String,
        expected: String,
        got: String,
    },
    Network {
        url: String,
        message: String,
    },
    /// Layer shapes do not flow: `layer` is the zero-based index of the
    /// first offending layer.
    Shape {
        layer: usize,
        message: String,
    },
    /// Numerical failure during optimization (NaN loss, divergence).
    Numeric(String),
    Config(String),
    /// A count or degree exceeded its configured bound.
    Overflow(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Tensor(e) => write!(f, "{e}"),
            CoreError::Io(e) => write!(f, "io: {e}"),
            CoreError::Parse {
                what,
                line,
                message,
            } => write!(f, "{what} line {line}: {message}"),
            CoreError::Data(m) => write!(f, "data: {m}"),
            CoreError::Checksum {
                file,
                expected,
                got,
            } => write!(
                f,
                "checksum mismatch for {file}: expected {expected}, got {got}"
            ),
            CoreError::Network { url, message } => write!(f, "fetch {url}: {message}"),
            CoreError::Shape { layer, message } => {
                write!(f, "shape flow at layer {layer}: {message}")
            }
            CoreError::Numeric(m) => write!(f, "numeric: {m}"),
            CoreError::Config(m) => write!(f, "config: {m}"),
            CoreError::Overflow(m) => write!(f, "overflow: {m}"),
        }
    }
}

impl std::error::Error for CoreError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CoreError::Tensor(e) => Some(e),
            CoreError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<TensorError> for CoreError {
    fn from(e: TensorError) -> Self {
        CoreError::Tensor(e)
    }
}

impl From<io::Error> for CoreError {
    fn from(e: io::Error) -> Self {
        CoreError::Io(e)
    }
}
