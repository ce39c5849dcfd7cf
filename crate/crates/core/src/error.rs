use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for an operation.
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// An operation produced NaN or infinity.
    NonFinite { op: &'static str },
    /// A loss handed to `backward` was not a 1x1 tensor.
    NonScalarLoss { shape: (usize, usize) },
    /// A document violates a corpus invariant.
    Validation { doc: String, reason: String },
    /// A label name is not part of the schema.
    UnknownLabel { kind: &'static str, name: String },
    /// A label schema is malformed.
    Schema(String),
    /// A document id is absent from a precomputed embedding table.
    MissingDocument(String),
    /// Configured and observed widths disagree.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A configuration value is out of range.
    Config(String),
    /// A caller-supplied argument is out of range.
    InvalidArgument(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => write!(
                f,
                "shape mismatch in {op}: {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::NonFinite { op } => write!(f, "non-finite value produced by {op}"),
            Error::NonScalarLoss { shape } => {
                write!(f, "loss must be 1x1, got {}x{}", shape.0, shape.1)
            }
            Error::Validation { doc, reason } => write!(f, "document {doc:?}: {reason}"),
            Error::UnknownLabel { kind, name } => write!(f, "unknown {kind} label {name:?}"),
            Error::Schema(msg) => write!(f, "invalid label schema: {msg}"),
            Error::MissingDocument(id) => {
                write!(f, "document {id:?} not found in embedding table")
            }
            Error::DimensionMismatch { what, expected, found } => {
                write!(f, "{what}: expected width {expected}, found {found}")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
