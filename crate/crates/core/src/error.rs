use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the tensor engine, the model and the data transforms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("spatial pyramid bin {bin_w}x{bin_h} does not fit a {width}x{height} feature map")]
    BinTooLarge {
        bin_w: usize,
        bin_h: usize,
        width: usize,
        height: usize,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("parameter tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unknown parameter tensor `{0}`")]
    UnknownParam(String),
    #[error("missing parameter tensor `{0}`")]
    MissingParam(String),
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}
