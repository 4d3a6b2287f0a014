use alloc::string::String;
use alloc::vec::Vec;

/// Error type shared by every fallible operation in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not fit together.
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A generic extent problem that is not a two-operand mismatch.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A precondition on configuration or arguments was violated.
    #[error("contract error: {0}")]
    Contract(String),
    /// A scalar argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Input data (labels, masks) holds an invalid value.
    #[error("data error: {0}")]
    Data(String),
    /// `backward` was called on a loss that does not depend on any trainable leaf.
    #[error("empty tape: loss is not connected to any requires_grad leaf")]
    EmptyTape,
    /// `backward` was called twice without `reset`.
    #[error("backward already ran on this tape; call reset_grads first")]
    BackwardTwice,
    /// A finite-difference probe produced a non-finite value.
    #[error("non-finite function value while perturbing input {input} element {element}")]
    NonFinite { input: usize, element: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<T> {
    Err(Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}
