use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument violates a documented invariant.
    #[error("invalid input: {0}")]
    Validation(String),

    /// The input is well-formed but describes a degenerate situation, such as
    /// a state with zero norm.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A requested phase lies beyond the saturation of a thermo-optic heater
    /// on every 2π branch.
    #[error(
        "phase {target} rad is unreachable: heater saturates at xi0 + alpha/beta = {saturation} rad"
    )]
    Unreachable { target: f64, saturation: f64 },

    #[error("fit failed: {reason} (residual rms {residual_rms:.3e})")]
    Fit { reason: String, residual_rms: f64 },

    #[error("reconstruction failed: {0}")]
    Reconstruction(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    /// True for errors caused by the caller's parameters rather than by a
    /// numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Degenerate(_) | Error::Unreachable { .. }
        )
    }
}
