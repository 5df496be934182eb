use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("group order p^{levels} with p = {p} exceeds the cap {cap}")]
    CapExceeded { p: u64, levels: i64, cap: usize },

    #[error("index {index} out of range for group of order {order}")]
    IndexOutOfRange { index: usize, order: usize },

    #[error("grid functions live on different models")]
    ModelMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error("{what} did not converge (last residual {residual:e})")]
    NoConvergence { what: String, residual: f64 },

    #[error("format error: {0}")]
    Format(String),
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "order alpha must be positive and finite, got {alpha}"
        )))
    }
}
