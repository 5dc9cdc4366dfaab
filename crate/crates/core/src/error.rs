use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WdlError {
    /// Malformed input: wrong shapes, negative masses, non-finite values.
    #[error("validation error: {0}")]
    Validation(String),

    /// A hyperparameter outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A scaling vector or barycenter left the finite positive reals.
    #[error(
        "numerical instability at iteration {iteration} ({what}); \
         switch to the log-domain solver or increase gamma"
    )]
    Instability { iteration: usize, what: String },

    /// A loss evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Problem too large for a dense/explicit routine.
    #[error("size guard: {0}")]
    SizeGuard(String),

    /// An iterative reference solver failed to reach its tolerance.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// Name lookup in a strategy registry failed.
    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
}

pub type Result<T> = std::result::Result<T, WdlError>;

impl WdlError {
    /// Prefixes the message with a context label, keeping the variant.
    pub fn context(self, label: &str) -> Self {
        match self {
            WdlError::Validation(m) => WdlError::Validation(format!("{label}: {m}")),
            WdlError::Parameter(m) => WdlError::Parameter(format!("{label}: {m}")),
            WdlError::Instability { iteration, what } => WdlError::Instability {
                iteration,
                what: format!("{label}: {what}"),
            },
            WdlError::Domain(m) => WdlError::Domain(format!("{label}: {m}")),
            WdlError::SizeGuard(m) => WdlError::SizeGuard(format!("{label}: {m}")),
            WdlError::NoConvergence(m) => WdlError::NoConvergence(format!("{label}: {m}")),
            other @ WdlError::UnknownStrategy { .. } => other,
        }
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(WdlError::Validation(format!(
            "{what}: expected length {want}, got {got}"
        )));
    }
    Ok(())
}

pub(crate) fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(WdlError::Validation(format!(
            "{what}: non-finite entry at index {i}"
        )));
    }
    Ok(())
}
