use thiserror::Error;

/// Library-wide error type.
///
/// Variants are grouped by how the CLI maps them to exit statuses:
/// configuration problems (status 2), invariant violations detected in the
/// input data or during a computation (status 3), and resolution failures
/// where refinement ran out of budget (status 4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("form is degenerate: {0}")]
    DegenerateForm(String),

    #[error("subspaces are not complementary: {0}")]
    NonComplementary(String),

    #[error("transversality hypothesis failed: {0}")]
    Transversality(String),

    #[error("common-complement search exhausted after {attempts} attempts (n = {n})")]
    ComplementSearchExhausted { n: usize, attempts: usize },

    #[error("curve endpoint lies on the singular cycle: {0}")]
    EndpointCrossing(String),

    #[error("unresolved crossing cluster near t = {t}: {detail}")]
    UnresolvedCrossing { t: f64, detail: String },

    #[error("focal instants accumulate: {0}")]
    Accumulation(String),

    #[error("symplectic drift {drift:.3e} exceeds bound {bound:.3e} at {steps} steps")]
    DriftExceeded { drift: f64, bound: f64, steps: usize },

    #[error("validation check '{check}' failed: {detail}")]
    Validation { check: String, detail: String },

    #[error("t = b is a focal instant; {0}")]
    EndpointFocal(String),

    #[error("endpoint is focal for the reduced system: {0}")]
    ReducedFocalAtEndpoint(String),

    #[error("degenerate focal instant at t = {0}")]
    DegenerateInstant(f64),

    #[error("no admissible departure epsilon: {0}")]
    NoAdmissibleEpsilon(String),

    #[error("not converged: {0}")]
    NonConvergence(String),

    #[error("degenerate restricted derivative at t0 = {0}")]
    DegenerateRestrictedDerivative(f64),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn validation(check: &str, detail: impl Into<String>) -> Self {
        Error::Validation {
            check: check.to_string(),
            detail: detail.into(),
        }
    }

    /// Exit status class used by the CLI: 2 config, 3 invariant, 4 resolution.
    pub fn status_class(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::NonConvergence(_)
            | Error::UnresolvedCrossing { .. }
            | Error::DriftExceeded { .. }
            | Error::NoAdmissibleEpsilon(_)
            | Error::ComplementSearchExhausted { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
