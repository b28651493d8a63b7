//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// The CLI maps these onto process exit codes: configuration problems exit
/// with 2, solver divergence with 3, inner-resolvent failures with 4 and
/// failed verification with 5.
#[derive(Debug, Error)]
pub enum Error {
    /// Two signals or lifted signals live on different time grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Resampling between grids of different durations.
    #[error("duration mismatch: source {source_ms} ms, target {target_ms} ms")]
    DurationMismatch { source_ms: f64, target_ms: f64 },

    /// A signal failed validation (wrong length, non-finite entries, ...).
    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    /// Bad configuration: schema violations, unresolvable paths, invalid
    /// parameter combinations. `pointer` holds a JSON pointer to the
    /// offending field when one is known.
    #[error("configuration error{}: {message}", pointer.as_deref().map(|p| format!(" at {p}")).unwrap_or_default())]
    Config {
        message: String,
        pointer: Option<String>,
    },

    /// A shift policy produced operator pairs that cannot be certified
    /// monotone. Lists the offending pairs.
    #[error("inadmissible shifts for pairs [{}]: {message}", pairs.join(", "))]
    InadmissibleShifts {
        pairs: Vec<String>,
        message: String,
    },

    /// The inner branch resolvent cannot contract at the requested step.
    #[error("branch resolvent for {branch} does not contract: factor {factor:.6} >= 1 at step {gamma_step}")]
    ResolventNotContractive {
        branch: String,
        factor: f64,
        gamma_step: f64,
    },

    /// The inner branch resolvent ran out of iterations.
    #[error("inner resolvent for {branch} did not reach tol {tol:e} within {max_iter} iterations (last residual {last_residual:e}){}", outer_iter.map(|k| format!(" at outer iteration {k}")).unwrap_or_default())]
    InnerNoConvergence {
        branch: String,
        tol: f64,
        max_iter: usize,
        last_residual: f64,
        outer_iter: Option<usize>,
    },

    /// The outer iteration blew up.
    #[error("solver diverged at iteration {iter} ({detail}); try a smaller alpha")]
    Divergence { iter: usize, detail: String },

    /// A continuation step failed; carries the parameter value it failed at.
    #[error("sweep step {param} = {value} failed: {source}")]
    Sweep {
        param: String,
        value: f64,
        #[source]
        source: Box<Error>,
    },

    /// The reference integrator could not shrink the step any further.
    #[error("integrator step underflow at t = {t} ms (h = {h}); system too stiff for the requested tolerance")]
    Stiffness { t: f64, h: f64 },

    /// Template placements overlap when building a refined initial guess.
    #[error("template placements overlap near t = {t} ms for neuron {neuron}")]
    TemplateOverlap { neuron: usize, t: f64 },

    /// Verification metrics exceeded their thresholds.
    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config {
            message: message.into(),
            pointer: None,
        }
    }

    pub(crate) fn config_at(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            message: message.into(),
            pointer: Some(pointer.into()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
