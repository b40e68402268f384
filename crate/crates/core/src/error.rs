//! Error type shared by all modules of the crate.

use std::fmt;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug)]
pub enum CoreError {
    /// A grid or operator was handed data of the wrong shape.
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// Invalid shape at construction time (empty, zero extent, rank > 3, ...).
    InvalidShape(String),
    /// Real/complex field of an argument is incompatible with the operation.
    FieldMismatch(String),
    InvalidArgument(String),
    /// Dense materialization refused: problem too large for the oracle path.
    SizeGuard {
        context: &'static str,
        limit: usize,
        got: usize,
    },
    /// Iterative solver residual exceeded the divergence guard.
    SolverDiverged { iteration: usize, residual: f64 },
    /// Conjugate gradient hit a zero-curvature direction.
    SolverBreakdown { iteration: usize, detail: String },
    /// Factor fit loss exceeded the divergence guard; carries the partial trace.
    FitDiverged {
        step: usize,
        initial_loss: f64,
        loss: f64,
        losses: Vec<f64>,
    },
    Io(std::io::Error),
    Parse(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch {
                context,
                expected,
                got,
            } => write!(
                f,
                "shape mismatch in {context}: expected {expected:?}, got {got:?}"
            ),
            CoreError::InvalidShape(msg) => write!(f, "invalid shape: {msg}"),
            CoreError::FieldMismatch(msg) => write!(f, "field mismatch: {msg}"),
            CoreError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            CoreError::SizeGuard {
                context,
                limit,
                got,
            } => write!(
                f,
                "size guard in {context}: {got} unknowns exceed the limit of {limit}"
            ),
            CoreError::SolverDiverged {
                iteration,
                residual,
            } => write!(f, "solver diverged at iteration {iteration} (residual {residual:e})"),
            CoreError::SolverBreakdown { iteration, detail } => {
                write!(f, "solver breakdown at iteration {iteration}: {detail}")
            }
            CoreError::FitDiverged {
                step,
                initial_loss,
                loss,
                ..
            } => write!(
                f,
                "factor fit diverged at step {step}: loss {loss:e} vs initial {initial_loss:e}"
            ),
            CoreError::Io(err) => write!(f, "i/o error: {err}"),
            CoreError::Parse(msg) => write!(f, "parse error: {msg}"),
        }
    }
}

impl std::error::Error for CoreError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CoreError::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for CoreError {
    fn from(err: std::io::Error) -> Self {
        CoreError::Io(err)
    }
}
