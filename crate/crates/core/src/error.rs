use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    /// Finite escape of the Riccati solution (conjugate point), or loss of
    /// convexity of the one-step problem in discrete time.
    #[error("Riccati solution blew up at t = {time} (norm {norm:e})")]
    BlowUp { time: f64, norm: f64 },

    #[error("{what} is numerically singular (condition estimate {condition:e})")]
    Singular { what: &'static str, condition: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("infeasible control for class {class}: X = {x} cannot realise u = {u}")]
    InfeasibleControl { class: usize, x: f64, u: f64 },

    #[error("negative timer rate at {} grid step(s), first at step {}", .steps.len(), .steps.first().map(|s| s.step).unwrap_or(0))]
    NegativeTimer { steps: Vec<TimerViolation> },

    #[error("bisection bracket not found: predicate still false at c4/c3 = {upper:e}")]
    Bracket { upper: f64 },

    #[error("time grids do not match ({left} vs {right} points)")]
    GridMismatch { left: usize, right: usize },
}

/// One offending (grid step, class) pair of a timer schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimerViolation {
    pub step: usize,
    pub time: f64,
    pub class: usize,
    pub rate: f64,
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
