//! Error taxonomy shared by the whole engine.

use thiserror::Error;

/// Elementary operation that raised a domain fault during a derivative
/// evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Div,
    Ln,
    Sqrt,
    Tan,
    PowI,
}

impl std::fmt::Display for Primitive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Primitive::Div => "div",
            Primitive::Ln => "ln",
            Primitive::Sqrt => "sqrt",
            Primitive::Tan => "tan",
            Primitive::PowI => "powi",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("domain violation in primitive `{primitive}` at argument {argument}")]
    AdDomain { primitive: Primitive, argument: f64 },

    #[error("non-finite value produced while evaluating {context}")]
    NonFinite { context: &'static str },

    #[error("invalid model: {0}")]
    ModelInvalid(String),

    #[error("mass metric is not positive definite at the queried configuration (pivot {pivot} below tolerance {tolerance}); chart is degenerate there")]
    DegenerateChart { pivot: f64, tolerance: f64 },

    #[error("constraint matrix is rank deficient: numerical rank {rank}, expected {expected}")]
    SingularConstraints { rank: usize, expected: usize },

    #[error("formulation `{formulation}` does not support this constraint family: {detail}")]
    UnsupportedFormulation {
        formulation: &'static str,
        detail: &'static str,
    },

    #[error("not a Caplygin system: {detail} (sampled partial {value:.3e} above {tolerance:.1e})")]
    NotCaplygin {
        detail: String,
        value: f64,
        tolerance: f64,
    },

    #[error("singular reduced system: condition estimate {cond:.3e}")]
    SingularReduction { cond: f64 },

    #[error("degenerate constraint coupling: augmented multiplier system is singular (condition estimate {cond:.3e})")]
    DegenerateConstraint { cond: f64 },

    #[error("trajectory diverged at t = {t}: state became non-finite")]
    Divergence {
        t: f64,
        last_q: Vec<f64>,
        last_u: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
