use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{what} out of range: {value} (allowed: {allowed})")]
    OutOfRange {
        what: &'static str,
        value: String,
        allowed: String,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("no {method} budget with density <= {target}; nearest feasible densities: {}", fmt_densities(.nearest))]
    InfeasibleBudget {
        method: String,
        target: f64,
        nearest: Vec<f64>,
    },

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("config error (line {line}): {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn out_of_range(
    what: &'static str,
    value: impl ToString,
    allowed: impl ToString,
) -> Error {
    Error::OutOfRange {
        what,
        value: value.to_string(),
        allowed: allowed.to_string(),
    }
}

fn fmt_densities(ds: &[f64]) -> String {
    ds.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>().join(", ")
}
