use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: matrix is not symmetric positive definite{}", fmt_time(*.time))]
    NotSpd { op: &'static str, time: Option<usize> },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),
}

fn fmt_time(time: Option<usize>) -> String {
    match time {
        Some(t) => format!(" (time step {t})"),
        None => String::new(),
    }
}

impl AdError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        AdError::Shape { op, detail: detail.into() }
    }

    /// Attaches a time index to numerical-domain errors that do not carry one yet.
    pub fn at_time(self, t: usize) -> Self {
        match self {
            AdError::NotSpd { op, time: None } => AdError::NotSpd { op, time: Some(t) },
            other => other,
        }
    }

    /// True for errors caused by the numbers rather than by the program structure.
    pub fn is_numerical(&self) -> bool {
        matches!(self, AdError::NotSpd { .. } | AdError::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, AdError>;
