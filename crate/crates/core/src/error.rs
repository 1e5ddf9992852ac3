use std::fmt;

use thiserror::Error;

/// A single violated configuration invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub value: String,
    pub message: String,
}

impl Violation {
    pub(crate) fn new(field: impl Into<String>, value: impl fmt::Debug, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            value: format!("{value:?}"),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}: {}", self.field, self.value, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<Violation>),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
