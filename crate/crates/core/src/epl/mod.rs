//! The event processing language: statement parser and runtime engine.
//!
//! The supported subset is described in `docs/epl-subset.md`.

pub mod ast;
mod engine;
mod lexer;
mod parser;

use std::fmt;

pub use ast::*;
pub use engine::{ComplexEvent, DeployError, DeploymentId, Engine, EngineError};
pub use parser::parse_statement;

/// Syntax error with a 1-based source position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: u32,
    pub column: u32,
    /// Token classes that would have been accepted here; empty when the
    /// input was recognized but is not supported.
    pub expected: Vec<String>,
    pub found: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: ", self.line, self.column)?;
        match self.expected.as_slice() {
            [] => f.write_str(&self.found),
            [one] => write!(f, "expected {one}, found {}", self.found),
            many => write!(f, "expected one of {}, found {}", many.join(", "), self.found),
        }
    }
}

impl std::error::Error for ParseError {}

/// Either half of turning statement text into a deployment.
#[derive(Debug, thiserror::Error)]
pub enum EplError {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Deploy(#[from] DeployError),
}
