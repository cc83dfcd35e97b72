//! Probabilistic logic programs: parsing, grounding and exact inference by
//! possible-world enumeration.

mod ground;
mod infer;
mod parser;
mod syntax;

pub use ground::{ground, GroundGroup, GroundProgram, GroundRule, DEFAULT_WORLD_CAP};
pub use infer::{
    choice_for_value, entails, evidence_conditional, sample_world, success_gradient, success_probability,
    world_probability, FactProbabilities, LabelQuery, World, WorldDistribution,
};
pub use parser::{parse_evidence, parse_formula, parse_program};
pub use syntax::*;

#[derive(Debug, thiserror::Error)]
pub enum PlpError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("recursive definition involving {0}")]
    Recursion(String),
    #[error("variable {var} in clause for {clause} is not bound by a positive body atom or `is`")]
    UnboundVariable { var: String, clause: String },
    #[error("non-ground term in {0}")]
    NonGround(String),
    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(String),
    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),
    #[error("arithmetic error: {0}")]
    Arithmetic(String),
    #[error("domain of {0} is too large to ground")]
    Domain(String),
    #[error("unknown predicate {0}")]
    UnknownPredicate(String),
    #[error("{worlds} possible worlds exceed the cap of {cap}")]
    WorldCapExceeded { worlds: u128, cap: usize },
    #[error("evidence has probability zero")]
    InconsistentEvidence,
    #[error("program declares no query with exactly one variable")]
    NoLabelQuery,
    #[error("no choice in group {group} has value {value}")]
    UnknownChoiceValue { group: usize, value: String },
    #[error("label {0} is not in the program's label domain")]
    UnknownLabel(String),
}
