//! Small exact MILP toolkit: a sparse model builder, a dense bounded-variable
//! simplex (primal and dual) and a deterministic best-first branch-and-bound.
//!
//! Sized for programs with a few thousand columns and a few hundred rows.

pub mod branch;
pub mod cuts;
pub mod lp_format;
pub mod model;
pub mod simplex;

pub use branch::{solve_milp, Budget, MilpSolution, MilpStatus};
pub use lp_format::write_lp;
pub use model::{Model, Row, RowId, Sense, VarId, Variable};
pub use simplex::{solve_lp, LpOptions, LpSolution, LpStatus};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MilpError {
    #[error("variable {var} has invalid bounds [{lower}, {upper}]")]
    InvalidBounds { var: usize, lower: f64, upper: f64 },
    #[error("row {row} references unknown variable {var}")]
    UnknownVariable { row: String, var: usize },
    #[error("non-finite data: {0}")]
    NonFinite(String),
    #[error("basis matrix is numerically singular")]
    SingularBasis,
    #[error("LP relaxation is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
}
