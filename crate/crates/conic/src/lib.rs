//! Dense second-order cone programming.
//!
//! Programs are stated as `min f^T z` subject to constraints
//! `||A_j z + b_j|| <= c_j^T z + d_j`; see [`solve_cone_program`].

mod cone;
mod dump;
mod program;
mod solver;

pub use dump::write_triplets;
pub use program::{quadratic_epigraph, ConeProgram, QuadraticTerms, SocConstraint};
pub use solver::{solve_cone_program, ConeSolution, SolveStatus, SolverSettings};

#[derive(Debug, thiserror::Error)]
pub enum ConicError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("program has no variables")]
    Empty,
    #[error("non-finite data in {0}")]
    NonFinite(String),
    #[error("quadratic term is not convex: {0}")]
    NotConvex(String),
}
