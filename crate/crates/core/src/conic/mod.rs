//! Conic program model and solve contract.
//!
//! Programs are built from sparse affine expressions over named variable blocks and
//! handed to a pinned interior-point backend. Quadratic objective terms are lowered
//! to rotated second-order cones, so the backend sees a linear objective.

mod expr;
mod program;
mod solve;

pub use expr::{Affine, AffineMatrix};
pub use program::{spectral_norm_leq, ConicProgram, Constraint, ConstraintId, VarBlock, VarId};
pub use solve::{solve, solve_with, ConicSolution, QuadraticLowering, SolveOptions, SolveStatus, BACKEND, DEFAULT_TOL};
