//! Numerical laboratory for the weighted linear parabolic equation
//!
//! ```text
//! a x_n^p u_t - D_j(a_ij D_i u + d_j u) + b_i D_i u + c x_n^p u + c_0 u = x_n^p f + f_0 - D_i f_i
//! ```
//!
//! on half-cylinders `B_1^+ x (-1, 0]`, degenerate (`p > 0`) or singular
//! (`-1 < p < 0`) on the flat face `{x_n = 0}`.

pub mod error;
pub mod field;
pub mod fmt;
pub mod frozen;
pub mod grid;
pub mod ineq;
pub mod linalg;
pub mod problem;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
