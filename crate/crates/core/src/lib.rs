//! Constrained-minimization multigrid for lowest-order mixed discretizations
//! of Poisson and Darcy problems on triangulations of the unit square.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod cr;
pub mod error;
pub mod fem;
pub mod hierarchy;
pub mod linalg;
pub mod mesh;
pub mod mg;
pub mod problem;
pub mod theory;

pub use error::{Error, Result};
