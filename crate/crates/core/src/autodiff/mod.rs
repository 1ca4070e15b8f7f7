//! Reverse-mode differentiation: a recording tape over the tensor operation
//! set plus the finite-difference oracle used to verify it.

pub mod finite_diff;
pub mod gradcheck;
pub mod tape;

pub use finite_diff::finite_diff;
pub use gradcheck::{GradReport, CHECK_STEP, CHECK_TOL};
pub use tape::{Gradients, NodeId, Tape};
