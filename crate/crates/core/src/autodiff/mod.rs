//! Reverse-mode differentiation over a recorded tape, plus finite-difference
//! gradient checking.

mod check;
mod tape;

pub use check::{
    finite_diff, grad_check, grad_check_problem, relative_error, GradCheckReport, FD_STEP, NORMS,
};
pub use tape::{NodeId, NormKind, Tape};
