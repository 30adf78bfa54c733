//! Reverse-mode automatic differentiation over dense tensors.
//!
//! The op set is deliberately small: exactly what the recurrent cell, its
//! heads and the training losses need. Shapes must match exactly; there is no
//! broadcasting. [`Tape::gated_edge`] is the one unusual primitive: the
//! forward pass is the identity, while the backward pass either forwards the
//! gradient or drops it, depending on a gate fixed before the forward pass.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, rel_error, GradCheckConfig, GradCheckReport, ParamCheck};
pub use tape::{AutodiffError, Gate, Result, Tape, Var};
