//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of a forward pass (define-by-run) and
//! replays it in reverse to populate gradients. The tape is rebuilt each
//! training iteration; [`Parameter`]s live outside the tape and are bound to
//! it by name at the start of a pass. Everything is `f64`.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, Parameter};
pub use gradcheck::{grad_check, grad_check_many};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
