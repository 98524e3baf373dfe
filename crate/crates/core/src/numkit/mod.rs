//! Dense tensors, reverse-mode differentiation, Adam and seeded random streams.

mod adam;
mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheck, REL_ERROR_FLOOR};
pub use rng::{tag_hash, Rng};
pub use tape::{log_softmax_at, softmax, Gradients, ParamId, Tape, Var};
pub use tensor::Tensor;
