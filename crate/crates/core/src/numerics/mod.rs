//! Dense tensors, reverse-mode autodiff and the Adam optimiser.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod params;
mod real;
mod rng;
mod tape;
mod tensor;

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use gradcheck::{check_gradients, GradCheck, ParamCheck, NORM_FLOOR};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use rng::SeedRng;
pub use tape::{Gradients, Mask, Tape, Var};
pub use tensor::Tensor;
