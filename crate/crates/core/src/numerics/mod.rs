//! Dense tensors, reverse-mode gradients and a finite-difference verifier.

mod gradcheck;
pub mod ops;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, DEFAULT_EPS};
pub use ops::softmax;
pub use rng::{derive_seed, rng_for};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
