//! Dense neural-network kernel: matrices, the ReLU feed-forward block,
//! softmax cross-entropy, Adam, a finite-difference gradient oracle and
//! seeded random streams.

pub mod adam;
pub mod ffn;
pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod params;
pub mod rng;

pub use adam::{adam_step, AdamState};
pub use ffn::{ffn_backward, ffn_forward, FfnCache, FfnParams};
pub use gradcheck::{finite_difference_check, gradient_error};
pub use loss::{softmax, softmax_cross_entropy};
pub use matrix::Matrix;
pub use params::Parameters;
pub use rng::{mix_seed, RngStream};
