//! Tangent sensitivity of feedforward ReLU networks and the trajectory
//! bookkeeping needed to assemble data-estimated PAC-style generalization
//! bounds around it.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`network`] defines small dense ReLU MLPs with activation-pattern
//!    capture and bit-exact checkpointing; [`tensor`] supplies the dense
//!    arithmetic and the seeded random stream everything uses.
//! 2. [`grad`] computes exact reverse-mode gradients plus the per-layer
//!    backward vectors and region Jacobians they decompose into.
//! 3. [`sensitivity`] turns those pieces into the mixed second derivative
//!    `S(theta, x) = d(grad_theta f)/dx`, its Frobenius norm (exact,
//!    layerwise closed form, or randomized probes), dataset averages, and a
//!    Gaussian input-perturbation estimate of the same quantity.
//! 4. [`training`] runs (full-batch) gradient descent, SGD, or Adam while
//!    recording the trajectory quantities the bound consumes: learning-rate
//!    weighted loss-derivative accumulators, distances from the
//!    initialization, running sensitivity suprema, and first-order Taylor
//!    remainders.
//! 5. [`bound`] estimates the remaining constants from data, Monte-Carlo
//!    estimates Rademacher complexities, and assembles the final
//!    generalization-gap bound report.
//! 6. [`data`] loads MNIST IDX and CIFAR-10 binary files, generates
//!    synthetic two-cluster tasks, and handles labeling, normalization, and
//!    subsampling.

pub mod bound;
pub mod data;
pub mod error;
pub mod grad;
pub mod network;
pub mod sensitivity;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
