//! Training-free generative sampling with moment-matched, score-smoothed
//! overdamped Langevin dynamics (MM-SOLD).
//!
//! The crate bundles the pieces needed to run and evaluate the sampler:
//!
//! - [`numerics`]: dense kernels (Cholesky, Jacobi eigensolver, QR, Lyapunov).
//! - [`gmm`]: the isotropic mixture over training points and its smoothed score.
//! - [`nn_score`]: the local nearest-neighbour score estimator.
//! - [`manifold`]: whitening and the centered scaled Stiefel constraint set.
//! - [`sampler`]: the constrained Langevin loop.
//! - [`tilting`]: exponential-tilting parameters, energies and classification.
//! - [`baselines`]: σ-CFDM and kinetic Langevin (BAOAB).
//! - [`metrics`]: SW2, KID, Recall and DupRate.
//! - [`datasets`]: 2D generators, CSV IO and partial whitening.

pub mod baselines;
pub mod datasets;
pub mod error;
pub mod gmm;
pub mod manifold;
pub mod metrics;
pub mod nn_score;
pub mod numerics;
pub mod rng;
pub mod sampler;
pub mod tilting;

pub use error::{Error, Result};
pub use gmm::{SmoothingConfig, TrainingSet};
pub use manifold::{ManifoldPoint, WhiteningMap};
pub use numerics::Matrix;
pub use sampler::{SamplerConfig, Scheme, ScoreMode};
pub use tilting::TiltingParams;
