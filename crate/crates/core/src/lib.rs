//! Gradient-free training of small convolutional image classifiers.
//!
//! A parent weight vector spawns antithetic pairs of Gaussian-perturbed
//! children each generation; children are scored by how many training
//! images they classify correctly, the scores are converted to rank-based
//! shaped returns, and the parent moves along the return-weighted
//! perturbation directions. No gradients are computed anywhere.
//!
//! Modules, bottom up: [`tensor`] (forward kernels), [`model`] (architecture,
//! genome layout, initialization), [`fitness`] (classification reward),
//! [`executor`] (parallel child evaluation), [`evolution`] (the optimizer)
//! and [`data`] (image files, synthetic data, checkpoints).

pub mod data;
pub mod error;
pub mod evolution;
pub mod executor;
pub mod fitness;
pub mod model;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use evolution::{EsConfig, GenerationReport, PerturbationSet, ShapedReturns};
pub use fitness::{FitnessResult, LabeledDataset};
pub use model::{ArchitectureSpec, CnnModel, Genome};
pub use tensor::Tensor;
