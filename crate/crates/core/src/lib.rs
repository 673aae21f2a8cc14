//! Latent-node graph message passing for non-local feature augmentation.
//!
//! A set of `N` feature vectors exchanges information through `d ≪ N` latent
//! nodes: features are projected onto the latent nodes, mixed by a small
//! latent-to-latent matrix and scattered back. This is equivalent to a
//! fully-connected graph layer whose affinity is the rank-`d` product
//! `Ψ F Ψᵀ`, at `O(N c d)` cost instead of `O(N² c)`.
//!
//! Modules:
//! * [`tensor`]: row-major matrices over any [`Scalar`].
//! * [`affinity`]: dense and low-rank affinity constructions.
//! * [`layer`]: the latent layer, its matrix-form reference and cost model.
//! * [`dense`]: the fully-connected non-local block.
//! * [`grad`]: reverse-mode gradients and finite-difference checks.
//! * [`io`]: weight and dataset files.
//! * [`tasks`]: synthetic long-range tasks and a training loop.

pub mod affinity;
pub mod dense;
pub mod error;
pub mod grad;
pub mod io;
pub mod layer;
pub mod rng;
pub mod scalar;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use tensor::{Activation, Matrix};

/// Node features, one row per node.
pub type FeatureSet<T> = Matrix<T>;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type LatentGnn64 = layer::LatentGnnParams<f64>;
pub type LatentGnn32 = layer::LatentGnnParams<f32>;
pub type DenseNonLocal64 = dense::DenseNonLocalParams<f64>;
pub type DenseNonLocal32 = dense::DenseNonLocalParams<f32>;
pub type GradStore64 = grad::GradStore<f64>;
