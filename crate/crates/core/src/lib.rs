//! Gaussian random fields with Matérn covariance from a mixed-form
//! reaction–diffusion SPDE, coupled across a hierarchy of uniformly refined
//! Cartesian meshes, and their use in multilevel Monte Carlo estimation of
//! effective permeability for mixed Darcy flow.
//!
//! Module map:
//! * [`mesh`]: Cartesian meshes, embedding, refinement hierarchies;
//! * [`fem`]: face-element / piecewise-constant operators;
//! * [`linalg`]: CSR kernels, CG, MINRES, skyline Cholesky;
//! * [`rng`]: keyed normal streams;
//! * [`sampler`]: single-level, coupled and smoother SPDE sampling;
//! * [`kl`]: dense Karhunen–Loève reference sampler and covariance tools;
//! * [`darcy`]: mixed Darcy solver and effective permeability;
//! * [`mlmc`]: Monte Carlo and multilevel estimators.

pub mod darcy;
pub mod error;
pub mod fem;
pub mod kl;
pub mod linalg;
pub mod mesh;
pub mod mlmc;
pub mod rng;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
