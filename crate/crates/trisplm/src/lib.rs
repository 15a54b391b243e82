//! Partially linear models for spatial data over complex 2-D domains.
//!
//! The response is modeled as `Y = Z'beta + g(X) + eps`, with `g` a bivariate
//! penalized spline over a triangulation of the domain. The smoothness
//! constraints across triangle edges are eliminated with a QR null-space
//! basis, turning the constrained fit into an ordinary penalized regression;
//! the roughness penalty integrates squared second derivatives triangle by
//! triangle. The crate covers mesh handling, the Bernstein basis, constraint
//! and penalty assembly, the estimator with GCV smoothing-parameter
//! selection and coefficient inference, plus the simulation and housing-data
//! benchmarks.

pub mod basis;
pub mod constraints;
pub mod housing;
pub mod linalg;
pub mod matern;
pub mod mesh;
pub mod penalty;
pub mod plm;
pub mod sim;
