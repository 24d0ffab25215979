//! Solver emulation for nonlinear PDE and inverse problems.
//!
//! The pipeline: a reference Tikhonov-regularized Newton-Kantorovich solver
//! generates inverse Cholesky factors of the Gauss-Newton Hessian along its
//! own trajectories; a kernel-ridge model learns the map from the iterate
//! (or the operator coefficients) to those factors; the online iteration
//! replaces the inner solve with two triangular mat-vecs against the
//! predicted factor, driven by a joint relaxation/learning-rate line
//! search. An analysis layer certifies the inexact-Newton convergence
//! theory numerically.

pub mod analysis;
pub mod bench;
pub mod calderon;
pub mod certify;
pub mod config;
pub mod error;
pub mod grid;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod nk;
pub mod ordering;
pub mod problems;
pub mod rng;
pub mod sampling;
pub mod stencil;
pub mod surrogate;

pub use error::{NkError, Result};
