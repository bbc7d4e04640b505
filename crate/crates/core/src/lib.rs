//! Sampling toolkit for Bayesian sparse regression with continuous Gaussian
//! spike-and-slab priors under the sparsified likelihood.

pub mod diagnostics;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod linalg;
pub mod logistic;
pub mod math;
pub mod model;
pub mod polya_gamma;
pub mod random_design;
pub mod rng;
pub mod sloc;
pub mod statgen;

pub use error::{Error, Result};
pub use model::{Dataset, JointState, ModelIndicator, PosteriorTable, Prior, Truth};
