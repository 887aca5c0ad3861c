//! Bayesian network autocorrelation models in which each actor's
//! susceptibility to social influence is a linear function of actor
//! covariates and local network features.
//!
//! The crate covers the Durbin, network effects, network disturbances and
//! network moving-average models, plus a moving-average model for egocentric
//! samples. The Durbin model is fit by a closed-form alternating MAP scheme
//! with an explicit Laplace covariance ([`durbin`]); the correlated-error
//! models integrate out `(beta, sigma2)` analytically, maximize the marginal
//! posterior of the susceptibility coefficients, and sample hierarchically
//! from the resulting Laplace approximation ([`inference`]).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod durbin;
pub mod ego;
pub mod error;
pub mod graph;
pub mod inference;
mod linalg;
pub mod model;
pub mod optim;
pub mod report;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use graph::{LocalFeatures, Network};
pub use model::{AssembledModel, DesignNames, DesignSet, ModelSpec, ParameterState, Priors, Problem, Variant};
