//! Multi-dimensional randomized response.
//!
//! Respondents randomize their own records before release. From the
//! randomized data this crate estimates the true distribution of each
//! attribute or cluster of attributes, groups dependent attributes so they can
//! be randomized jointly at the same privacy cost, and reweights randomized
//! records so that joint queries recover some of the dependence lost to
//! independent randomization.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix `f64`, and
//! [`ExactMatrix`] gives rational arithmetic for exact checks.

pub mod adjustment;
pub mod clustering;
pub mod dataset;
pub mod dependence;
pub mod error;
pub mod error_model;
pub mod mpc;
pub mod pipeline;
pub mod rng;
pub mod rr;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Real, Scalar};

/// Exact rational scalar.
pub type Rational = num_rational::Rational64;
pub type Matrix = rr::RandomizationMatrix<f64>;
pub type ExactMatrix = rr::RandomizationMatrix<Rational>;
pub type Distribution = rr::DistributionEstimate<f64>;
pub type ExactDistribution = rr::DistributionEstimate<Rational>;
pub type Weighted = adjustment::WeightedDataset<f64>;
pub type Budget = rr::PrivacyBudget<f64>;
pub type Bound = error_model::ErrorBound<f64>;
