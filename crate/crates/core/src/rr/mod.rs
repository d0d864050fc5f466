//! Randomized response: randomization matrices, sampling, the unbiased
//! estimator, projection onto the simplex and privacy accounting.

mod estimate;
mod matrix;
mod privacy;

pub use estimate::{
    empirical_lambda, estimate_pi, project_to_simplex, proportions, DistributionEstimate, Stage,
    DISTRIBUTION_SUM_TOLERANCE,
};
pub use matrix::{randomize, RandomizationMatrix, MAX_CONDITION, ROW_SUM_TOLERANCE};
pub use privacy::{epsilon_of, keep_probability_for_epsilon, PrivacyBudget};
