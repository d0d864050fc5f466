use std::fmt;
use std::ops::Add;

use crate::error::{Error, Result};
use crate::rr::matrix::RandomizationMatrix;
use crate::scalar::Real;

/// Differential-privacy level of a randomization mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrivacyBudget<T> {
    Bounded(T),
    /// Some column of the matrix mixes zero and non-zero entries.
    Unbounded,
}

impl<T: Real> PrivacyBudget<T> {
    pub fn epsilon(self) -> Option<T> {
        match self {
            PrivacyBudget::Bounded(e) => Some(e),
            PrivacyBudget::Unbounded => None,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, PrivacyBudget::Unbounded)
    }

    /// Sequential composition over several releases.
    pub fn sequential<I: IntoIterator<Item = Self>>(parts: I) -> Self {
        parts.into_iter().fold(PrivacyBudget::Bounded(T::zero()), |acc, b| acc + b)
    }
}

impl<T: Real> Add for PrivacyBudget<T> {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (PrivacyBudget::Bounded(a), PrivacyBudget::Bounded(b)) => PrivacyBudget::Bounded(a + b),
            _ => PrivacyBudget::Unbounded,
        }
    }
}

impl<T: Real + fmt::Display> fmt::Display for PrivacyBudget<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrivacyBudget::Bounded(e) => write!(f, "{e}"),
            PrivacyBudget::Unbounded => f.write_str("unbounded"),
        }
    }
}

/// `ln max_v (max_u p_uv / min_u p_uv)`, the smallest epsilon for which the
/// mechanism is epsilon-differentially private.
pub fn epsilon_of<T: Real>(matrix: &RandomizationMatrix<T>) -> PrivacyBudget<T> {
    let ratio = match matrix.uniform_parts() {
        Some((diag, off)) => {
            if diag == off {
                return PrivacyBudget::Bounded(T::zero());
            }
            let (lo, hi) = if diag < off { (diag, off) } else { (off, diag) };
            if lo <= T::zero() {
                return PrivacyBudget::Unbounded;
            }
            hi / lo
        }
        None => {
            let mut worst = T::one();
            for v in 0..matrix.dim() {
                let column = (0..matrix.dim()).map(|u| matrix.entry(u, v));
                let (lo, hi) = column.fold((T::infinity(), T::neg_infinity()), |(lo, hi), p| (lo.min(p), hi.max(p)));
                if lo <= T::zero() {
                    return PrivacyBudget::Unbounded;
                }
                worst = worst.max(hi / lo);
            }
            worst
        }
    };
    PrivacyBudget::Bounded(ratio.ln())
}

/// Keep probability whose keep-or-uniform matrix over `r` categories has
/// privacy level exactly `epsilon`.
pub fn keep_probability_for_epsilon<T: Real>(r: usize, epsilon: T) -> Result<T> {
    if r < 2 || !(epsilon > T::zero()) {
        return Err(Error::InvalidParameter(format!("need r >= 2 and epsilon > 0 (r = {r}, epsilon = {:?})", epsilon)));
    }
    if epsilon.is_infinite() {
        return Ok(T::one());
    }
    let grow = epsilon.exp_m1();
    Ok(grow / (grow + T::from_count(r)))
}
