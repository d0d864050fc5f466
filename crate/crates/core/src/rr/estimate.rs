use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rr::matrix::RandomizationMatrix;
use crate::scalar::{sum, Scalar};

/// Distributions must sum to one to this tolerance.
pub const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-9;

/// Where a distribution came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Empirical distribution of randomized reports.
    RawLambda,
    /// Unbiased estimate of the true distribution; may contain negatives.
    EstimatedPi,
    /// Estimate projected back onto the probability simplex.
    ProjectedPi,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::RawLambda => "raw-lambda",
            Stage::EstimatedPi => "estimated-pi",
            Stage::ProjectedPi => "projected-pi",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "raw-lambda" => Ok(Stage::RawLambda),
            "estimated-pi" => Ok(Stage::EstimatedPi),
            "projected-pi" => Ok(Stage::ProjectedPi),
            other => Err(Error::InvalidDistribution(format!("unknown stage {other:?}"))),
        }
    }
}

/// A vector over a (possibly joint) category domain, tagged with its stage.
///
/// Every stage sums to one; raw and projected stages additionally have all
/// entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionEstimate<T> {
    stage: Stage,
    values: Vec<T>,
}

impl<T: Scalar> DistributionEstimate<T> {
    pub fn new(stage: Stage, values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDistribution("empty domain".into()));
        }
        let total = sum(&values);
        if (total - T::one()).abs_val() > T::tolerance(DISTRIBUTION_SUM_TOLERANCE) {
            return Err(Error::InvalidDistribution(format!("{} sums to {:?}", stage.as_str(), total)));
        }
        if stage != Stage::EstimatedPi && values.iter().any(|&v| v < T::zero() || v > T::one()) {
            return Err(Error::InvalidDistribution(format!("{} has entries outside [0, 1]", stage.as_str())));
        }
        Ok(Self { stage, values })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn has_negative(&self) -> bool {
        self.values.iter().any(|&v| v < T::zero())
    }

    /// Text form: a two-line header, then `index<TAB>probability` per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("# stage\t{}\n# domain\t{}\n", self.stage.as_str(), self.values.len());
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i}\t{}\n", v.as_f64()));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parse { context: "rr: distribution file".into(), message: msg };
        let mut stage = None;
        let mut domain = None;
        let mut values = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if let Some(header) = line.strip_prefix('#') {
                let mut parts = header.trim().splitn(2, '\t');
                match (parts.next(), parts.next()) {
                    (Some("stage"), Some(s)) => stage = Some(s.parse::<Stage>()?),
                    (Some("domain"), Some(d)) => {
                        domain = Some(d.trim().parse::<usize>().map_err(|e| bad(format!("domain: {e}")))?)
                    }
                    _ => {}
                }
                continue;
            }
            let (idx, prob) = line.split_once('\t').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            let idx: usize = idx.trim().parse().map_err(|e| bad(format!("index: {e}")))?;
            if idx != values.len() {
                return Err(bad(format!("expected index {}, found {idx}", values.len())));
            }
            let p: f64 = prob.trim().parse().map_err(|e| bad(format!("probability: {e}")))?;
            values.push(T::from_f64(p).ok_or_else(|| bad(format!("unrepresentable value {p}")))?);
        }
        let stage = stage.ok_or_else(|| bad("missing stage header".into()))?;
        if domain != Some(values.len()) {
            return Err(bad(format!("domain header {:?} does not match {} rows", domain, values.len())));
        }
        Self::new(stage, values)
    }
}

impl<T: Scalar> fmt::Display for DistributionEstimate<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Sample proportions of `responses` over a domain of size `r`.
pub fn empirical_lambda<T: Scalar>(responses: &[u32], r: usize) -> Result<DistributionEstimate<T>> {
    if responses.is_empty() {
        return Err(Error::EmptyResponses);
    }
    let mut counts = vec![0usize; r];
    for &v in responses {
        let slot = counts.get_mut(v as usize).ok_or(Error::OutOfRange { index: 0, value: v as usize, size: r })?;
        *slot += 1;
    }
    proportions(&counts)
}

/// Normalizes integer counts to a raw-lambda distribution.
pub fn proportions<T: Scalar>(counts: &[usize]) -> Result<DistributionEstimate<T>> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::EmptyResponses);
    }
    let total = T::from_count(n);
    DistributionEstimate::new(Stage::RawLambda, counts.iter().map(|&c| T::from_count(c) / total).collect())
}

/// Unbiased estimate of the true distribution: the solution of
/// `P^T pi = lambda`.
pub fn estimate_pi<T: Scalar>(
    lambda: &DistributionEstimate<T>,
    matrix: &RandomizationMatrix<T>,
) -> Result<DistributionEstimate<T>> {
    let pi = matrix.solve_transpose(lambda.values())?;
    DistributionEstimate::new(Stage::EstimatedPi, pi)
}

/// Clamps negative entries to zero and rescales to unit mass. An estimate
/// that is already a distribution is returned unchanged, which makes the
/// projection idempotent in floating point too.
pub fn project_to_simplex<T: Scalar>(estimate: &DistributionEstimate<T>) -> Result<DistributionEstimate<T>> {
    if !estimate.has_negative() && estimate.values().iter().all(|&v| v <= T::one()) {
        return DistributionEstimate::new(Stage::ProjectedPi, estimate.values().to_vec());
    }
    let clamped: Vec<T> = estimate.values().iter().map(|&v| v.max_val(T::zero())).collect();
    let total = sum(&clamped);
    if total <= T::zero() {
        return Err(Error::NoPositiveMass);
    }
    DistributionEstimate::new(Stage::ProjectedPi, clamped.into_iter().map(|v| v / total).collect())
}
