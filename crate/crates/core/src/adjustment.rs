//! Reweighting of a randomized data set so that the weighted marginal of
//! every attribute (or attribute cluster) matches its estimated true
//! distribution. Only the randomized records and the estimates are read.

use std::collections::HashMap;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::Rng;

use crate::dataset::{Dataset, JointDomain};
use crate::error::{Error, Result};
use crate::rr::{DistributionEstimate, Stage};
use crate::scalar::{sum, Scalar};

/// Randomized records with one non-negative weight each.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDataset<T> {
    records: Dataset,
    weights: Vec<T>,
}

impl<T: Scalar> WeightedDataset<T> {
    /// Every record weighted `1 / n`.
    pub fn uniform(records: Dataset) -> Self {
        let w = T::one() / T::from_count(records.n());
        let weights = vec![w; records.n()];
        Self { records, weights }
    }

    pub fn new(records: Dataset, weights: Vec<T>) -> Result<Self> {
        if weights.len() != records.n() {
            return Err(Error::DimensionMismatch { expected: records.n(), actual: weights.len() });
        }
        if weights.iter().any(|&w| !(w >= T::zero())) {
            return Err(Error::Adjustment("weights must be non-negative".into()));
        }
        Ok(Self { records, weights })
    }

    pub fn records(&self) -> &Dataset {
        &self.records
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn total_weight(&self) -> T {
        sum(&self.weights)
    }

    /// Summed weight per category of `domain`.
    pub fn weighted_marginal(&self, domain: &JointDomain) -> Vec<T> {
        marginal(&self.records.joint_codes(domain), &self.weights, domain.size())
    }

    /// The records as CSV with a trailing `weight` column.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let weights: Vec<f64> = self.weights.iter().map(|w| w.as_f64()).collect();
        self.records.write_csv(out, Some(&weights), comment)
    }

    /// `size` records drawn with replacement, proportionally to weight.
    pub fn synthesize<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Dataset> {
        let weights: Vec<f64> = self.weights.iter().map(|w| w.as_f64()).collect();
        let index = WeightedIndex::new(&weights).map_err(|e| Error::Adjustment(format!("cannot sample by weight: {e}")))?;
        let picks: Vec<usize> = (0..size).map(|_| index.sample(rng)).collect();
        let columns = (0..self.records.m())
            .map(|a| {
                let column = self.records.column(a);
                picks.iter().map(|&i| column[i]).collect()
            })
            .collect();
        self.records.with_columns(columns)
    }
}

fn marginal<T: Scalar>(codes: &[usize], weights: &[T], size: usize) -> Vec<T> {
    let mut s = vec![T::zero(); size];
    for (&c, &w) in codes.iter().zip(weights) {
        s[c] = s[c] + w;
    }
    s
}

/// Scales weights so that the weighted marginal over `codes` equals `target`.
///
/// Target mass on categories that no weighted record carries cannot be placed;
/// the remaining target is renormalized and the unplaced mass returned.
fn reweight<T: Scalar>(codes: &[usize], weights: &mut [T], target: &[T], unit: usize) -> Result<T> {
    let s = marginal(codes, weights, target.len());
    let diverted = s
        .iter()
        .zip(target)
        .filter(|(&sk, &tk)| sk <= T::zero() && tk > T::zero())
        .fold(T::zero(), |acc, (_, &tk)| acc + tk);
    let placed = T::one() - diverted;
    if placed <= T::zero() {
        return Err(Error::IrreconcilableSupport { unit });
    }
    let factors: Vec<T> = s
        .iter()
        .zip(target)
        .map(|(&sk, &tk)| if sk > T::zero() { tk / (sk * placed) } else { T::zero() })
        .collect();
    for (w, &c) in weights.iter_mut().zip(codes) {
        *w = *w * factors[c];
    }
    Ok(diverted)
}

fn check_target<T: Scalar>(domain: &JointDomain, target: &DistributionEstimate<T>) -> Result<()> {
    if target.len() != domain.size() {
        return Err(Error::DimensionMismatch { expected: domain.size(), actual: target.len() });
    }
    if target.has_negative() {
        return Err(Error::Adjustment("target has negative entries; project it first".into()));
    }
    Ok(())
}

/// One adjustment of `wd` towards `target` on the attribute or cluster
/// `domain`. Returns the target mass that could not be placed.
pub fn adjust_weights<T: Scalar>(wd: &mut WeightedDataset<T>, domain: &JointDomain, target: &DistributionEstimate<T>) -> Result<T> {
    check_target(domain, target)?;
    let codes = wd.records.joint_codes(domain);
    reweight(&codes, &mut wd.weights, target.values(), domain.attributes()[0])
}

/// Termination: stop once no record's weight moves by `max_weight_delta` or
/// more over a full sweep, or after `max_iters` sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    pub max_weight_delta: f64,
    pub max_iters: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Self { max_weight_delta: 1e-9, max_iters: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentOutcome<T> {
    pub weighted: WeightedDataset<T>,
    /// Sweeps performed.
    pub iterations: usize,
    pub converged: bool,
    /// Largest L1 gap between a weighted marginal and its (renormalized) target.
    pub residual: f64,
    /// Unplaceable target mass per unit in the final sweep.
    pub diverted: Vec<f64>,
}

/// Iterates [`adjust_weights`] over every unit, starting from uniform weights.
///
/// `targets` pairs each attribute or cluster with its projected estimate; the
/// units must partition the attributes of `y`.
pub fn rr_adjust<T: Scalar>(
    y: &Dataset,
    targets: &[(JointDomain, DistributionEstimate<T>)],
    convergence: Convergence,
) -> Result<AdjustmentOutcome<T>> {
    let mut covered = vec![false; y.m()];
    for (domain, target) in targets {
        check_target(domain, target)?;
        for &a in domain.attributes() {
            match covered.get_mut(a) {
                Some(c) if !*c => *c = true,
                _ => return Err(Error::Adjustment(format!("attribute {a} is missing, duplicated or out of range"))),
            }
            if domain.radices()[domain.attributes().iter().position(|&x| x == a).unwrap()] != y.attribute(a).size() {
                return Err(Error::Adjustment(format!("unit domain disagrees with attribute {a}")));
            }
        }
    }
    if let Some(a) = covered.iter().position(|c| !c) {
        return Err(Error::Adjustment(format!("attribute {a} has no target")));
    }
    if convergence.max_iters == 0 {
        return Err(Error::Adjustment("need at least one iteration".into()));
    }

    // Identical records always carry identical weights, so sweep over groups.
    let mut group_of = Vec::with_capacity(y.n());
    let mut first_row = Vec::new();
    let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
    for i in 0..y.n() {
        let row = y.row(i);
        let next = first_row.len();
        let g = *index.entry(row).or_insert(next);
        if g == next {
            first_row.push(i);
        }
        group_of.push(g);
    }
    let groups = first_row.len();
    let mut multiplicity = vec![0usize; groups];
    for &g in &group_of {
        multiplicity[g] += 1;
    }
    let unit_codes: Vec<Vec<usize>> = targets
        .iter()
        .map(|(domain, _)| {
            let codes = y.joint_codes(domain);
            first_row.iter().map(|&i| codes[i]).collect()
        })
        .collect();
    let inverse_n = T::one() / T::from_count(y.n());
    let mut group_weights: Vec<T> = multiplicity.iter().map(|&c| T::from_count(c) * inverse_n).collect();
    let tolerance = T::lit(convergence.max_weight_delta);
    let mut iterations = 0;
    let mut converged = false;
    let mut diverted = vec![0.0; targets.len()];
    while iterations < convergence.max_iters {
        let before = group_weights.clone();
        for (u, ((domain, target), codes)) in targets.iter().zip(&unit_codes).enumerate() {
            diverted[u] = reweight(codes, &mut group_weights, target.values(), domain.attributes()[0])?.as_f64();
        }
        iterations += 1;
        let moved = group_weights
            .iter()
            .zip(&before)
            .zip(&multiplicity)
            .any(|((&after, &prior), &c)| (after - prior).abs_val() >= tolerance * T::from_count(c));
        if !moved {
            converged = true;
            break;
        }
    }

    let mut residual: f64 = 0.0;
    for (u, ((domain, target), codes)) in targets.iter().zip(&unit_codes).enumerate() {
        let s = marginal(codes, &group_weights, domain.size());
        let placed = 1.0 - diverted[u];
        let gap: f64 = s
            .iter()
            .zip(target.values())
            .map(|(&sk, &tk)| {
                let effective = if sk > T::zero() { tk.as_f64() / placed } else { 0.0 };
                (sk.as_f64() - effective).abs()
            })
            .sum();
        residual = residual.max(gap);
    }
    let weights = group_of
        .iter()
        .map(|&g| group_weights[g] / T::from_count(multiplicity[g]))
        .collect();
    Ok(AdjustmentOutcome {
        weighted: WeightedDataset::new(y.clone(), weights)?,
        iterations,
        converged,
        residual,
        diverted,
    })
}

/// A projected estimate, as required by [`rr_adjust`].
pub fn target<T: Scalar>(values: Vec<T>) -> Result<DistributionEstimate<T>> {
    DistributionEstimate::new(Stage::ProjectedPi, values)
}
