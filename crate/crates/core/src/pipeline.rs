//! End-to-end protocols and their evaluation on count queries.
//!
//! A protocol randomizes every record through one matrix per *block* (a
//! single attribute, a cluster, or one joint domain), estimates each block's
//! true distribution and answers joint queries either by the product rule
//! across blocks or from adjusted record weights.
//!
//! Anything that touches the true data for scoring lives in [`evaluation`].

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::adjustment::{rr_adjust, Convergence};
use crate::clustering::{cluster_attributes, ClusterPartition};
use crate::dataset::{AttributeSchema, Dataset, JointDomain};
use crate::dependence::DependenceMatrix;
use crate::error::{Error, Result};
use crate::mpc::{self, Federation, MessageLog, PrivacyAccounting};
use crate::rng::{derive_seed, stream, tag};
use crate::rr::{
    empirical_lambda, epsilon_of, estimate_pi, keep_probability_for_epsilon, project_to_simplex, DistributionEstimate,
    PrivacyBudget, RandomizationMatrix,
};

/// Records randomized per derived stream; fixes the parallel decomposition.
const CHUNK: usize = 4096;

pub const DEFAULT_JOINT_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Independent,
    Joint,
    Clusters,
    /// Raw randomized records of the independent protocol, uncorrected.
    Randomized,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Independent => "independent",
            Method::Joint => "joint",
            Method::Clusters => "clusters",
            Method::Randomized => "randomized",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "independent" => Ok(Method::Independent),
            "joint" => Ok(Method::Joint),
            "clusters" => Ok(Method::Clusters),
            "randomized" => Ok(Method::Randomized),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Randomization strength of the per-attribute mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strength {
    /// Keep-or-uniform with this keep probability on every attribute.
    KeepProbability(f64),
    /// Keep-or-uniform calibrated to this epsilon on every attribute.
    Epsilon(f64),
}

impl Strength {
    pub fn validate(self) -> Result<()> {
        match self {
            Strength::KeepProbability(p) if p > 0.0 && p <= 1.0 => Ok(()),
            Strength::Epsilon(e) if e > 0.0 => Ok(()),
            other => Err(Error::Config(format!("invalid randomization strength {other:?}"))),
        }
    }

    /// Matrix for one attribute with `r` categories.
    pub fn attribute_matrix(self, r: usize) -> Result<RandomizationMatrix<f64>> {
        self.validate()?;
        if r == 1 {
            return RandomizationMatrix::identity(1);
        }
        let p = match self {
            Strength::KeepProbability(p) => p,
            Strength::Epsilon(e) => keep_probability_for_epsilon(r, e)?,
        };
        RandomizationMatrix::keep_or_uniform(r, p)
    }
}

impl fmt::Display for Strength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strength::KeepProbability(p) => write!(f, "{p}"),
            Strength::Epsilon(e) => write!(f, "eps:{e}"),
        }
    }
}

/// Where the clustering protocol gets attribute dependences from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DependenceSource {
    /// Exact dependences of the true data. Numerically identical to the
    /// secure-bivariate protocol, without its quadratic simulation cost.
    PlaintextOracle,
    Protocol(mpc::DependenceMethod),
}

impl DependenceSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DependenceSource::PlaintextOracle => "plaintext-oracle",
            DependenceSource::Protocol(m) => m.as_str(),
        }
    }
}

impl FromStr for DependenceSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use mpc::DependenceMethod::*;
        match s.trim() {
            "plaintext-oracle" => Ok(DependenceSource::PlaintextOracle),
            "rr-per-attribute" => Ok(DependenceSource::Protocol(RrPerAttribute)),
            "secure-bivariate" => Ok(DependenceSource::Protocol(SecureBivariate)),
            "rr-per-pair" => Ok(DependenceSource::Protocol(RrPerPair)),
            other => Err(Error::Config(format!("unknown dependence method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub method: Method,
    pub adjust: bool,
    pub strength: Strength,
    /// Cap on joint categories per cluster.
    pub tv: u128,
    /// Floor on dependence for merging clusters.
    pub td: f64,
    pub dependence: DependenceSource,
    pub seed: u64,
    pub convergence: Convergence,
    /// Largest joint domain a single block may have.
    pub joint_cap: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: Method::Independent,
            adjust: false,
            strength: Strength::KeepProbability(0.7),
            tv: 50,
            td: 0.1,
            dependence: DependenceSource::PlaintextOracle,
            seed: 0,
            convergence: Convergence::default(),
            joint_cap: DEFAULT_JOINT_CAP,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.strength.validate()?;
        if self.tv < 1 {
            return Err(Error::Config("T_v must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.td) {
            return Err(Error::Config(format!("T_d = {} not in [0, 1]", self.td)));
        }
        if self.joint_cap < 1 {
            return Err(Error::Config("joint cap must be at least 1".into()));
        }
        if !(self.convergence.max_weight_delta > 0.0) || self.convergence.max_iters == 0 {
            return Err(Error::Config("convergence needs a positive delta and at least one iteration".into()));
        }
        if self.adjust && self.method == Method::Randomized {
            return Err(Error::Config("the randomized baseline takes no adjustment".into()));
        }
        Ok(())
    }

    /// `method[+adjustment]`.
    pub fn label(&self) -> String {
        if self.adjust {
            format!("{}+adjustment", self.method.as_str())
        } else {
            self.method.as_str().to_string()
        }
    }
}

/// One jointly randomized group of attributes and its estimates.
#[derive(Debug, Clone)]
pub struct Block {
    pub domain: JointDomain,
    pub matrix: RandomizationMatrix<f64>,
    /// Privacy level of the block; infinite when the matrix has zero entries.
    pub epsilon: f64,
    pub lambda: DistributionEstimate<f64>,
    pub estimate: DistributionEstimate<f64>,
    pub projected: DistributionEstimate<f64>,
}

/// Output of a protocol run: the randomized records and per-block estimates.
#[derive(Debug, Clone)]
pub struct Release {
    pub randomized: Dataset,
    pub partition: ClusterPartition,
    pub blocks: Vec<Block>,
    pub warnings: Vec<String>,
    /// Cost of learning the dependences, when a protocol was used.
    pub dependence_privacy: Option<PrivacyAccounting>,
}

impl Release {
    /// Sequential privacy level of one released record.
    pub fn epsilon_total(&self) -> f64 {
        self.blocks.iter().map(|b| b.epsilon).sum()
    }
}

fn budget_value(b: PrivacyBudget<f64>) -> f64 {
    b.epsilon().unwrap_or(f64::INFINITY)
}

fn attribute_epsilons(data: &Dataset, strength: Strength) -> Result<Vec<f64>> {
    data.sizes()
        .iter()
        .map(|&r| Ok(if r < 2 { 0.0 } else { budget_value(epsilon_of(&strength.attribute_matrix(r)?)) }))
        .collect()
}

/// Matrix for a block: the attribute's own matrix for singletons, otherwise
/// the cluster matrix at the summed attribute budget.
fn block_matrix(data: &Dataset, attributes: &[usize], strength: Strength, eps: &[f64]) -> Result<(RandomizationMatrix<f64>, f64)> {
    let domain = JointDomain::of(data, attributes)?;
    if attributes.len() == 1 {
        let m = strength.attribute_matrix(domain.size())?;
        return Ok((m, eps[attributes[0]]));
    }
    let total: f64 = attributes.iter().map(|&a| eps[a]).sum();
    Ok((RandomizationMatrix::cluster_matrix(domain.size(), total)?, total))
}

/// Randomizes each block's joint codes and estimates its distribution.
fn release_blocks(
    data: &Dataset,
    partition: ClusterPartition,
    strength: Strength,
    cap: usize,
    seed: u64,
) -> Result<Release> {
    let eps = attribute_epsilons(data, strength)?;
    let mut columns = data.columns().to_vec();
    let mut blocks = Vec::with_capacity(partition.len());
    let mut warnings = Vec::new();
    for (cluster, &size) in partition.clusters().iter().zip(partition.joint_sizes()) {
        if size > cap as u128 {
            return Err(Error::JointTooLarge { size, cap: cap as u128 });
        }
        let domain = JointDomain::of(data, cluster)?;
        if cluster.len() > 1 && data.n() < domain.size() {
            warnings.push(format!(
                "block {:?} has {} joint categories but only {} records; estimates will be poor",
                cluster,
                domain.size(),
                data.n()
            ));
        }
        let (matrix, epsilon) = block_matrix(data, cluster, strength, &eps)?;
        let truth = data.joint_codes(&domain);
        let reported = randomize_codes(&truth, &matrix, seed, cluster[0]);
        write_codes(&mut columns, &domain, &reported);
        let reported32: Vec<u32> = reported.iter().map(|&c| c as u32).collect();
        blocks.push(estimate_block(domain, matrix, epsilon, &reported32)?);
    }
    Ok(Release {
        randomized: data.with_columns(columns)?,
        partition,
        blocks,
        warnings,
        dependence_privacy: None,
    })
}

fn estimate_block(domain: JointDomain, matrix: RandomizationMatrix<f64>, epsilon: f64, reported: &[u32]) -> Result<Block> {
    let lambda = empirical_lambda(reported, domain.size())?;
    let estimate = estimate_pi(&lambda, &matrix)?;
    let projected = project_to_simplex(&estimate)?;
    Ok(Block { domain, matrix, epsilon, lambda, estimate, projected })
}

/// Estimates each block of `partition` from records that were already
/// randomized with the matrices `strength` implies for that partition.
pub fn estimate_blocks(randomized: &Dataset, partition: &ClusterPartition, strength: Strength) -> Result<Vec<Block>> {
    strength.validate()?;
    if partition.joint_sizes().iter().any(|&s| s > DEFAULT_JOINT_CAP as u128) {
        let size = partition.joint_sizes().iter().copied().max().unwrap_or(0);
        return Err(Error::JointTooLarge { size, cap: DEFAULT_JOINT_CAP as u128 });
    }
    let eps = attribute_epsilons(randomized, strength)?;
    partition
        .clusters()
        .iter()
        .map(|cluster| {
            let domain = JointDomain::of(randomized, cluster)?;
            let (matrix, epsilon) = block_matrix(randomized, cluster, strength, &eps)?;
            let reported: Vec<u32> = randomized.joint_codes(&domain).into_iter().map(|c| c as u32).collect();
            estimate_block(domain, matrix, epsilon, &reported)
        })
        .collect()
}

fn randomize_codes(truth: &[usize], matrix: &RandomizationMatrix<f64>, seed: u64, block: usize) -> Vec<usize> {
    truth
        .par_chunks(CHUNK)
        .enumerate()
        .flat_map_iter(|(c, chunk)| {
            let mut rng = stream(seed, &[tag::RANDOMIZE, block as u64, c as u64]);
            chunk.iter().map(move |&u| matrix.sample(u, &mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

fn write_codes(columns: &mut [Vec<u32>], domain: &JointDomain, codes: &[usize]) {
    for (pos, (&attr, _)) in domain.attributes().iter().zip(domain.radices()).enumerate().rev() {
        let below: usize = domain.radices()[pos + 1..].iter().product();
        let radix = domain.radices()[pos];
        for (slot, &code) in columns[attr].iter_mut().zip(codes) {
            *slot = ((code / below) % radix) as u32;
        }
    }
}

/// Every attribute randomized on its own.
pub fn run_rr_independent(data: &Dataset, strength: Strength, seed: u64) -> Result<Release> {
    release_blocks(data, ClusterPartition::singletons(&data.sizes()), strength, usize::MAX, seed)
}

/// The chosen attributes randomized as one joint attribute. The returned
/// data set holds only those attributes, renumbered from zero.
pub fn run_rr_joint(data: &Dataset, attributes: &[usize], strength: Strength, cap: usize, seed: u64) -> Result<Release> {
    if attributes.is_empty() {
        return Err(Error::Config("joint randomization needs at least one attribute".into()));
    }
    let domain = JointDomain::of(data, attributes)?;
    let size = domain.radices().iter().fold(1u128, |a, &r| a.saturating_mul(r as u128));
    if size > cap as u128 {
        return Err(Error::JointTooLarge { size, cap: cap as u128 });
    }
    let schema: Vec<AttributeSchema> = attributes.iter().map(|&a| data.attribute(a).clone()).collect();
    let columns = attributes.iter().map(|&a| data.column(a).to_vec()).collect();
    let subset = Dataset::from_columns(schema, columns)?;
    let sizes = subset.sizes();
    release_blocks(&subset, ClusterPartition::whole(&sizes), strength, cap, seed)
}

/// Dependences for clustering, from the configured source.
pub fn dependences(data: &Dataset, config: &PipelineConfig) -> Result<(DependenceMatrix, Option<PrivacyAccounting>)> {
    let seed = derive_seed(config.seed, &[tag::DEPENDENCE]);
    match config.dependence {
        DependenceSource::PlaintextOracle => Ok((evaluation::plaintext_dependences(data)?, None)),
        DependenceSource::Protocol(method) => {
            let federation = Federation::from_dataset(data)?;
            let report = match method {
                mpc::DependenceMethod::RrPerAttribute => {
                    let keep = data
                        .sizes()
                        .iter()
                        .map(|&r| {
                            let m = config.strength.attribute_matrix(r.max(2))?;
                            Ok(m.entry(0, 0) - m.entry(0, 1))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    mpc::estimate_dependences_rr_per_attribute_with(&federation, &keep, seed, MessageLog::counting())?
                }
                mpc::DependenceMethod::SecureBivariate => {
                    mpc::estimate_dependences_secure_bivariate(&federation, seed, MessageLog::counting())?
                }
                mpc::DependenceMethod::RrPerPair => {
                    let eps = attribute_epsilons(data, config.strength)?;
                    let sizes = data.sizes();
                    let mut matrices = std::collections::BTreeMap::new();
                    for i in 0..data.m() {
                        for j in i + 1..data.m() {
                            let m = RandomizationMatrix::cluster_matrix(sizes[i] * sizes[j], eps[i] + eps[j])?;
                            matrices.insert((i, j), m);
                        }
                    }
                    mpc::estimate_dependences_rr_per_pair(&federation, &matrices, seed, MessageLog::counting())?
                }
            };
            Ok((report.matrix, Some(report.privacy)))
        }
    }
}

/// Clusters by dependence, then randomizes each cluster jointly at the
/// summed budget of its attributes.
pub fn run_rr_clusters(data: &Dataset, config: &PipelineConfig) -> Result<Release> {
    config.validate()?;
    let (matrix, privacy) = dependences(data, config)?;
    let partition = cluster_attributes(&matrix, &data.sizes(), config.tv, config.td)?;
    let mut release = release_blocks(data, partition, config.strength, config.joint_cap, config.seed)?;
    release.dependence_privacy = privacy;
    Ok(release)
}

/// Randomizes `data` as configured.
pub fn release(data: &Dataset, config: &PipelineConfig) -> Result<Release> {
    config.validate()?;
    match config.method {
        Method::Independent | Method::Randomized => run_rr_independent(data, config.strength, config.seed),
        Method::Joint => {
            let all: Vec<usize> = (0..data.m()).collect();
            run_rr_joint(data, &all, config.strength, config.joint_cap, config.seed)
        }
        Method::Clusters => run_rr_clusters(data, config),
    }
}

/// How a release answers joint questions.
#[derive(Debug, Clone)]
pub enum JointModel {
    /// Independent blocks; probabilities multiply across blocks.
    Product(Vec<(JointDomain, Vec<f64>)>),
    /// A weighted empirical distribution of randomized records.
    Weighted { records: Dataset, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentSummary {
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub diverted: Vec<f64>,
}

/// Builds the query model of `release` for `config`'s method.
pub fn model(release: &Release, config: &PipelineConfig) -> Result<(JointModel, Option<AdjustmentSummary>)> {
    if config.method == Method::Randomized {
        let n = release.randomized.n();
        return Ok((
            JointModel::Weighted { records: release.randomized.clone(), weights: vec![1.0 / n as f64; n] },
            None,
        ));
    }
    if config.adjust {
        let targets: Vec<_> = release.blocks.iter().map(|b| (b.domain.clone(), b.projected.clone())).collect();
        let out = rr_adjust(&release.randomized, &targets, config.convergence)?;
        let summary = AdjustmentSummary {
            iterations: out.iterations,
            converged: out.converged,
            residual: out.residual,
            diverted: out.diverted,
        };
        let weights = out.weighted.weights().to_vec();
        return Ok((JointModel::Weighted { records: release.randomized.clone(), weights }, Some(summary)));
    }
    let blocks = release.blocks.iter().map(|b| (b.domain.clone(), b.projected.values().to_vec())).collect();
    Ok((JointModel::Product(blocks), None))
}

/// Runs the configured protocol and builds its query model.
pub fn run(data: &Dataset, config: &PipelineConfig) -> Result<(Release, JointModel, Option<AdjustmentSummary>)> {
    let release = release(data, config)?;
    let (model, summary) = model(&release, config)?;
    Ok((release, model, summary))
}

/// A set `S` of value combinations over some attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct CountQuery {
    domain: JointDomain,
    members: Vec<bool>,
    size: usize,
    sigma: f64,
}

impl CountQuery {
    /// `combinations` are codes in `domain`; duplicates are ignored.
    pub fn new(domain: JointDomain, combinations: &[usize], sigma: f64) -> Result<Self> {
        let mut members = vec![false; domain.size()];
        for &c in combinations {
            *members
                .get_mut(c)
                .ok_or(Error::OutOfRange { index: 0, value: c, size: domain.size() })? = true;
        }
        let size = members.iter().filter(|&&m| m).count();
        Ok(Self { domain, members, size, sigma })
    }

    /// Every combination of `attributes`.
    pub fn full(data: &Dataset, attributes: &[usize]) -> Result<Self> {
        let domain = JointDomain::of(data, attributes)?;
        let all: Vec<usize> = (0..domain.size()).collect();
        Self::new(domain, &all, 1.0)
    }

    /// `k` distinct random attributes and about `sigma * total` of their
    /// combinations. Sizes at `sigma` and `1 - sigma` add up to `total`, and
    /// a coverage below one never selects the whole domain.
    pub fn random<R: Rng + ?Sized>(data: &Dataset, k: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        if k == 0 || k > data.m() {
            return Err(Error::Config(format!("query needs between 1 and {} attributes, got {k}", data.m())));
        }
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::Config(format!("coverage {sigma} not in (0, 1]")));
        }
        let mut attributes = index::sample(rng, data.m(), k).into_vec();
        attributes.sort_unstable();
        let domain = JointDomain::of(data, &attributes)?;
        let total = domain.size();
        let size = query_size(sigma, total);
        let picks = index::sample(rng, total, size).into_vec();
        Self::new(domain, &picks, sigma)
    }

    pub fn attributes(&self) -> &[usize] {
        self.domain.attributes()
    }

    pub fn domain(&self) -> &JointDomain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn contains(&self, code: usize) -> bool {
        self.members.get(code).copied().unwrap_or(false)
    }

    pub fn combinations(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().enumerate().filter(|(_, &m)| m).map(|(c, _)| c)
    }
}

/// Number of combinations a query of coverage `sigma` selects out of
/// `total`. Rounds the smaller side of the split, so complementary
/// coverages give complementary sizes.
pub fn query_size(sigma: f64, total: usize) -> usize {
    if sigma >= 1.0 || total < 2 {
        return total;
    }
    let exact = sigma * total as f64;
    let rest = total as f64 - exact;
    let size = if exact <= rest { exact.round() as usize } else { total - rest.round() as usize };
    size.clamp(1, total - 1)
}

/// True count, estimate and their errors for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResult {
    pub true_count: f64,
    pub estimate: f64,
    pub abs_error: f64,
    /// Undefined when the true count is zero.
    pub rel_error: Option<f64>,
}

impl QueryResult {
    pub fn new(true_count: f64, estimate: f64) -> Self {
        let abs_error = (estimate - true_count).abs();
        let rel_error = (true_count > 0.0).then(|| abs_error / true_count);
        Self { true_count, estimate, abs_error, rel_error }
    }
}

/// Probability that a record falls in `query` under `model`.
pub fn query_probability(query: &CountQuery, model: &JointModel) -> Result<f64> {
    if query.is_empty() {
        return Ok(0.0);
    }
    match model {
        JointModel::Weighted { records, weights } => {
            for &a in query.attributes() {
                if a >= records.m() {
                    return Err(Error::OutOfRange { index: 0, value: a, size: records.m() });
                }
            }
            let codes = records.joint_codes(query.domain());
            Ok(codes.iter().zip(weights).filter(|(&c, _)| query.contains(c)).map(|(_, &w)| w).sum())
        }
        JointModel::Product(blocks) => product_probability(query, blocks),
    }
}

fn product_probability(query: &CountQuery, blocks: &[(JointDomain, Vec<f64>)]) -> Result<f64> {
    let qattrs = query.attributes();
    let qradices = query.domain().radices();
    // For each block touching the query: positions of its query attributes
    // (in query order) and its distribution marginalized onto them.
    let mut factors: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    let mut covered = vec![false; qattrs.len()];
    for (domain, pi) in blocks {
        let mut positions = Vec::new();
        let mut within = Vec::new();
        for (qpos, a) in qattrs.iter().enumerate() {
            if let Some(bpos) = domain.attributes().iter().position(|x| x == a) {
                positions.push(qpos);
                within.push(bpos);
                covered[qpos] = true;
            }
        }
        if positions.is_empty() {
            continue;
        }
        let sub_radices: Vec<usize> = positions.iter().map(|&q| qradices[q]).collect();
        let mut marginal = vec![0.0; sub_radices.iter().product()];
        for (code, &p) in pi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let tuple = domain.decode(code)?;
            let sub = within.iter().zip(&sub_radices).fold(0usize, |acc, (&b, &r)| acc * r + tuple[b] as usize);
            marginal[sub] += p;
        }
        factors.push((positions, marginal));
    }
    if let Some(q) = covered.iter().position(|c| !c) {
        return Err(Error::Config(format!("query attribute {} is not covered by the estimate", qattrs[q])));
    }
    let mut total = 0.0;
    for code in query.combinations() {
        let tuple = query.domain().decode(code)?;
        let mut p = 1.0;
        for (positions, marginal) in &factors {
            let sub = positions.iter().fold(0usize, |acc, &q| acc * qradices[q] + tuple[q] as usize);
            p *= marginal[sub];
        }
        total += p;
    }
    Ok(total)
}

/// `n` times the model probability of `query`.
pub fn estimate_count(query: &CountQuery, model: &JointModel, n: usize) -> Result<f64> {
    Ok(n as f64 * query_probability(query, model)?)
}

/// Access to the true data for scoring. Nothing outside evaluation code and
/// the plaintext dependence oracle should call into this module.
pub mod evaluation {
    use super::*;

    /// Number of true records in `query`.
    pub fn true_count(data: &Dataset, query: &CountQuery) -> f64 {
        data.joint_codes(query.domain()).iter().filter(|&&c| query.contains(c)).count() as f64
    }

    pub fn evaluate(data: &Dataset, query: &CountQuery, model: &JointModel) -> Result<QueryResult> {
        Ok(QueryResult::new(true_count(data, query), estimate_count(query, model, data.n())?))
    }

    /// Dependences computed on the true data.
    pub fn plaintext_dependences(data: &Dataset) -> Result<DependenceMatrix> {
        DependenceMatrix::of(data)
    }

    /// Joint counts of the true data per attribute subset, built once so that
    /// repeated queries cost `O(|S|)`.
    #[derive(Debug, Default)]
    pub struct TruthTables {
        tables: HashMap<Vec<usize>, Vec<u64>>,
    }

    impl TruthTables {
        /// Tables for every `k`-subset of attributes.
        pub fn build(data: &Dataset, k: usize) -> Result<Self> {
            let mut subsets = Vec::new();
            let mut current = Vec::new();
            subsets_of(data.m(), k, 0, &mut current, &mut subsets);
            let tables = subsets
                .into_par_iter()
                .map(|attrs| {
                    let domain = JointDomain::of(data, &attrs)?;
                    let mut counts = vec![0u64; domain.size()];
                    for c in data.joint_codes(&domain) {
                        counts[c] += 1;
                    }
                    Ok((attrs, counts))
                })
                .collect::<Result<HashMap<_, _>>>()?;
            Ok(Self { tables })
        }

        pub fn true_count(&self, query: &CountQuery) -> Option<f64> {
            let counts = self.tables.get(query.attributes())?;
            Some(query.combinations().map(|c| counts[c] as f64).sum())
        }
    }

    fn subsets_of(m: usize, k: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for a in start..m {
            current.push(a);
            subsets_of(m, k, a + 1, current, out);
            current.pop();
        }
    }
}

/// Median errors of one configuration at one coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub method: String,
    pub strength: Strength,
    pub tv: u128,
    pub td: f64,
    pub sigma: f64,
    pub runs: usize,
    pub median_abs: f64,
    /// Over runs with a non-zero true count; NaN if there were none.
    pub median_rel: f64,
    pub defined_rel: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}

/// `runs` repetitions of `config`, each re-randomizing the data and drawing
/// a fresh query per coverage; median errors per coverage.
pub fn run_experiment(data: &Dataset, config: &PipelineConfig, sigmas: &[f64], runs: usize) -> Result<Vec<ExperimentRow>> {
    run_comparison(data, std::slice::from_ref(config), sigmas, runs, 2, config.seed)
}

/// Like [`run_experiment`] for several configurations that share the query
/// drawn in each run. Configurations with the same mechanism also share
/// their randomized data, because streams derive from `(seed, run)` only.
pub fn run_comparison(
    data: &Dataset,
    configs: &[PipelineConfig],
    sigmas: &[f64],
    runs: usize,
    query_attributes: usize,
    seed: u64,
) -> Result<Vec<ExperimentRow>> {
    let samples = comparison_samples(data, configs, sigmas, runs, query_attributes, seed)?;
    Ok(summarize(configs, sigmas, &samples))
}

/// Median errors per configuration and coverage of [`comparison_samples`].
pub fn summarize(configs: &[PipelineConfig], sigmas: &[f64], samples: &[Vec<Vec<QueryResult>>]) -> Vec<ExperimentRow> {
    let runs = samples.len();
    let mut rows = Vec::with_capacity(configs.len() * sigmas.len());
    for (c, config) in configs.iter().enumerate() {
        for (s, &sigma) in sigmas.iter().enumerate() {
            let mut abs: Vec<f64> = samples.iter().map(|r| r[c][s].abs_error).collect();
            let mut rel: Vec<f64> = samples.iter().filter_map(|r| r[c][s].rel_error).collect();
            rows.push(ExperimentRow {
                method: config.label(),
                strength: config.strength,
                tv: config.tv,
                td: config.td,
                sigma,
                runs,
                median_abs: median(&mut abs),
                defined_rel: rel.len(),
                median_rel: median(&mut rel),
            });
        }
    }
    rows
}

/// Per-run query results behind [`run_comparison`], indexed
/// `[run][config][sigma]`.
pub fn comparison_samples(
    data: &Dataset,
    configs: &[PipelineConfig],
    sigmas: &[f64],
    runs: usize,
    query_attributes: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<QueryResult>>>> {
    if runs == 0 {
        return Err(Error::Config("need at least one run".into()));
    }
    for c in configs {
        c.validate()?;
    }
    let truth = evaluation::TruthTables::build(data, query_attributes)?;
    // A partition from the plaintext oracle does not change between runs.
    let fixed_partitions = configs
        .iter()
        .map(|c| match (c.method, c.dependence) {
            (Method::Clusters, DependenceSource::PlaintextOracle) => {
                let (matrix, _) = dependences(data, c)?;
                Ok(Some(cluster_attributes(&matrix, &data.sizes(), c.tv, c.td)?))
            }
            _ => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;

    let per_run = (0..runs)
        .into_par_iter()
        .map(|run| {
            let run_seed = derive_seed(seed, &[tag::RUN, run as u64]);
            let queries = sigmas
                .iter()
                .enumerate()
                .map(|(s, &sigma)| {
                    let mut rng = stream(run_seed, &[tag::QUERY, s as u64]);
                    let q = CountQuery::random(data, query_attributes, sigma, &mut rng)?;
                    let x = truth.true_count(&q).unwrap_or_else(|| evaluation::true_count(data, &q));
                    Ok((q, x))
                })
                .collect::<Result<Vec<_>>>()?;
            configs
                .iter()
                .zip(&fixed_partitions)
                .map(|(config, fixed)| {
                    let run_config = PipelineConfig { seed: run_seed, ..config.clone() };
                    let release = match fixed {
                        Some(p) => release_blocks(data, p.clone(), config.strength, config.joint_cap, run_seed)?,
                        None => release(data, &run_config)?,
                    };
                    let (model, _) = model(&release, &run_config)?;
                    queries
                        .iter()
                        .map(|(q, x)| Ok(QueryResult::new(*x, estimate_count(q, &model, data.n())?)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_run)
}

/// Result table with columns method, p, T_v, T_d, sigma, median_abs, median_rel.
pub fn rows_to_tsv(rows: &[ExperimentRow]) -> String {
    let mut out = String::from("method\tp\tT_v\tT_d\tsigma\tmedian_abs\tmedian_rel\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.method, r.strength, r.tv, r.td, r.sigma, r.median_abs, r.median_rel
        );
    }
    out
}
