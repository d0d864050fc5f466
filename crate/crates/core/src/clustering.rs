//! Greedy clustering of attributes by pairwise dependence.
//!
//! Clusters are kept ordered by their smallest attribute, and every cluster's
//! attribute list is ascending; "cluster index" below refers to that order.

use std::fmt::Write as _;

use crate::dependence::DependenceMatrix;
use crate::error::{Error, Result};

/// Disjoint clusters covering attributes `0..m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPartition {
    clusters: Vec<Vec<usize>>,
    joint_sizes: Vec<u128>,
}

impl ClusterPartition {
    /// Validates that `clusters` partitions `0..sizes.len()` and canonicalizes the order.
    pub fn new(mut clusters: Vec<Vec<usize>>, sizes: &[usize]) -> Result<Self> {
        let mut seen = vec![false; sizes.len()];
        for cluster in &mut clusters {
            if cluster.is_empty() {
                return Err(Error::Clustering("empty cluster".into()));
            }
            cluster.sort_unstable();
            for &a in cluster.iter() {
                match seen.get_mut(a) {
                    Some(s) if !*s => *s = true,
                    Some(_) => return Err(Error::Clustering(format!("attribute {a} appears in two clusters"))),
                    None => return Err(Error::Clustering(format!("attribute {a} does not exist ({} attributes)", sizes.len()))),
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Clustering(format!("attribute {missing} is in no cluster")));
        }
        clusters.sort_unstable_by_key(|c| c[0]);
        let joint_sizes = clusters.iter().map(|c| joint_size(c, sizes)).collect();
        Ok(Self { clusters, joint_sizes })
    }

    /// Every attribute on its own.
    pub fn singletons(sizes: &[usize]) -> Self {
        Self {
            clusters: (0..sizes.len()).map(|a| vec![a]).collect(),
            joint_sizes: sizes.iter().map(|&s| s as u128).collect(),
        }
    }

    /// All attributes in one cluster.
    pub fn whole(sizes: &[usize]) -> Self {
        let all: Vec<usize> = (0..sizes.len()).collect();
        let size = joint_size(&all, sizes);
        Self { clusters: vec![all], joint_sizes: vec![size] }
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn joint_sizes(&self) -> &[u128] {
        &self.joint_sizes
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Index of the cluster containing attribute `a`.
    pub fn cluster_of(&self, a: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(&a))
    }

    /// Whether every non-singleton cluster has at most `tv` combinations.
    pub fn respects_cap(&self, tv: u128) -> bool {
        self.clusters.iter().zip(&self.joint_sizes).all(|(c, &s)| c.len() == 1 || s <= tv)
    }

    /// Whether every cluster of `self` lies inside some cluster of `coarser`.
    pub fn refines(&self, coarser: &ClusterPartition) -> bool {
        self.clusters.iter().all(|c| coarser.clusters.iter().any(|d| c.iter().all(|a| d.contains(a))))
    }

    /// One `cluster_k = name,name` line per cluster, `k` counting from 1.
    pub fn to_config(&self, names: &[String]) -> String {
        let mut out = String::new();
        for (k, cluster) in self.clusters.iter().enumerate() {
            let members: Vec<&str> = cluster.iter().map(|&a| names[a].as_str()).collect();
            let _ = writeln!(out, "cluster_{} = {}", k + 1, members.join(","));
        }
        out
    }

    pub fn parse_config(text: &str, names: &[String], sizes: &[usize]) -> Result<Self> {
        let bad = |message: String| Error::Parse { context: "clustering: partition file".into(), message };
        let mut clusters = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            if !key.trim().starts_with("cluster_") {
                return Err(bad(format!("unknown key {:?}", key.trim())));
            }
            let members = value
                .split(',')
                .map(|name| {
                    let name = name.trim();
                    names.iter().position(|n| n == name).ok_or_else(|| bad(format!("unknown attribute {name:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            clusters.push(members);
        }
        Self::new(clusters, sizes)
    }
}

fn joint_size(cluster: &[usize], sizes: &[usize]) -> u128 {
    cluster.iter().fold(1u128, |acc, &a| acc.saturating_mul(sizes[a] as u128))
}

/// Largest pairwise score between an attribute of `c1` and one of `c2`.
pub fn cluster_dependence(c1: &[usize], c2: &[usize], pairwise: &DependenceMatrix) -> f64 {
    c1.iter()
        .flat_map(|&a| c2.iter().map(move |&b| pairwise.get(a, b)))
        .fold(0.0, f64::max)
}

/// A pair of clusters `(i, j)`, `i < j`, with their dependence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ListEntry {
    pub first: usize,
    pub second: usize,
    pub score: f64,
}

/// All cluster pairs by descending dependence; equal scores by `(first, second)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DependenceList {
    entries: Vec<ListEntry>,
}

impl DependenceList {
    pub fn compute(clusters: &[Vec<usize>], pairwise: &DependenceMatrix) -> Self {
        let mut entries = Vec::with_capacity(clusters.len() * clusters.len().saturating_sub(1) / 2);
        for first in 0..clusters.len() {
            for second in first + 1..clusters.len() {
                let score = cluster_dependence(&clusters[first], &clusters[second], pairwise);
                entries.push(ListEntry { first, second, score });
            }
        }
        entries.sort_by(|x, y| y.score.total_cmp(&x.score).then((x.first, x.second).cmp(&(y.first, y.second))));
        Self { entries }
    }

    pub fn entries(&self) -> &[ListEntry] {
        &self.entries
    }
}

/// Starting from singletons, repeatedly merges the most dependent pair of
/// clusters whose merged joint size stays within `tv`, recomputing the list
/// after each merge. Pairs over the cap are skipped; the walk stops at the
/// first score below `td`.
pub fn cluster_attributes(pairwise: &DependenceMatrix, sizes: &[usize], tv: u128, td: f64) -> Result<ClusterPartition> {
    if tv < 1 {
        return Err(Error::Clustering("combination cap must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&td) {
        return Err(Error::Clustering(format!("dependence floor {td} not in [0, 1]")));
    }
    if pairwise.m() != sizes.len() {
        return Err(Error::DimensionMismatch { expected: sizes.len(), actual: pairwise.m() });
    }
    let mut partition = ClusterPartition::singletons(sizes);
    loop {
        let list = DependenceList::compute(&partition.clusters, pairwise);
        let chosen = list
            .entries
            .iter()
            .take_while(|e| e.score >= td)
            .find(|e| partition.joint_sizes[e.first].saturating_mul(partition.joint_sizes[e.second]) <= tv);
        let Some(&ListEntry { first, second, .. }) = chosen else {
            return Ok(partition);
        };
        let absorbed = partition.clusters.remove(second);
        let absorbed_size = partition.joint_sizes.remove(second);
        partition.clusters[first].extend(absorbed);
        partition.clusters[first].sort_unstable();
        partition.joint_sizes[first] *= absorbed_size;
    }
}
