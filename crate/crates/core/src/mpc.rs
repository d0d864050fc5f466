//! In-process simulation of the multi-party protocols used to learn
//! attribute dependences without a trusted curator.
//!
//! Each party holds one record. Messages that would cross the network are
//! appended to a [`MessageLog`], which is the audit surface for privacy
//! hygiene: no payload variant can carry a full record, and submissions whose
//! content depends on a pair of true values are logged without a sender.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{AttributeSchema, Dataset, JointDomain};
use crate::dependence::{ContingencyTable, DependenceMatrix, Measure};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::rr::{epsilon_of, estimate_pi, project_to_simplex, proportions, PrivacyBudget, RandomizationMatrix};

/// One respondent and their true record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Party {
    id: usize,
    record: Vec<u32>,
}

impl Party {
    pub fn new(id: usize, record: Vec<u32>) -> Self {
        Self { id, record }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Only protocol code running "at" the party reads this.
    fn value(&self, attribute: usize) -> u32 {
        self.record[attribute]
    }
}

/// The parties of a protocol together with the public schema.
#[derive(Debug, Clone)]
pub struct Federation {
    schema: Vec<AttributeSchema>,
    parties: Vec<Party>,
}

impl Federation {
    pub fn new(schema: Vec<AttributeSchema>, parties: Vec<Party>) -> Result<Self> {
        if parties.len() < 2 {
            return Err(Error::Protocol(format!("need at least 2 parties, got {}", parties.len())));
        }
        for p in &parties {
            if p.record.len() != schema.len() {
                return Err(Error::DimensionMismatch { expected: schema.len(), actual: p.record.len() });
            }
            if let Some((j, &v)) = p.record.iter().enumerate().find(|(j, &v)| v as usize >= schema[*j].size()) {
                return Err(Error::OutOfRange { index: j, value: v as usize, size: schema[j].size() });
            }
        }
        Ok(Self { schema, parties })
    }

    /// One party per record.
    pub fn from_dataset(dataset: &Dataset) -> Result<Self> {
        let parties = (0..dataset.n()).map(|i| Party::new(i, dataset.row(i))).collect();
        Self::new(dataset.schema().to_vec(), parties)
    }

    pub fn n(&self) -> usize {
        self.parties.len()
    }

    pub fn m(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[AttributeSchema] {
        &self.schema
    }

    pub fn parties(&self) -> &[Party] {
        &self.parties
    }

    fn names(&self) -> Vec<String> {
        self.schema.iter().map(|a| a.name().to_string()).collect()
    }

    fn sizes(&self) -> Vec<usize> {
        self.schema.iter().map(AttributeSchema::size).collect()
    }

    fn measure(&self, i: usize, j: usize) -> Measure {
        Measure::for_kinds(self.schema[i].kind(), self.schema[j].kind())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sender {
    Party(usize),
    Anonymous,
}

impl fmt::Display for Sender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sender::Party(id) => write!(f, "party-{id}"),
            Sender::Anonymous => f.write_str("anonymous"),
        }
    }
}

/// Identifies one secure-sum session: which attribute pair and which cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionLabel {
    pub first: usize,
    pub second: usize,
    pub cell: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    /// Share `value` sent privately to party `to`.
    Share { session: SessionLabel, to: usize, value: u64 },
    /// Masked column total broadcast in the clear.
    Broadcast { session: SessionLabel, value: u64 },
    /// A randomized value of one attribute.
    Release { attribute: usize, value: u32 },
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Share { session: s, to, value } => {
                write!(f, "share pair={},{} cell={} to={to} value={value}", s.first, s.second, s.cell)
            }
            Payload::Broadcast { session: s, value } => {
                write!(f, "broadcast pair={},{} cell={} value={value}", s.first, s.second, s.cell)
            }
            Payload::Release { attribute, value } => write!(f, "release attribute={attribute} value={value}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Message {
    /// Protocol step that emitted the message.
    pub step: u8,
    pub sender: Sender,
    pub payload: Payload,
}

/// Message counters, plus the messages themselves when recording.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageLog {
    record: bool,
    messages: Vec<Message>,
    pub shares: u64,
    pub broadcasts: u64,
    pub releases: u64,
    pub sessions: u64,
}

impl MessageLog {
    /// Counts messages without storing them.
    pub fn counting() -> Self {
        Self::default()
    }

    pub fn recording() -> Self {
        Self { record: true, ..Self::default() }
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn push(&mut self, step: u8, sender: Sender, payload: Payload) {
        match payload {
            Payload::Share { .. } => self.shares += 1,
            Payload::Broadcast { .. } => self.broadcasts += 1,
            Payload::Release { .. } => self.releases += 1,
        }
        if self.record {
            self.messages.push(Message { step, sender, payload });
        }
    }

    fn absorb(&mut self, other: MessageLog) {
        self.shares += other.shares;
        self.broadcasts += other.broadcasts;
        self.releases += other.releases;
        self.sessions += other.sessions;
        if self.record {
            self.messages.extend(other.messages);
        }
    }

    fn child(&self) -> Self {
        Self { record: self.record, ..Self::default() }
    }

    /// `step<TAB>sender<TAB>payload`, one message per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let _ = writeln!(out, "{}\t{}\t{}", m.step, m.sender, m.payload);
        }
        out
    }
}

/// Shares for one secure-sum run among `n` parties, modulo `n + 1`.
///
/// Row `i` holds the shares party `i` deals; each row sums to 0 mod `n + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecureSumSession {
    n: usize,
    shares: Vec<u64>,
}

impl SecureSumSession {
    pub fn new<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        if n < 2 {
            return Err(Error::Protocol(format!("secure sum needs at least 2 parties, got {n}")));
        }
        let modulus = n as u64 + 1;
        let mut shares = Vec::with_capacity(n * n);
        for _ in 0..n {
            let mut row_sum = 0u64;
            for _ in 0..n - 1 {
                let s = rng.random_range(0..modulus);
                row_sum = (row_sum + s) % modulus;
                shares.push(s);
            }
            shares.push((modulus - row_sum) % modulus);
        }
        Ok(Self { n, shares })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn modulus(&self) -> u64 {
        self.n as u64 + 1
    }

    /// Share dealt by party `i` to party `j`.
    pub fn share(&self, i: usize, j: usize) -> u64 {
        self.shares[i * self.n + j]
    }

    /// Runs steps 2 to 4: distribute shares, broadcast masked column totals
    /// (plus one where the party's bit is set), and add the broadcasts.
    pub fn run(&self, bits: &[bool], label: SessionLabel, log: &mut MessageLog) -> Result<u64> {
        if bits.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, actual: bits.len() });
        }
        let modulus = self.modulus();
        let mut columns = vec![0u64; self.n];
        for i in 0..self.n {
            for (j, col) in columns.iter_mut().enumerate() {
                let value = self.share(i, j);
                log.push(2, Sender::Party(i), Payload::Share { session: label, to: j, value });
                *col = (*col + value) % modulus;
            }
        }
        let mut total = 0u64;
        for (col, &bit) in columns.iter().zip(bits) {
            let value = (col + bit as u64) % modulus;
            log.push(3, Sender::Anonymous, Payload::Broadcast { session: label, value });
            total = (total + value) % modulus;
        }
        log.sessions += 1;
        Ok(total)
    }
}

/// Number of parties whose predicate holds, learned through a secure sum.
pub fn secure_sum_count<R, F>(parties: &[Party], predicate: F, rng: &mut R, log: &mut MessageLog) -> Result<u64>
where
    R: Rng + ?Sized,
    F: Fn(&Party) -> bool,
{
    let bits: Vec<bool> = parties.iter().map(predicate).collect();
    let label = SessionLabel { first: 0, second: 0, cell: 0 };
    SecureSumSession::new(parties.len(), rng)?.run(&bits, label, log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DependenceMethod {
    RrPerAttribute,
    SecureBivariate,
    RrPerPair,
}

impl DependenceMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DependenceMethod::RrPerAttribute => "rr-per-attribute",
            DependenceMethod::SecureBivariate => "secure-bivariate",
            DependenceMethod::RrPerPair => "rr-per-pair",
        }
    }
}

/// Privacy cost of learning the dependences, per respondent.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyAccounting {
    /// Sum over every randomized release.
    pub sequential: Option<PrivacyBudget<f64>>,
    /// Level when unlinkable releases are treated like releases over disjoint data.
    pub parallel: Option<PrivacyBudget<f64>>,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct DependenceEstimationReport {
    pub method: DependenceMethod,
    pub matrix: DependenceMatrix,
    pub privacy: PrivacyAccounting,
    pub log: MessageLog,
}

/// Each party releases every attribute through a keep-or-uniform matrix
/// with keep probability `p`; dependences are measured on the releases.
pub fn estimate_dependences_rr_per_attribute(
    federation: &Federation,
    p: f64,
    seed: u64,
    log: MessageLog,
) -> Result<DependenceEstimationReport> {
    estimate_dependences_rr_per_attribute_with(federation, &vec![p; federation.m()], seed, log)
}

/// As [`estimate_dependences_rr_per_attribute`] with one keep probability per attribute.
pub fn estimate_dependences_rr_per_attribute_with(
    federation: &Federation,
    keep: &[f64],
    seed: u64,
    mut log: MessageLog,
) -> Result<DependenceEstimationReport> {
    if keep.len() != federation.m() {
        return Err(Error::DimensionMismatch { expected: federation.m(), actual: keep.len() });
    }
    if let Some(p) = keep.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::Protocol(format!("keep probability {p} not in (0, 1]")));
    }
    let sizes = federation.sizes();
    let matrices = sizes
        .iter()
        .zip(keep)
        .map(|(&r, &p)| RandomizationMatrix::keep_or_uniform(r.max(2), p))
        .collect::<Result<Vec<_>>>()?;
    let mut columns = vec![Vec::with_capacity(federation.n()); federation.m()];
    for party in &federation.parties {
        let mut rng = stream(seed, &[tag::PARTY, party.id as u64]);
        for (a, column) in columns.iter_mut().enumerate() {
            let released = if sizes[a] < 2 { 0 } else { matrices[a].sample(party.value(a) as usize, &mut rng) as u32 };
            log.push(1, Sender::Party(party.id), Payload::Release { attribute: a, value: released });
            column.push(released);
        }
    }
    let matrix = DependenceMatrix::build(federation.names(), |i, j| {
        let table = ContingencyTable::from_codes(&columns[i], &columns[j], sizes[i], sizes[j])?;
        Ok(table.score(federation.measure(i, j))?.value)
    })?;
    let sequential = PrivacyBudget::sequential(
        matrices.iter().zip(&sizes).filter(|(_, &r)| r >= 2).map(|(m, _)| epsilon_of(m)),
    );
    Ok(DependenceEstimationReport {
        method: DependenceMethod::RrPerAttribute,
        matrix,
        privacy: PrivacyAccounting {
            sequential: Some(sequential),
            parallel: None,
            note: "each attribute is released once; the record's level is the sum over attributes".into(),
        },
        log,
    })
}

/// Exact pair tables, one secure sum per cell of every attribute pair.
pub fn estimate_dependences_secure_bivariate(
    federation: &Federation,
    seed: u64,
    log: MessageLog,
) -> Result<DependenceEstimationReport> {
    let sizes = federation.sizes();
    let tables = pair_tables(federation, seed, log.child(), |i, j| {
        let cols = sizes[j];
        let codes: Vec<usize> = federation
            .parties
            .iter()
            .map(|party| party.value(i) as usize * cols + party.value(j) as usize)
            .collect();
        Ok(codes)
    })?;
    let (matrix, log) = finish(federation, tables, log, |_, _, counts| Ok(counts.iter().map(|&c| c as f64).collect()))?;
    Ok(DependenceEstimationReport {
        method: DependenceMethod::SecureBivariate,
        matrix,
        privacy: PrivacyAccounting {
            sequential: None,
            parallel: None,
            note: "differential privacy does not apply: true pair values enter the secure sum unmasked".into(),
        },
        log,
    })
}

/// Keep-or-uniform matrices for every pair `i < j` over the joint domain of the pair.
pub fn keep_or_uniform_pair_matrices(
    sizes: &[usize],
    p: f64,
) -> Result<BTreeMap<(usize, usize), RandomizationMatrix<f64>>> {
    let mut out = BTreeMap::new();
    for i in 0..sizes.len() {
        for j in i + 1..sizes.len() {
            out.insert((i, j), RandomizationMatrix::keep_or_uniform(sizes[i] * sizes[j], p)?);
        }
    }
    Ok(out)
}

/// Each party masks its value of every pair with that pair's matrix; masked
/// cells are counted by secure sums and unmasked by the unbiased estimator,
/// projected onto the simplex.
pub fn estimate_dependences_rr_per_pair(
    federation: &Federation,
    matrices: &BTreeMap<(usize, usize), RandomizationMatrix<f64>>,
    seed: u64,
    log: MessageLog,
) -> Result<DependenceEstimationReport> {
    let sizes = federation.sizes();
    for i in 0..federation.m() {
        for j in i + 1..federation.m() {
            let m = matrices
                .get(&(i, j))
                .ok_or_else(|| Error::Protocol(format!("no randomization matrix for pair ({i}, {j})")))?;
            if m.dim() != sizes[i] * sizes[j] {
                return Err(Error::DimensionMismatch { expected: sizes[i] * sizes[j], actual: m.dim() });
            }
        }
    }
    let tables = pair_tables(federation, seed, log.child(), |i, j| {
        let domain = JointDomain::new(vec![i, j], vec![sizes[i], sizes[j]])?;
        let matrix = &matrices[&(i, j)];
        federation
            .parties
            .iter()
            .map(|party| {
                let mut rng = stream(seed, &[tag::PARTY, party.id as u64, i as u64, j as u64]);
                let code = domain.encode(&[party.value(i), party.value(j)])?;
                Ok(matrix.sample(code, &mut rng))
            })
            .collect()
    })?;
    let n = federation.n() as f64;
    let (matrix, log) = finish(federation, tables, log, |i, j, counts| {
        let counts: Vec<usize> = counts.iter().map(|&c| c as usize).collect();
        let lambda = proportions::<f64>(&counts)?;
        let pi = project_to_simplex(&estimate_pi(&lambda, &matrices[&(i, j)])?)?;
        Ok(pi.values().iter().map(|&v| v * n).collect())
    })?;
    let budgets: Vec<PrivacyBudget<f64>> = matrices.values().map(epsilon_of).collect();
    let parallel = budgets.iter().copied().fold(PrivacyBudget::Bounded(0.0f64), |acc, b| match (acc, b) {
        (PrivacyBudget::Bounded(x), PrivacyBudget::Bounded(y)) => PrivacyBudget::Bounded(x.max(y)),
        _ => PrivacyBudget::Unbounded,
    });
    Ok(DependenceEstimationReport {
        method: DependenceMethod::RrPerPair,
        matrix,
        privacy: PrivacyAccounting {
            sequential: Some(PrivacyBudget::sequential(budgets)),
            parallel: Some(parallel),
            note: format!(
                "each attribute is randomized {} times; sequential composition sums every pair release, \
                 while the parallel-style level relies on the secure sum making releases unlinkable",
                federation.m().saturating_sub(1)
            ),
        },
        log,
    })
}

type PairCounts = Vec<((usize, usize), Vec<u64>, MessageLog)>;

/// For every pair, obtains one code per party in the pair's joint domain and
/// counts each cell with a secure sum. Pairs run in parallel with their own
/// share streams and logs, merged back in pair order.
fn pair_tables<F>(federation: &Federation, seed: u64, template: MessageLog, codes: F) -> Result<PairCounts>
where
    F: Fn(usize, usize) -> Result<Vec<usize>> + Sync,
{
    let sizes = federation.sizes();
    let m = federation.m();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    pairs
        .par_iter()
        .map(|&(i, j)| {
            let codes = codes(i, j)?;
            let mut log = template.child();
            let cells = sizes[i] * sizes[j];
            let mut counts = Vec::with_capacity(cells);
            for cell in 0..cells {
                let mut rng = stream(seed, &[tag::SHARES, i as u64, j as u64, cell as u64]);
                let session = SecureSumSession::new(federation.n(), &mut rng)?;
                let bits: Vec<bool> = codes.iter().map(|&c| c == cell).collect();
                counts.push(session.run(&bits, SessionLabel { first: i, second: j, cell }, &mut log)?);
            }
            Ok(((i, j), counts, log))
        })
        .collect()
}

fn finish<F>(federation: &Federation, tables: PairCounts, mut log: MessageLog, to_table: F) -> Result<(DependenceMatrix, MessageLog)>
where
    F: Fn(usize, usize, &[u64]) -> Result<Vec<f64>>,
{
    let sizes = federation.sizes();
    let m = federation.m();
    let mut values = vec![vec![0.0; m]; m];
    for ((i, j), counts, pair_log) in tables {
        log.absorb(pair_log);
        let table = ContingencyTable::new(sizes[i], sizes[j], to_table(i, j, &counts)?)?;
        let score = table.score(federation.measure(i, j))?.value;
        values[i][j] = score;
        values[j][i] = score;
    }
    Ok((DependenceMatrix::new(federation.names(), values)?, log))
}
