//! Pairwise dependence between categorical attributes.
//!
//! Every score is computed from a [`ContingencyTable`], whether the table was
//! counted in the clear, aggregated by secure sums or estimated from
//! randomized pairs, so all routes yield bit-identical scores for equal tables.

use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::dataset::{AttributeKind, Dataset};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative variance below which a marginal is treated as constant.
const ZERO_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Measure {
    PearsonAbs,
    CramersV,
}

impl Measure {
    /// Pearson for ordinal pairs, Cramer's V whenever a nominal attribute is involved.
    pub fn for_kinds(a: AttributeKind, b: AttributeKind) -> Self {
        match (a, b) {
            (AttributeKind::Ordinal, AttributeKind::Ordinal) => Measure::PearsonAbs,
            _ => Measure::CramersV,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::PearsonAbs => "pearson-abs",
            Measure::CramersV => "cramers-v",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependenceScore {
    /// In `[0, 1]`.
    pub value: f64,
    pub measure: Measure,
}

/// Joint counts of two categorical attributes, row-major. Counts are real so
/// that estimated tables are first-class; they are never negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    rows: usize,
    cols: usize,
    counts: Vec<f64>,
}

impl ContingencyTable {
    pub fn new(rows: usize, cols: usize, counts: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::DegenerateTable("table has an empty dimension".into()));
        }
        if counts.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, actual: counts.len() });
        }
        if let Some(bad) = counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::DegenerateTable(format!("invalid cell count {bad}")));
        }
        Ok(Self { rows, cols, counts })
    }

    /// Counts the co-occurrences of two index vectors.
    pub fn from_codes(xs: &[u32], ys: &[u32], rows: usize, cols: usize) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch { left: xs.len(), right: ys.len() });
        }
        let mut counts = vec![0u64; rows * cols];
        for (&x, &y) in xs.iter().zip(ys) {
            let (x, y) = (x as usize, y as usize);
            if x >= rows || y >= cols {
                return Err(Error::OutOfRange { index: 0, value: x.max(y), size: rows.max(cols) });
            }
            counts[x * cols + y] += 1;
        }
        Self::new(rows, cols, counts.into_iter().map(|c| c as f64).collect())
    }

    pub fn of(dataset: &Dataset, i: usize, j: usize) -> Result<Self> {
        let sizes = dataset.sizes();
        Self::from_codes(dataset.column(i), dataset.column(j), sizes[i], sizes[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.counts[a * self.cols + b]
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn row_marginals(&self) -> Vec<f64> {
        self.counts.chunks(self.cols).map(|row| row.iter().sum()).collect()
    }

    pub fn col_marginals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.counts.chunks(self.cols) {
            for (acc, c) in out.iter_mut().zip(row) {
                *acc += c;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut counts = Vec::with_capacity(self.counts.len());
        for b in 0..self.cols {
            for a in 0..self.rows {
                counts.push(self.get(a, b));
            }
        }
        Self { rows: self.cols, cols: self.rows, counts }
    }

    pub fn score(&self, measure: Measure) -> Result<DependenceScore> {
        let value = match measure {
            Measure::PearsonAbs => self.pearson_abs()?,
            Measure::CramersV => self.cramers_v()?,
        };
        Ok(DependenceScore { value, measure })
    }

    /// `|corr|` treating row and column indices as ranks; 0 if either marginal is constant.
    pub fn pearson_abs(&self) -> Result<f64> {
        let n = self.positive_total()?;
        let (rm, cm) = (self.row_marginals(), self.col_marginals());
        let mean = |m: &[f64]| m.iter().enumerate().map(|(a, c)| a as f64 * c).sum::<f64>() / n;
        let (mx, my) = (mean(&rm), mean(&cm));
        let var = |m: &[f64], mu: f64| m.iter().enumerate().map(|(a, c)| c * (a as f64 - mu).powi(2)).sum::<f64>() / n;
        let (vx, vy) = (var(&rm, mx), var(&cm, my));
        let scale = |k: usize| ((k.max(2) - 1) as f64).powi(2);
        if vx <= ZERO_VARIANCE * scale(self.rows) || vy <= ZERO_VARIANCE * scale(self.cols) {
            return Ok(0.0);
        }
        let mut cov = 0.0;
        for a in 0..self.rows {
            for b in 0..self.cols {
                cov += self.get(a, b) * (a as f64 - mx) * (b as f64 - my);
            }
        }
        Ok((cov / n / (vx * vy).sqrt()).abs().min(1.0))
    }

    /// Cramer's V with expected counts `n_a n_b / n`. Cells with zero
    /// expectation are skipped and the `min(r - 1, c - 1)` normalizer counts
    /// only non-empty rows and columns; a table that reduces to a single row
    /// or column scores 0.
    pub fn cramers_v(&self) -> Result<f64> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::DegenerateTable(format!("{}x{} table has fewer than two categories on one side", self.rows, self.cols)));
        }
        let n = self.positive_total()?;
        let (rm, cm) = (self.row_marginals(), self.col_marginals());
        let live_rows = rm.iter().filter(|&&c| c > 0.0).count();
        let live_cols = cm.iter().filter(|&&c| c > 0.0).count();
        let k = live_rows.min(live_cols);
        if k < 2 {
            return Ok(0.0);
        }
        let mut chi2 = 0.0;
        for (a, &na) in rm.iter().enumerate() {
            for (b, &nb) in cm.iter().enumerate() {
                let e = na * nb / n;
                if e > 0.0 {
                    let d = self.get(a, b) - e;
                    chi2 += d * d / e;
                }
            }
        }
        Ok((chi2 / n / (k - 1) as f64).sqrt().clamp(0.0, 1.0))
    }

    fn positive_total(&self) -> Result<f64> {
        let n = self.total();
        if n > 0.0 {
            Ok(n)
        } else {
            Err(Error::DegenerateTable("table has zero total count".into()))
        }
    }
}

/// `|Pearson correlation|` of two rank vectors; 0 if either is constant.
pub fn pearson_abs(xs: &[u32], ys: &[u32]) -> Result<DependenceScore> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateTable("need at least two observations".into()));
    }
    let extent = |v: &[u32]| v.iter().copied().max().unwrap_or(0) as usize + 1;
    ContingencyTable::from_codes(xs, ys, extent(xs), extent(ys))?.score(Measure::PearsonAbs)
}

pub fn cramers_v(table: &ContingencyTable) -> Result<DependenceScore> {
    table.score(Measure::CramersV)
}

/// Dependence of attributes `i` and `j` computed on the clear data.
pub fn dependence(dataset: &Dataset, i: usize, j: usize) -> Result<DependenceScore> {
    if i == j {
        return Err(Error::DegenerateTable(format!("attribute {i} paired with itself")));
    }
    let measure = Measure::for_kinds(dataset.attribute(i).kind(), dataset.attribute(j).kind());
    ContingencyTable::of(dataset, i, j)?.score(measure)
}

/// Population covariance (normalized by `n`).
pub fn covariance<T: Real>(xs: &[T], ys: &[T]) -> Result<T> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateTable("need at least two observations".into()));
    }
    let n = T::from_count(xs.len());
    let mean = |v: &[T]| v.iter().fold(T::zero(), |a, &x| a + x) / n;
    let (mx, my) = (mean(xs), mean(ys));
    Ok(xs.iter().zip(ys).fold(T::zero(), |acc, (&x, &y)| acc + (x - mx) * (y - my)) / n)
}

/// Symmetric matrix of pairwise scores with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DependenceMatrix {
    names: Vec<String>,
    values: Vec<f64>,
}

impl DependenceMatrix {
    pub fn new(names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let m = names.len();
        if values.len() != m || values.iter().any(|row| row.len() != m) {
            return Err(Error::DimensionMismatch { expected: m, actual: values.len() });
        }
        for i in 0..m {
            for j in 0..m {
                let v = values[i][j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::DegenerateTable(format!("score {v} at ({i}, {j}) outside [0, 1]")));
                }
                if v != values[j][i] {
                    return Err(Error::DegenerateTable(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        let mut flat: Vec<f64> = values.into_iter().flatten().collect();
        for i in 0..m {
            flat[i * m + i] = 1.0;
        }
        Ok(Self { names, values: flat })
    }

    /// Evaluates `score(i, j)` for every unordered pair `i < j`, in parallel.
    pub fn build<F>(names: Vec<String>, score: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> Result<f64> + Sync,
    {
        let m = names.len();
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
        let scores = pairs.par_iter().map(|&(i, j)| score(i, j)).collect::<Result<Vec<_>>>()?;
        let mut values = vec![vec![0.0; m]; m];
        for (&(i, j), s) in pairs.iter().zip(scores) {
            values[i][j] = s;
            values[j][i] = s;
        }
        Self::new(names, values)
    }

    pub fn of(dataset: &Dataset) -> Result<Self> {
        let names = dataset.schema().iter().map(|a| a.name().to_string()).collect();
        Self::build(names, |i, j| Ok(dependence(dataset, i, j)?.value))
    }

    pub fn m(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m() + j]
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for name in &self.names {
            let _ = write!(out, "\t{name}");
        }
        out.push('\n');
        for (i, name) in self.names.iter().enumerate() {
            out.push_str(name);
            for j in 0..self.m() {
                let _ = write!(out, "\t{}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let bad = |message: String| Error::Parse { context: "dependence: matrix file".into(), message };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let names: Vec<String> = header.split('\t').skip(1).map(|s| s.trim().to_string()).collect();
        let mut values = Vec::with_capacity(names.len());
        for (i, line) in lines.enumerate() {
            let mut fields = line.split('\t');
            let label = fields.next().unwrap_or_default().trim();
            if names.get(i).map(String::as_str) != Some(label) {
                return Err(bad(format!("row {i} is labelled {label:?}")));
            }
            let row = fields
                .map(|f| f.trim().parse::<f64>().map_err(|e| bad(format!("row {label}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        Self::new(names, values)
    }
}

impl fmt::Display for DependenceMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_tsv())
    }
}
