use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

/// Row sums must equal one to this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Solves are refused above this condition estimate.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
enum Form<T> {
    /// `diag` on the main diagonal and `off` everywhere else. Never
    /// materialized, so joint domains of any size stay cheap.
    Uniform { diag: T, off: T },
    Dense { entries: Vec<T>, cumulative: Vec<f64> },
}

/// Row-stochastic `r x r` matrix with entry `(u, v)` the probability of
/// reporting `v` when the true category is `u`.
///
/// Construction checks stochasticity only. A singular matrix (for example
/// the all-`1/r` matrix, which has zero privacy loss) is a valid mechanism,
/// but estimation with it fails with [`Error::IllConditioned`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizationMatrix<T> {
    dim: usize,
    form: Form<T>,
}

impl<T: Scalar> RandomizationMatrix<T> {
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidMatrix("empty matrix".into()));
        }
        let tol = T::tolerance(ROW_SUM_TOLERANCE);
        let mut entries = Vec::with_capacity(dim * dim);
        for (u, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidMatrix(format!("row {u} has {} entries, expected {dim}", row.len())));
            }
            if row.iter().any(|&p| p < T::zero() || p > T::one()) {
                return Err(Error::InvalidMatrix(format!("row {u} has an entry outside [0, 1]")));
            }
            let sum = crate::scalar::sum(&row);
            if (sum - T::one()).abs_val() > tol {
                return Err(Error::InvalidMatrix(format!("row {u} sums to {:?}", sum)));
            }
            entries.extend(row);
        }
        let cumulative = cumulative_rows(dim, &entries);
        Ok(Self { dim, form: Form::Dense { entries, cumulative } })
    }

    /// `diag` on the diagonal, `off` elsewhere.
    pub fn diagonal_uniform(dim: usize, diag: T, off: T) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMatrix("empty matrix".into()));
        }
        let in_unit = |p: T| p >= T::zero() && p <= T::one();
        if !in_unit(diag) || !in_unit(off) {
            return Err(Error::InvalidMatrix("entries must lie in [0, 1]".into()));
        }
        let sum = diag + T::from_count(dim - 1) * off;
        if (sum - T::one()).abs_val() > T::tolerance(ROW_SUM_TOLERANCE) {
            return Err(Error::InvalidMatrix(format!("rows sum to {:?}", sum)));
        }
        Ok(Self { dim, form: Form::Uniform { diag, off } })
    }

    /// Keep the true value with probability `p`, otherwise report a value drawn
    /// uniformly over all `r` categories: `p + (1-p)/r` on the diagonal and
    /// `(1-p)/r` off it.
    pub fn keep_or_uniform(r: usize, p: T) -> Result<Self> {
        if r < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 categories, got {r}")));
        }
        if !(p > T::zero() && p <= T::one()) {
            return Err(Error::InvalidParameter(format!("keep probability {:?} not in (0, 1]", p)));
        }
        let off = (T::one() - p) / T::from_count(r);
        Self::diagonal_uniform(r, p + off, off)
    }

    pub fn identity(r: usize) -> Result<Self> {
        Self::diagonal_uniform(r, T::one(), T::zero())
    }

    /// All entries `1/r`.
    pub fn uniform(r: usize) -> Result<Self> {
        let v = T::one() / T::from_count(r);
        Self::diagonal_uniform(r, v, v)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, u: usize, v: usize) -> T {
        match &self.form {
            Form::Uniform { diag, off } => {
                if u == v {
                    *diag
                } else {
                    *off
                }
            }
            Form::Dense { entries, .. } => entries[u * self.dim + v],
        }
    }

    pub fn row(&self, u: usize) -> Vec<T> {
        (0..self.dim).map(|v| self.entry(u, v)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.dim).map(|u| self.row(u)).collect()
    }

    /// `(diag, off)` when the matrix has the diagonal-plus-constant form.
    pub fn uniform_parts(&self) -> Option<(T, T)> {
        match self.form {
            Form::Uniform { diag, off } => Some((diag, off)),
            Form::Dense { .. } => None,
        }
    }

    /// Forward map `P^T pi`: the distribution of reports given true
    /// distribution `pi`.
    pub fn forward(&self, pi: &[T]) -> Result<Vec<T>> {
        self.check_len(pi.len())?;
        Ok(match &self.form {
            Form::Uniform { diag, off } => {
                let total = crate::scalar::sum(pi);
                pi.iter().map(|&x| (*diag - *off) * x + *off * total).collect()
            }
            Form::Dense { entries, .. } => (0..self.dim)
                .map(|v| (0..self.dim).fold(T::zero(), |acc, u| acc + entries[u * self.dim + v] * pi[u]))
                .collect(),
        })
    }

    /// Solves `P^T x = rhs`.
    ///
    /// The diagonal-plus-constant form `aI + b11^T` is inverted in closed
    /// form; dense matrices go through LU with partial pivoting. Either path
    /// refuses singular systems and condition estimates above
    /// [`MAX_CONDITION`].
    pub fn solve_transpose(&self, rhs: &[T]) -> Result<Vec<T>> {
        self.check_len(rhs.len())?;
        match &self.form {
            Form::Uniform { diag, off } => {
                let a = *diag - *off;
                let full = a + T::from_count(self.dim) * *off;
                let condition = self.condition_estimate();
                if a == T::zero() || full == T::zero() || condition > MAX_CONDITION {
                    return Err(Error::IllConditioned { condition });
                }
                let shift = *off / full * crate::scalar::sum(rhs);
                Ok(rhs.iter().map(|&y| (y - shift) / a).collect())
            }
            Form::Dense { entries, .. } => {
                let lu = Lu::factor(self.dim, transpose(self.dim, entries))?;
                let condition = lu.condition_1(self.dim, entries);
                if condition > MAX_CONDITION {
                    return Err(Error::IllConditioned { condition });
                }
                Ok(lu.solve(rhs))
            }
        }
    }

    /// Condition number estimate (exact 2-norm condition for the uniform
    /// form, 1-norm condition via an explicit LU inverse otherwise).
    pub fn condition_estimate(&self) -> f64 {
        match &self.form {
            Form::Uniform { diag, off } => {
                let a = (*diag - *off).as_f64().abs();
                let full = ((*diag - *off) + T::from_count(self.dim) * *off).as_f64().abs();
                if a == 0.0 || full == 0.0 {
                    f64::INFINITY
                } else {
                    a.max(full) / a.min(full)
                }
            }
            Form::Dense { entries, .. } => match Lu::factor(self.dim, transpose(self.dim, entries)) {
                Ok(lu) => lu.condition_1(self.dim, entries),
                Err(_) => f64::INFINITY,
            },
        }
    }

    /// Maps a uniform draw in `[0, 1)` to a report for true category `u` by
    /// inverting the row's cumulative distribution.
    pub fn sample_with(&self, u: usize, draw: f64) -> usize {
        assert!(u < self.dim, "category {u} out of range for dimension {}", self.dim);
        match &self.form {
            Form::Uniform { diag, off } => {
                let diag = diag.as_f64();
                let off = off.as_f64();
                if draw < diag || off <= 0.0 {
                    return u;
                }
                let k = (((draw - diag) / off) as usize).min(self.dim - 2);
                if k < u {
                    k
                } else {
                    k + 1
                }
            }
            Form::Dense { cumulative, entries } => {
                let row = &cumulative[u * self.dim..(u + 1) * self.dim];
                let v = row.partition_point(|&c| c <= draw);
                if v < self.dim {
                    v
                } else {
                    // rounding left the row total just below 1
                    (0..self.dim).rev().find(|&v| entries[u * self.dim + v] > T::zero()).unwrap_or(u)
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, u: usize, rng: &mut R) -> usize {
        self.sample_with(u, rng.random::<f64>())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: len });
        }
        Ok(())
    }
}

impl<T: Real> RandomizationMatrix<T> {
    /// Matrix for a joint domain of size `joint_size` that is exactly
    /// `epsilon`-differentially private: diagonal `p_c`, off-diagonal
    /// `p_c * exp(-epsilon)` with `p_c = 1 / (1 + (R - 1) exp(-epsilon))`.
    pub fn cluster_matrix(joint_size: usize, epsilon: T) -> Result<Self> {
        if joint_size < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 joint categories, got {joint_size}")));
        }
        if !(epsilon > T::zero()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {:?}", epsilon)));
        }
        let decay = (-epsilon).exp();
        let diag = T::one() / (T::one() + T::from_count(joint_size - 1) * decay);
        Self::diagonal_uniform(joint_size, diag, diag * decay)
    }
}

/// Reports `value` through `matrix`; deterministic given the generator state.
pub fn randomize<T: Scalar, R: Rng + ?Sized>(value: usize, matrix: &RandomizationMatrix<T>, rng: &mut R) -> Result<usize> {
    if value >= matrix.dim() {
        return Err(Error::OutOfRange { index: 0, value, size: matrix.dim() });
    }
    Ok(matrix.sample(value, rng))
}

fn cumulative_rows<T: Scalar>(dim: usize, entries: &[T]) -> Vec<f64> {
    let mut out = Vec::with_capacity(entries.len());
    for row in entries.chunks(dim) {
        let mut acc = 0.0;
        for &p in row {
            acc += p.as_f64();
            out.push(acc);
        }
    }
    out
}

fn transpose<T: Scalar>(dim: usize, entries: &[T]) -> Vec<T> {
    let mut t = entries.to_vec();
    for u in 0..dim {
        for v in 0..dim {
            t[v * dim + u] = entries[u * dim + v];
        }
    }
    t
}

/// LU factorization with partial pivoting, row-major.
struct Lu<T> {
    dim: usize,
    factors: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    fn factor(dim: usize, mut a: Vec<T>) -> Result<Self> {
        let mut perm: Vec<usize> = (0..dim).collect();
        for k in 0..dim {
            let pivot = (k..dim)
                .max_by(|&i, &j| {
                    a[i * dim + k]
                        .abs_val()
                        .partial_cmp(&a[j * dim + k].abs_val())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(k);
            if a[pivot * dim + k] == T::zero() {
                return Err(Error::IllConditioned { condition: f64::INFINITY });
            }
            if pivot != k {
                for c in 0..dim {
                    a.swap(k * dim + c, pivot * dim + c);
                }
                perm.swap(k, pivot);
            }
            let p = a[k * dim + k];
            for i in k + 1..dim {
                let f = a[i * dim + k] / p;
                a[i * dim + k] = f;
                if f != T::zero() {
                    for c in k + 1..dim {
                        let sub = f * a[k * dim + c];
                        a[i * dim + c] = a[i * dim + c] - sub;
                    }
                }
            }
        }
        Ok(Self { dim, factors: a, perm })
    }

    fn solve(&self, rhs: &[T]) -> Vec<T> {
        let n = self.dim;
        let a = &self.factors;
        let mut x: Vec<T> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] = x[i] - a[i * n + k] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] = x[i] - a[i * n + k] * x[k];
            }
            x[i] = x[i] / a[i * n + i];
        }
        x
    }

    /// `||A||_1 ||A^-1||_1` for `A = P^T` given the entries of `P`.
    fn condition_1(&self, dim: usize, p_entries: &[T]) -> f64 {
        // column sums of P^T are row sums of P
        let norm_a = (0..dim)
            .map(|u| (0..dim).map(|v| p_entries[u * dim + v].as_f64().abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut norm_inv: f64 = 0.0;
        let mut unit = vec![T::zero(); dim];
        for j in 0..dim {
            unit[j] = T::one();
            let col = self.solve(&unit);
            unit[j] = T::zero();
            norm_inv = norm_inv.max(col.iter().map(|v| v.as_f64().abs()).sum());
        }
        norm_a * norm_inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;
    use rand::SeedableRng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn keep_or_uniform_examples() {
        let m = RandomizationMatrix::<f64>::keep_or_uniform(2, 0.5).unwrap();
        assert_eq!(m.rows(), vec![vec![0.75, 0.25], vec![0.25, 0.75]]);
        let id = RandomizationMatrix::<f64>::keep_or_uniform(4, 1.0).unwrap();
        for u in 0..4 {
            for v in 0..4 {
                assert_eq!(id.entry(u, v), if u == v { 1.0 } else { 0.0 });
            }
        }
        let m = RandomizationMatrix::<f64>::keep_or_uniform(3, 0.1).unwrap();
        assert!(close(m.entry(0, 0), 0.4, 1e-15));
        assert!(close(m.entry(0, 1), 0.3, 1e-15));
        assert!(close(m.row(2).iter().sum::<f64>(), 1.0, 1e-15));
    }

    #[test]
    fn keep_or_uniform_rejects_bad_parameters() {
        assert!(RandomizationMatrix::<f64>::keep_or_uniform(1, 0.5).is_err());
        assert!(RandomizationMatrix::<f64>::keep_or_uniform(3, 0.0).is_err());
        assert!(RandomizationMatrix::<f64>::keep_or_uniform(3, 1.5).is_err());
        assert!(RandomizationMatrix::<f64>::keep_or_uniform(3, f64::NAN).is_err());
    }

    #[test]
    fn keep_or_uniform_is_exact_over_rationals() {
        let m = RandomizationMatrix::keep_or_uniform(3, Rational64::new(1, 10)).unwrap();
        assert_eq!(m.entry(0, 0), Rational64::new(2, 5));
        assert_eq!(m.entry(0, 2), Rational64::new(3, 10));
    }

    #[test]
    fn cluster_matrix_examples() {
        let m = RandomizationMatrix::<f64>::cluster_matrix(2, 3f64.ln()).unwrap();
        assert!(close(m.entry(0, 0), 0.75, 1e-15) && close(m.entry(0, 1), 0.25, 1e-15));
        let m = RandomizationMatrix::<f64>::cluster_matrix(6, 5f64.ln()).unwrap();
        assert!(close(m.entry(3, 3), 0.5, 1e-15) && close(m.entry(3, 1), 0.1, 1e-15));
        let m = RandomizationMatrix::<f64>::cluster_matrix(4, f64::INFINITY).unwrap();
        assert_eq!(m.uniform_parts(), Some((1.0, 0.0)));
        assert!(RandomizationMatrix::<f64>::cluster_matrix(4, 0.0).is_err());
        assert!(RandomizationMatrix::<f64>::cluster_matrix(1, 1.0).is_err());
    }

    #[test]
    fn from_rows_validation() {
        assert!(RandomizationMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.2, 0.7]]).is_err());
        assert!(RandomizationMatrix::from_rows(vec![vec![1.2, -0.2], vec![0.0, 1.0]]).is_err());
        assert!(RandomizationMatrix::from_rows(vec![vec![1.0, 0.0]]).is_err());
        assert!(RandomizationMatrix::<f64>::from_rows(vec![]).is_err());
        assert!(RandomizationMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.3, 0.7]]).is_ok());
    }

    #[test]
    fn solve_hand_example() {
        let m = RandomizationMatrix::<f64>::keep_or_uniform(2, 0.5).unwrap();
        let x = m.solve_transpose(&[0.6, 0.4]).unwrap();
        assert!(close(x[0], 0.7, 1e-12) && close(x[1], 0.3, 1e-12));
        let dense = RandomizationMatrix::from_rows(m.rows()).unwrap();
        let y = dense.solve_transpose(&[0.6, 0.4]).unwrap();
        assert!(close(y[0], 0.7, 1e-12) && close(y[1], 0.3, 1e-12));
    }

    #[test]
    fn solve_is_exact_over_rationals() {
        let r = Rational64::new;
        let m = RandomizationMatrix::from_rows(vec![vec![r(3, 4), r(1, 4)], vec![r(1, 4), r(3, 4)]]).unwrap();
        assert_eq!(m.solve_transpose(&[r(3, 5), r(2, 5)]).unwrap(), vec![r(7, 10), r(3, 10)]);
        let fast = RandomizationMatrix::keep_or_uniform(2, r(1, 2)).unwrap();
        assert_eq!(fast.solve_transpose(&[r(3, 5), r(2, 5)]).unwrap(), vec![r(7, 10), r(3, 10)]);
    }

    #[test]
    fn asymmetric_dense_solve_matches_forward() {
        let m = RandomizationMatrix::from_rows(vec![
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.5, 0.3],
            vec![0.1, 0.1, 0.8],
        ])
        .unwrap();
        let pi = [0.2, 0.5, 0.3];
        let lambda = m.forward(&pi).unwrap();
        let back = m.solve_transpose(&lambda).unwrap();
        for (a, b) in back.iter().zip(pi) {
            assert!(close(*a, b, 1e-13));
        }
    }

    #[test]
    fn singular_matrices_are_refused() {
        let u = RandomizationMatrix::<f64>::uniform(3).unwrap();
        assert!(matches!(u.solve_transpose(&[0.2, 0.3, 0.5]), Err(Error::IllConditioned { .. })));
        let dense = RandomizationMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(dense.solve_transpose(&[0.5, 0.5]), Err(Error::IllConditioned { .. })));
        let nearly = RandomizationMatrix::<f64>::keep_or_uniform(3, 1e-14).unwrap();
        assert!(nearly.condition_estimate() > MAX_CONDITION);
        assert!(nearly.solve_transpose(&[0.2, 0.3, 0.5]).is_err());
    }

    #[test]
    fn identity_samples_are_fixed() {
        let id = RandomizationMatrix::<f64>::identity(5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(randomize(3, &id, &mut rng).unwrap(), 3);
        }
        assert!(randomize(5, &id, &mut rng).is_err());
    }

    #[test]
    fn uniform_form_sampling_covers_every_off_diagonal_cell() {
        let m = RandomizationMatrix::<f64>::diagonal_uniform(4, 0.4, 0.2).unwrap();
        // draws in [0.4, 1) split into three equal slices for the other categories
        assert_eq!(m.sample_with(1, 0.39), 1);
        assert_eq!(m.sample_with(1, 0.41), 0);
        assert_eq!(m.sample_with(1, 0.61), 2);
        assert_eq!(m.sample_with(1, 0.81), 3);
        assert_eq!(m.sample_with(1, 0.999_999_999), 3);
    }

    #[test]
    fn dense_sampling_skips_zero_cells() {
        let m = RandomizationMatrix::from_rows(vec![vec![0.5, 0.0, 0.5], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])
            .unwrap();
        assert_eq!(m.sample_with(0, 0.49), 0);
        assert_eq!(m.sample_with(0, 0.5), 2);
        assert_eq!(m.sample_with(0, 0.999_999_999_999), 2);
        assert_eq!(m.sample_with(1, 0.0), 1);
    }
}
