//! Confidence bounds on the accuracy of randomized-report proportions.
//!
//! The factor `B` is the upper `alpha / r` quantile of a chi-square variable
//! with one degree of freedom, so that all `r` per-category intervals hold
//! simultaneously with probability at least `1 - alpha`.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::rr::DistributionEstimate;
use crate::scalar::Real;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(a)` for `a > 0`.
pub fn ln_gamma<T: Real>(a: T) -> T {
    let half = T::lit(0.5);
    if a < half {
        // reflection keeps the approximation in its accurate range
        let pi = T::lit(std::f64::consts::PI);
        return (pi / (pi * a).sin()).ln() - ln_gamma(T::one() - a);
    }
    let x = a - T::one();
    let mut acc = T::lit(LANCZOS[0]);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc = acc + T::lit(c) / (x + T::from_count(i));
    }
    let t = x + T::lit(LANCZOS_G) + half;
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

/// Regularized upper incomplete gamma function `Q(a, x)`.
pub fn regularized_gamma_q<T: Real>(a: T, x: T) -> Result<T> {
    if !(a > T::zero()) || !(x >= T::zero()) {
        return Err(Error::InvalidBoundInput(format!("Q(a, x) needs a > 0, x >= 0 (a = {a:?}, x = {x:?})")));
    }
    if x == T::zero() {
        return Ok(T::one());
    }
    if x.is_infinite() {
        return Ok(T::zero());
    }
    let prefactor = (a * x.ln() - x - ln_gamma(a)).exp();
    if x < a + T::one() {
        Ok(T::one() - prefactor * lower_series(a, x))
    } else {
        Ok(prefactor * upper_fraction(a, x))
    }
}

/// `sum_k x^k / (a (a+1) ... (a+k))`, convergent for all `x`, fast for `x < a + 1`.
fn lower_series<T: Real>(a: T, x: T) -> T {
    let mut term = T::one() / a;
    let mut total = term;
    let mut denom = a;
    for _ in 0..10_000 {
        denom = denom + T::one();
        term = term * x / denom;
        total = total + term;
        if term.abs() <= total.abs() * T::epsilon() {
            break;
        }
    }
    total
}

/// Continued fraction for `Q(a, x) e^x x^-a Gamma(a)`, evaluated by the
/// modified Lentz method.
fn upper_fraction<T: Real>(a: T, x: T) -> T {
    let tiny = T::min_positive_value() / T::epsilon();
    let mut b = x + T::one() - a;
    let mut c = T::one() / tiny;
    let mut d = T::one() / b;
    let mut h = d;
    for i in 1..10_000usize {
        let k = T::from_count(i);
        let an = -k * (k - a);
        b = b + T::lit(2.0);
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let delta = d * c;
        h = h * delta;
        if (delta - T::one()).abs() <= T::epsilon() {
            break;
        }
    }
    h
}

/// `Pr(X > b)` for `X ~ chi-square(1)`.
pub fn chi2_upper_tail<T: Real>(b: T) -> Result<T> {
    if !(b >= T::zero()) {
        return Err(Error::InvalidBoundInput(format!("chi-square argument {b:?} is negative")));
    }
    regularized_gamma_q(T::lit(0.5), b / T::lit(2.0))
}

/// The `b` with `Pr(X > b) = q` for `X ~ chi-square(1)`.
///
/// Bisects on `z = sqrt(b)`: the tail is smooth and strictly decreasing in `z`
/// on `[0, 40]`, which brackets every `q` representable in `f64`.
pub fn chi2_quantile_1df<T: Real>(q: T) -> Result<T> {
    if !(q > T::zero() && q < T::one()) {
        return Err(Error::InvalidBoundInput(format!("upper-tail probability {q:?} not in (0, 1)")));
    }
    let mut lo = T::zero();
    let mut hi = T::lit(40.0);
    for _ in 0..200 {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi2_upper_tail(mid * mid)? > q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let z = (lo + hi) / T::lit(2.0);
    Ok(z * z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Absolute,
    Relative,
}

impl BoundKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::Absolute => "absolute",
            BoundKind::Relative => "relative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundValue<T> {
    Finite(T),
    /// Some category has zero frequency, so the relative error is unbounded.
    Unbounded,
}

impl<T: Real> BoundValue<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            BoundValue::Finite(v) => Some(v),
            BoundValue::Unbounded => None,
        }
    }
}

/// A simultaneous `1 - alpha` accuracy bound on every category proportion.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBound<T> {
    pub kind: BoundKind,
    pub value: BoundValue<T>,
    pub alpha: T,
    /// Number of categories `r` in the `alpha / r` correction.
    pub categories: usize,
    pub n: usize,
}

impl<T: Real + fmt::Display> fmt::Display for ErrorBound<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error bound ", self.kind.as_str())?;
        match self.value {
            BoundValue::Finite(v) => write!(f, "{v}")?,
            BoundValue::Unbounded => f.write_str("unbounded")?,
        }
        write!(f, " (alpha = {}, r = {}, n = {})", self.alpha, self.categories, self.n)
    }
}

/// The factor `B`: upper `alpha / r` quantile of chi-square(1).
pub fn b_factor<T: Real>(alpha: T, r: usize) -> Result<T> {
    if !(alpha > T::zero() && alpha < T::one()) || r == 0 {
        return Err(Error::InvalidBoundInput(format!("need alpha in (0, 1) and r >= 1 (alpha = {alpha:?}, r = {r})")));
    }
    chi2_quantile_1df(alpha / T::from_count(r))
}

/// `max_u sqrt(B lambda_u (1 - lambda_u) / n)` with `r` taken from the domain of `lambda`.
pub fn absolute_error_bound<T: Real>(lambda: &DistributionEstimate<T>, n: usize, alpha: T) -> Result<ErrorBound<T>> {
    absolute_error_bound_for_domain(lambda, n, alpha, lambda.len())
}

/// As [`absolute_error_bound`] but with an explicit `r` for the `alpha / r` correction.
pub fn absolute_error_bound_for_domain<T: Real>(
    lambda: &DistributionEstimate<T>,
    n: usize,
    alpha: T,
    r: usize,
) -> Result<ErrorBound<T>> {
    let b = check_and_factor(n, alpha, r)?;
    let nn = T::from_count(n);
    let worst = lambda
        .values()
        .iter()
        .map(|&l| (b * l * (T::one() - l) / nn).max(T::zero()).sqrt())
        .fold(T::zero(), T::max);
    Ok(ErrorBound { kind: BoundKind::Absolute, value: BoundValue::Finite(worst), alpha, categories: r, n })
}

/// `max_u sqrt(B (1 - lambda_u) / (lambda_u n))`; unbounded if any `lambda_u` is zero.
pub fn relative_error_bound<T: Real>(lambda: &DistributionEstimate<T>, n: usize, alpha: T) -> Result<ErrorBound<T>> {
    relative_error_bound_for_domain(lambda, n, alpha, lambda.len())
}

pub fn relative_error_bound_for_domain<T: Real>(
    lambda: &DistributionEstimate<T>,
    n: usize,
    alpha: T,
    r: usize,
) -> Result<ErrorBound<T>> {
    let b = check_and_factor(n, alpha, r)?;
    let nn = T::from_count(n);
    let value = if lambda.values().iter().any(|&l| l <= T::zero()) {
        BoundValue::Unbounded
    } else {
        let worst = lambda
            .values()
            .iter()
            .map(|&l| (b * (T::one() - l) / (l * nn)).max(T::zero()).sqrt())
            .fold(T::zero(), T::max);
        BoundValue::Finite(worst)
    };
    Ok(ErrorBound { kind: BoundKind::Relative, value, alpha, categories: r, n })
}

fn check_and_factor<T: Real>(n: usize, alpha: T, r: usize) -> Result<T> {
    if n == 0 {
        return Err(Error::InvalidBoundInput("sample size must be positive".into()));
    }
    b_factor(alpha, r)
}

/// `(r, sqrt(B))` for each `r`, with `B` the upper `alpha / r` quantile.
pub fn sqrtb_curve<T: Real, I: IntoIterator<Item = usize>>(rs: I, alpha: T) -> Result<Vec<(usize, T)>> {
    rs.into_iter().map(|r| Ok((r, b_factor(alpha, r)?.sqrt()))).collect()
}

/// Roughly `per_decade` logarithmically spaced integers from `lo` to `hi` inclusive.
pub fn log_spaced(lo: usize, hi: usize, per_decade: usize) -> Vec<usize> {
    let lo = lo.max(1);
    if hi < lo {
        return Vec::new();
    }
    let steps = (((hi as f64 / lo as f64).log10() * per_decade.max(1) as f64).ceil() as usize).max(1);
    let ratio = (hi as f64 / lo as f64).powf(1.0 / steps as f64);
    let mut out: Vec<usize> = (0..=steps).map(|k| (lo as f64 * ratio.powi(k as i32)).round() as usize).collect();
    out.push(hi);
    out.dedup();
    out.retain(|&r| r >= lo && r <= hi);
    out.sort_unstable();
    out.dedup();
    out
}

/// Two-column TSV with a header row.
pub fn curve_to_tsv<T: Real + fmt::Display>(curve: &[(usize, T)]) -> String {
    let mut out = String::from("r\tsqrt_b\n");
    for (r, s) in curve {
        let _ = writeln!(out, "{r}\t{s}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rr::Stage;

    fn dist(v: Vec<f64>) -> DistributionEstimate<f64> {
        DistributionEstimate::new(Stage::RawLambda, v).unwrap()
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(0.5f64) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(5.0f64) - 24f64.ln()).abs() < 1e-12);
        assert!(ln_gamma(1.0f64).abs() < 1e-14);
    }

    #[test]
    fn quantile_table_values() {
        assert!((chi2_quantile_1df(0.05f64).unwrap() - 3.8415).abs() < 1e-3);
        assert!((chi2_quantile_1df(0.5f64).unwrap() - 0.4549).abs() < 1e-3);
        assert!((chi2_quantile_1df(0.01f64).unwrap() - 6.6349).abs() < 1e-3);
    }

    #[test]
    fn quantile_in_single_precision() {
        assert!((chi2_quantile_1df(0.05f32).unwrap() - 3.8415).abs() < 1e-3);
    }

    #[test]
    fn quantile_rejects_out_of_range() {
        for q in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(chi2_quantile_1df(q).is_err());
        }
    }

    #[test]
    fn absolute_examples() {
        assert_eq!(absolute_error_bound(&dist(vec![1.0, 0.0]), 7, 0.05).unwrap().value, BoundValue::Finite(0.0));
        let e = absolute_error_bound(&dist(vec![0.5, 0.5]), 10_000, 0.05).unwrap();
        let expected = (chi2_quantile_1df(0.025f64).unwrap() * 0.25 / 1e4).sqrt();
        assert!((e.value.finite().unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.0112).abs() < 1e-4);
        let wide = absolute_error_bound(&dist(vec![0.01; 100]), 1000, 0.05).unwrap();
        let two = absolute_error_bound(&dist(vec![0.5; 2]), 1000, 0.05).unwrap();
        let b100 = b_factor(0.05, 100).unwrap();
        let b2 = b_factor(0.05, 2).unwrap();
        assert!(b100 > b2);
        assert_eq!(wide.categories, 100);
        assert_eq!(two.categories, 2);
    }

    #[test]
    fn relative_examples() {
        assert_eq!(relative_error_bound(&dist(vec![1.0, 0.0]), 10, 0.05).unwrap().value, BoundValue::Unbounded);
        let e = relative_error_bound(&dist(vec![0.9, 0.1]), 10_000, 0.05).unwrap();
        let b = chi2_quantile_1df(0.025f64).unwrap();
        let expected = (b * 0.9 / (0.1 * 1e4)).sqrt();
        assert!((e.value.finite().unwrap() - expected).abs() < 1e-15);
        let big = relative_error_bound(&dist(vec![0.5, 0.5]), usize::MAX / 2, 0.05).unwrap();
        assert!(big.value.finite().unwrap() < 1e-8);
    }

    #[test]
    fn relative_uniform_with_n_equal_r_is_about_sqrt_b() {
        let r = 100_000;
        let e = relative_error_bound(&dist(vec![1.0 / r as f64; r]), r, 0.05).unwrap();
        let sqrt_b = b_factor(0.05f64, r).unwrap().sqrt();
        assert!((e.value.finite().unwrap() / sqrt_b - 1.0).abs() < 1e-4);
    }

    #[test]
    fn explicit_domain_overrides_r() {
        let l = dist(vec![0.5, 0.5]);
        let e = absolute_error_bound_for_domain(&l, 100, 0.05, 1000).unwrap();
        assert_eq!(e.categories, 1000);
        assert!(e.value.finite().unwrap() > absolute_error_bound(&l, 100, 0.05).unwrap().value.finite().unwrap());
    }

    #[test]
    fn curve_examples() {
        let c = sqrtb_curve([1usize, 10, 1_000_000], 0.05f64).unwrap();
        assert!((c[0].1 - 1.96).abs() < 1e-3);
        assert!(c[2].1 > 2.0);
        assert!(c.windows(2).all(|w| w[0].1 <= w[1].1));
        let tsv = curve_to_tsv(&c);
        assert!(tsv.starts_with("r\tsqrt_b\n1\t1.959"));
        assert_eq!(tsv.lines().count(), 4);
    }

    #[test]
    fn log_spacing_covers_endpoints() {
        let rs = log_spaced(1, 1_000_000, 10);
        assert_eq!(rs.first(), Some(&1));
        assert_eq!(rs.last(), Some(&1_000_000));
        assert!(rs.windows(2).all(|w| w[0] < w[1]));
        assert!(rs.len() > 40);
    }
}
