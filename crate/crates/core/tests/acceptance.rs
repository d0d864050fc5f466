//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.
//!
//! `MDRR_ACCEPTANCE_RUNS` overrides the Monte-Carlo run count of the Adult
//! experiments (default 1000) for quick local iterations.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use mdrr::adjustment::{adjust_weights, rr_adjust, target, Convergence, WeightedDataset};
use mdrr::clustering::{cluster_attributes, ClusterPartition};
use mdrr::dataset::{load_csv, AttributeKind, AttributeSchema, Dataset, JointDomain, SchemaSpec};
use mdrr::dependence::{covariance, DependenceMatrix};
use mdrr::error_model::chi2_quantile_1df;
use mdrr::mpc::{secure_sum_count, MessageLog, Party};
use mdrr::pipeline::{
    self, comparison_samples, run_comparison, summarize, CountQuery, ExperimentRow, JointModel, Method, PipelineConfig, Strength,
};
use mdrr::rng::{stream, tag};
use mdrr::rr::{empirical_lambda, epsilon_of, estimate_pi, project_to_simplex, RandomizationMatrix};
use mdrr::Rational;
use rand::Rng;

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, id: &str, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!("{} {id:<4} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn binary(name: &str) -> AttributeSchema {
    AttributeSchema::new(name, vec!["1".into(), "2".into()], AttributeKind::Nominal).unwrap()
}

fn toy() -> Dataset {
    let mut rows = vec![vec![0, 0]; 4];
    rows.extend(vec![vec![1, 0]; 2]);
    rows.extend(vec![vec![1, 1]; 4]);
    Dataset::from_rows(vec![binary("a"), binary("b")], &rows).unwrap()
}

fn example(report: &mut Report) {
    let y = toy();
    let first = JointDomain::of(&y, &[0]).unwrap();
    let second = JointDomain::of(&y, &[1]).unwrap();
    let pair = JointDomain::of(&y, &[0, 1]).unwrap();

    let q = Rational::new;
    let mut exact = WeightedDataset::<Rational>::uniform(y.clone());
    adjust_weights(&mut exact, &first, &target(vec![q(1, 2), q(1, 2)]).unwrap()).unwrap();
    let first_pass = exact.weights()[..4] == [q(1, 8); 4] && exact.weights()[4..] == [q(1, 12); 6];

    let half = target(vec![0.5f64, 0.5]).unwrap();
    let targets = vec![(first.clone(), half.clone()), (second.clone(), half.clone())];
    let out = rr_adjust(&y, &targets, Convergence { max_weight_delta: 1e-12, max_iters: 10_000_000 }).unwrap();
    let joint = out.weighted.weighted_marginal(&pair);
    let converged = joint.iter().zip([0.5, 0.0, 0.0, 0.5]).all(|(g, w)| (g - w).abs() < 1e-6);

    let product = JointModel::Product(vec![(first, vec![0.5, 0.5]), (second, vec![0.5, 0.5])]);
    let cells: Vec<f64> = (0..4)
        .map(|c| pipeline::query_probability(&CountQuery::new(pair.clone(), &[c], 0.25).unwrap(), &product).unwrap())
        .collect();
    let product_exact = cells.iter().all(|&c| c == 0.25);

    report.check(
        "1",
        "toy adjustment",
        first_pass && converged && product_exact,
        format!("first pass exact {first_pass}, adjusted joint {joint:.6?}, product rule {cells:?}"),
    );
}

fn correlated_pair(n: usize, seed: u64) -> (Vec<u32>, Vec<u32>) {
    let mut rng = stream(seed, &[tag::SYNTHETIC]);
    (0..n)
        .map(|_| {
            let x = rng.random_range(0..2u32);
            let y = if rng.random::<f64>() < 0.6 { x } else { rng.random_range(0..2u32) };
            (x, y)
        })
        .unzip()
}

fn cov(xs: &[u32], ys: &[u32]) -> f64 {
    let xs: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = ys.iter().map(|&v| v as f64).collect();
    covariance(&xs, &ys).unwrap()
}

fn attenuation(report: &mut Report) {
    let p = 0.5;
    let matrix = RandomizationMatrix::keep_or_uniform(2, p).unwrap();
    let mut inside = 0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for seed in 0..100u64 {
        let (x1, x2) = correlated_pair(1_000_000, seed);
        let mut rng = stream(seed, &[tag::RANDOMIZE]);
        let y1: Vec<u32> = x1.iter().map(|&v| matrix.sample(v as usize, &mut rng) as u32).collect();
        let y2: Vec<u32> = x2.iter().map(|&v| matrix.sample(v as usize, &mut rng) as u32).collect();
        let ratio = cov(&y1, &y2) / cov(&x1, &x2);
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        if (0.2375..=0.2625).contains(&ratio) {
            inside += 1;
        }
    }
    report.check("2", "covariance attenuation", inside >= 95, format!("{inside}/100 ratios in band, range [{lo:.4}, {hi:.4}]"));
}

fn secure_sum(report: &mut Report) {
    let mut failures = 0;
    for n in 2..=100usize {
        let parties: Vec<Party> = (0..n).map(|i| Party::new(i, vec![0])).collect();
        for trial in 0..100u64 {
            let mut rng = stream(n as u64, &[tag::PARTY, trial]);
            let bits: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let expected = bits.iter().filter(|&&b| b).count() as u64;
            let got = secure_sum_count(&parties, |p| bits[p.id()], &mut rng, &mut MessageLog::counting()).unwrap();
            if got != expected {
                failures += 1;
            }
        }
    }
    report.check("3", "secure sum", failures == 0, format!("{failures} failures over 9900 sessions"));
}

fn calibration(report: &mut Report) {
    let mut worst: f64 = 0.0;
    for r in [2, 6, 30, 1000] {
        for eps in [0.1, 1.0, 3.0, 10.0] {
            let m = RandomizationMatrix::<f64>::cluster_matrix(r, eps).unwrap();
            worst = worst.max((epsilon_of(&m).epsilon().unwrap() - eps).abs());
        }
    }
    report.check("4a", "cluster matrix calibration", worst < 1e-12, format!("max deviation {worst:.2e}"));

    let mut rng = stream(4, &[tag::SYNTHETIC]);
    let mut gap: f64 = 0.0;
    for trial in 0..200 {
        let m = rng.random_range(2..9);
        let sizes: Vec<usize> = (0..m).map(|_| rng.random_range(2..8)).collect();
        let mut clusters = vec![Vec::new(); rng.random_range(1..=m)];
        let k = clusters.len();
        for a in 0..m {
            clusters[rng.random_range(0..k)].push(a);
        }
        clusters.retain(|c| !c.is_empty());
        let partition = ClusterPartition::new(clusters, &sizes).unwrap();
        let strength = if trial % 2 == 0 {
            Strength::KeepProbability(rng.random_range(0.05..0.95))
        } else {
            Strength::Epsilon(rng.random_range(0.05..5.0))
        };
        let columns = sizes.iter().map(|&r| (0..16).map(|i| (i % r) as u32).collect()).collect();
        let schema = sizes
            .iter()
            .enumerate()
            .map(|(j, &r)| AttributeSchema::new(format!("a{j}"), (0..r).map(|v| v.to_string()).collect(), AttributeKind::Nominal).unwrap())
            .collect();
        let data = Dataset::from_columns(schema, columns).unwrap();
        let blocks: f64 = pipeline::estimate_blocks(&data, &partition, strength).unwrap().iter().map(|b| b.epsilon).sum();
        let attributes: f64 = sizes
            .iter()
            .map(|&r| epsilon_of(&strength.attribute_matrix(r).unwrap()).epsilon().unwrap())
            .sum();
        gap = gap.max((blocks - attributes).abs());
    }
    report.check("4b", "budget equivalence", gap < 1e-12, format!("max gap {gap:.2e} over 200 partitions"));
}

fn consistency(report: &mut Report) {
    let pi = [0.1, 0.2, 0.3, 0.4];
    let matrix = RandomizationMatrix::keep_or_uniform(4, 0.7).unwrap();
    let n = 100_000;
    let (mut good, mut residual) = (0, 0.0f64);
    for seed in 0..100u64 {
        let mut rng = stream(seed, &[tag::SYNTHETIC]);
        let responses: Vec<u32> = (0..n)
            .map(|_| {
                let u = rng.random::<f64>();
                let x = pi.iter().scan(0.0, |acc, &p| { *acc += p; Some(*acc) }).position(|c| u < c).unwrap_or(3);
                matrix.sample(x, &mut rng) as u32
            })
            .collect();
        let lambda = empirical_lambda::<f64>(&responses, 4).unwrap();
        let raw = estimate_pi(&lambda, &matrix).unwrap();
        let forward = matrix.forward(raw.values()).unwrap();
        residual = residual.max(forward.iter().zip(lambda.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let projected = project_to_simplex(&raw).unwrap();
        let l1: f64 = projected.values().iter().zip(pi).map(|(a, b)| (a - b).abs()).sum();
        if l1 < 0.02 {
            good += 1;
        }
    }
    report.check("5", "estimator consistency", good >= 95 && residual < 1e-9, format!("{good}/100 with L1 < 0.02, max residual {residual:.2e}"));
}

fn quantiles(report: &mut Report) {
    let table = [(0.05f64, 3.8415f64), (0.025, 5.0239), (0.01, 6.6349), (0.005, 7.8794)];
    let worst = table.iter().map(|&(q, want)| (chi2_quantile_1df(q).unwrap() - want).abs()).fold(0.0, f64::max);
    report.check("6", "chi-square quantiles", worst < 1e-3, format!("max deviation {worst:.2e}"));
}

fn clustering(report: &mut Report) {
    let mut rng = stream(9, &[tag::SYNTHETIC]);
    let mut failures = Vec::new();
    for trial in 0..2000 {
        let m = rng.random_range(2..9);
        let sizes: Vec<usize> = (0..m).map(|_| rng.random_range(2..10)).collect();
        let mut v = vec![vec![1.0; m]; m];
        for i in 0..m {
            for j in i + 1..m {
                let s = rng.random::<f64>() * 0.999;
                v[i][j] = s;
                v[j][i] = s;
            }
        }
        let deps = DependenceMatrix::new((0..m).map(|i| format!("a{i}")).collect(), v).unwrap();
        let tv = rng.random_range(1..500u128);
        let td = rng.random::<f64>();
        let p = cluster_attributes(&deps, &sizes, tv, td).unwrap();
        let mut seen = vec![0; m];
        p.clusters().iter().flatten().for_each(|&a| seen[a] += 1);
        if seen.iter().any(|&c| c != 1) {
            failures.push(format!("trial {trial}: not a partition"));
        }
        for c in p.clusters() {
            let size: u128 = c.iter().map(|&a| sizes[a] as u128).product();
            if c.len() > 1 && size > tv {
                failures.push(format!("trial {trial}: cluster of size {size} over cap {tv}"));
            }
        }
        if cluster_attributes(&deps, &sizes, tv, 1.0).unwrap() != ClusterPartition::singletons(&sizes) {
            failures.push(format!("trial {trial}: T_d = 1 merged"));
        }
    }
    let upper = [0.9, 0.1, 0.05];
    let mut v = vec![vec![1.0; 3]; 3];
    for (k, (i, j)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
        v[i][j] = upper[k];
        v[j][i] = upper[k];
    }
    let deps = DependenceMatrix::new(vec!["a".into(), "b".into(), "c".into()], v).unwrap();
    let traced = cluster_attributes(&deps, &[2, 2, 2], 100, 0.2).unwrap();
    if traced.clusters() != [vec![0, 1], vec![2]] {
        failures.push(format!("hand trace gave {:?}", traced.clusters()));
    }
    let detail = if failures.is_empty() { "2000 random instances and the hand trace".to_string() } else { failures.join("; ") };
    report.check("9", "clustering properties", failures.is_empty(), detail);
}

fn adult() -> Dataset {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/adult.csv");
    load_csv(&path, &SchemaSpec::default()).unwrap().dataset
}

fn config(method: Method, adjust: bool, p: f64, tv: u128, td: f64) -> PipelineConfig {
    PipelineConfig { method, adjust, strength: Strength::KeepProbability(p), tv, td, ..PipelineConfig::default() }
}

fn row<'a>(rows: &'a [ExperimentRow], label: &str, sigma: f64) -> &'a ExperimentRow {
    rows.iter().find(|r| r.method == label && (r.sigma - sigma).abs() < 1e-12).unwrap_or_else(|| panic!("no row {label} at {sigma}"))
}

/// Two-sample Kolmogorov-Smirnov statistic and its asymptotic critical value.
fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> (f64, f64) {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    (d, c * ((n + m) / (n * m)).sqrt())
}

fn experiments(report: &mut Report, runs: usize) {
    let data = adult();
    let sigmas: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();

    let started = Instant::now();
    let indep = config(Method::Independent, false, 0.7, 50, 0.1);
    let configs = vec![
        indep.clone(),
        config(Method::Independent, true, 0.7, 50, 0.1),
        config(Method::Clusters, false, 0.7, 50, 0.1),
        config(Method::Clusters, true, 0.7, 50, 0.1),
        config(Method::Randomized, false, 0.7, 50, 0.1),
    ];
    let samples = comparison_samples(&data, &configs, &sigmas, runs, 2, 7).unwrap();
    let rows = summarize(&configs, &sigmas, &samples);
    let [ind, _, clu, clu_adj, rnd] = [0, 1, 2, 3, 4].map(|i| configs[i].label());

    let band = row(&rows, &clu, 0.1).median_rel;
    report.check("7a", "clusters error band", (0.04..=0.10).contains(&band), format!("median relative error {band:.4} at p=0.7"));

    let losses: Vec<String> = sigmas
        .iter()
        .filter(|&&s| row(&rows, &ind, s).median_rel >= row(&rows, &rnd, s).median_rel)
        .map(|s| format!("{s}"))
        .collect();
    report.check(
        "7b",
        "independent beats randomized",
        losses.is_empty(),
        if losses.is_empty() { "at every coverage".to_string() } else { format!("fails at sigma {}", losses.join(",")) },
    );

    let mut ordering = Vec::new();
    let mut ordered = true;
    for (p, table) in [(0.5, None), (0.7, Some(&rows))] {
        let owned;
        let table = match table {
            Some(t) => t,
            None => {
                let cs = vec![
                    config(Method::Independent, false, p, 50, 0.1),
                    config(Method::Clusters, false, p, 50, 0.1),
                    config(Method::Clusters, true, p, 50, 0.1),
                ];
                owned = run_comparison(&data, &cs, &[0.1], runs, 2, 7).unwrap();
                &owned
            }
        };
        let e = |label: &str| row(table, label, 0.1).median_rel;
        let (a, c, i) = (e(&clu_adj), e(&clu), e(&ind));
        ordered &= a <= c && c <= i;
        ordering.push(format!("p={p}: {a:.4} <= {c:.4} <= {i:.4}"));
    }
    report.check("7c", "adjusted <= clusters <= independent", ordered, ordering.join(", "));

    let low = vec![
        config(Method::Independent, false, 0.1, 50, 0.3),
        config(Method::Independent, true, 0.1, 50, 0.3),
        config(Method::Clusters, false, 0.1, 50, 0.3),
        config(Method::Clusters, true, 0.1, 50, 0.3),
    ];
    let low_rows = run_comparison(&data, &low, &[0.1], runs, 2, 7).unwrap();
    let best = low_rows.iter().map(|r| r.median_rel).fold(f64::INFINITY, f64::min);
    let independent = low_rows[0].median_rel;
    let listing: Vec<String> = low_rows.iter().map(|r| format!("{} {:.4}", r.method, r.median_rel)).collect();
    report.check("7d", "independent best at p=0.1", independent <= best, listing.join(", "));

    // Shapes from the p=0.7 independent grid.
    let abs: Vec<f64> = sigmas.iter().map(|&s| row(&rows, &ind, s).median_abs).collect();
    let rel: Vec<f64> = sigmas.iter().map(|&s| row(&rows, &ind, s).median_rel).collect();
    let peak = sigmas[abs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
    report.check("10a", "absolute error peaks mid-coverage", (0.4..=0.6).contains(&peak), format!("peak at sigma {peak}, medians {abs:.1?}"));
    // Complementary queries have equal absolute error, so the errors at
    // sigma and 1 - sigma should share one distribution.
    let errors = |s: usize| -> Vec<f64> { samples.iter().map(|r| r[0][s].abs_error).collect() };
    let mut symmetric = true;
    let mut pairs = Vec::new();
    for k in 0..4 {
        let (d, critical) = ks_two_sample(&errors(k), &errors(8 - k), 0.01);
        symmetric &= d <= critical;
        let gap = (abs[k] - abs[8 - k]).abs() / abs[k].max(abs[8 - k]);
        pairs.push(format!("{}/{}: D {d:.3} (critical {critical:.3}, median gap {gap:.3})", sigmas[k], sigmas[8 - k]));
    }
    report.check("10b", "absolute error symmetric in coverage", symmetric, pairs.join(", "));
    let decreasing = rel.windows(2).all(|w| w[1] < w[0]);
    report.check("10c", "relative error decreases in coverage", decreasing, format!("medians {rel:.4?}"));
    println!("     Adult experiments at p=0.1, 0.5, 0.7 took {:.1?}", started.elapsed());

    let started = Instant::now();
    let sixfold = data.repeat(6).unwrap();
    let cells = vec![config(Method::Clusters, false, 0.3, 50, 0.1), config(Method::Clusters, false, 0.3, 300, 0.1)];
    let base = run_comparison(&data, &cells, &[0.1], runs, 2, 8).unwrap();
    let grown = run_comparison(&sixfold, &cells, &[0.1], runs, 2, 8).unwrap();
    let reduced = base.iter().zip(&grown).all(|(a, b)| b.median_rel < a.median_rel);
    let listing: Vec<String> = base.iter().zip(&grown).map(|(a, b)| format!("T_v={}: {:.5} -> {:.5}", a.tv, a.median_rel, b.median_rel)).collect();
    report.check("8", "six-fold data lowers error", reduced, listing.join(", "));
    println!("     six-fold comparison took {:.1?}", started.elapsed());
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--nocapture`; a name filter
    // that excludes this target skips it.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return ExitCode::SUCCESS;
    }
    let runs = std::env::var("MDRR_ACCEPTANCE_RUNS").ok().and_then(|v| v.parse().ok()).unwrap_or(1000);
    let mut report = Report { failed: 0 };
    example(&mut report);
    attenuation(&mut report);
    secure_sum(&mut report);
    calibration(&mut report);
    consistency(&mut report);
    quantiles(&mut report);
    clustering(&mut report);
    experiments(&mut report, runs);
    println!("{} criteria failed", report.failed);
    if report.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
