use mdrr::clustering::ClusterPartition;
use mdrr::dataset::{AttributeKind, AttributeSchema, Dataset, JointDomain};
use mdrr::pipeline::{
    self, estimate_count, evaluation, run, run_experiment, run_rr_independent, run_rr_joint, CountQuery, Method,
    PipelineConfig, Strength,
};
use mdrr::rng::{stream, tag};
use proptest::prelude::*;
use rand::Rng;

fn schema(sizes: &[usize]) -> Vec<AttributeSchema> {
    sizes
        .iter()
        .enumerate()
        .map(|(j, &r)| AttributeSchema::new(format!("a{j}"), (0..r).map(|v| v.to_string()).collect(), AttributeKind::Nominal).unwrap())
        .collect()
}

/// Attribute 1 copies attribute 0 often; attribute 2 is independent noise.
fn dependent(n: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, &[tag::SYNTHETIC]);
    let a: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let b: Vec<u32> = a.iter().map(|&x| if rng.random::<f64>() < 0.8 { x } else { rng.random_range(0..3) }).collect();
    let c: Vec<u32> = (0..n).map(|_| rng.random_range(0..2)).collect();
    Dataset::from_columns(schema(&[3, 3, 2]), vec![a, b, c]).unwrap()
}

fn config(method: Method, adjust: bool, p: f64) -> PipelineConfig {
    PipelineConfig { method, adjust, strength: Strength::KeepProbability(p), tv: 9, td: 0.2, seed: 5, ..PipelineConfig::default() }
}

fn all_methods(p: f64) -> Vec<PipelineConfig> {
    vec![
        config(Method::Independent, false, p),
        config(Method::Independent, true, p),
        config(Method::Joint, false, p),
        config(Method::Clusters, false, p),
        config(Method::Clusters, true, p),
        config(Method::Randomized, false, p),
    ]
}

/// Every subset of combinations of every attribute pair.
fn exhaustive_queries(data: &Dataset) -> Vec<CountQuery> {
    let mut out = Vec::new();
    for i in 0..data.m() {
        for j in i + 1..data.m() {
            let domain = JointDomain::of(data, &[i, j]).unwrap();
            for mask in 0u32..(1 << domain.size()) {
                let codes: Vec<usize> = (0..domain.size()).filter(|c| mask >> c & 1 == 1).collect();
                out.push(CountQuery::new(domain.clone(), &codes, codes.len() as f64 / domain.size() as f64).unwrap());
            }
        }
    }
    out
}

#[test]
fn without_randomization_joint_aware_methods_are_exact() {
    let data = dependent(300, 1);
    let queries = exhaustive_queries(&data);
    for c in all_methods(1.0) {
        let (release, model, _) = run(&data, &c).unwrap();
        assert_eq!(release.randomized, data, "{}", c.label());
        let product_rule = !c.adjust && matches!(c.method, Method::Independent | Method::Clusters);
        for q in &queries {
            let truth = evaluation::true_count(&data, q);
            let est = estimate_count(q, &model, data.n()).unwrap();
            // Products of exact marginals only answer queries inside a block.
            let inside_block = release.partition.clusters().iter().any(|cl| q.attributes().iter().all(|a| cl.contains(a)));
            if !product_rule || inside_block {
                assert!((est - truth).abs() < 1e-6, "{} {:?}: {est} vs {truth}", c.label(), q.attributes());
            }
        }
        for a in 0..data.m() {
            let marginal = CountQuery::full(&data, &[a]).unwrap();
            let domain = marginal.domain().clone();
            for code in 0..domain.size() {
                let q = CountQuery::new(domain.clone(), &[code], 1.0).unwrap();
                let est = estimate_count(&q, &model, data.n()).unwrap();
                assert!((est - evaluation::true_count(&data, &q)).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn without_randomization_products_are_exact_on_factorial_data() {
    // Each combination appears equally often, so the joint is a product.
    let rows: Vec<Vec<u32>> = (0..4).flat_map(|_| (0..3).flat_map(|a| (0..2).map(move |b| vec![a, b]))).collect();
    let data = Dataset::from_rows(schema(&[3, 2]), &rows).unwrap();
    let queries = exhaustive_queries(&data);
    for c in all_methods(1.0) {
        let (_, model, _) = run(&data, &c).unwrap();
        for q in &queries {
            let est = estimate_count(q, &model, data.n()).unwrap();
            assert!((est - evaluation::true_count(&data, q)).abs() < 1e-9);
        }
    }
}

#[test]
fn full_domain_counts_equal_n() {
    let data = dependent(2000, 2);
    for p in [0.1, 0.5, 0.9] {
        for c in all_methods(p) {
            let (_, model, _) = run(&data, &c).unwrap();
            for attrs in [vec![0], vec![0, 1], vec![1, 2], vec![0, 1, 2]] {
                let q = CountQuery::full(&data, &attrs).unwrap();
                let total = estimate_count(&q, &model, data.n()).unwrap();
                assert!((total - data.n() as f64).abs() < 1e-6, "{} p={p}", c.label());
            }
        }
    }
}

#[test]
fn complementary_queries_have_equal_absolute_error() {
    let data = dependent(3000, 3);
    let (_, model, _) = run(&data, &config(Method::Independent, false, 0.6)).unwrap();
    let mut rng = stream(4, &[tag::QUERY]);
    for _ in 0..50 {
        let q = CountQuery::random(&data, 2, 0.3, &mut rng).unwrap();
        let rest: Vec<usize> = (0..q.domain().size()).filter(|&c| !q.contains(c)).collect();
        let complement = CountQuery::new(q.domain().clone(), &rest, 0.7).unwrap();
        let e = evaluation::evaluate(&data, &q, &model).unwrap().abs_error;
        let ec = evaluation::evaluate(&data, &complement, &model).unwrap().abs_error;
        assert!((e - ec).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clusters_spend_the_independent_budget(
        sizes in prop::collection::vec(2usize..6, 2..6),
        keys in prop::collection::vec(0usize..3, 6),
        p in 0.05f64..0.95,
    ) {
        let m = sizes.len();
        let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); 3];
        for a in 0..m {
            clusters[keys[a]].push(a);
        }
        clusters.retain(|c| !c.is_empty());
        let columns = sizes.iter().map(|&r| (0..40).map(|i| (i % r) as u32).collect()).collect();
        let data = Dataset::from_columns(schema(&sizes), columns).unwrap();
        let partition = ClusterPartition::new(clusters, &sizes).unwrap();
        let strength = Strength::KeepProbability(p);
        let clustered: f64 = pipeline::estimate_blocks(&data, &partition, strength).unwrap().iter().map(|b| b.epsilon).sum();
        let independent = run_rr_independent(&data, strength, 1).unwrap().epsilon_total();
        prop_assert!((clustered - independent).abs() < 1e-12);
        let per_attribute: f64 = sizes
            .iter()
            .map(|&r| mdrr::rr::epsilon_of(&strength.attribute_matrix(r).unwrap()).epsilon().unwrap())
            .sum();
        prop_assert!((independent - per_attribute).abs() < 1e-12);
    }
}

#[test]
fn td_one_is_independent_randomization() {
    let data = dependent(5000, 6);
    let clusters = PipelineConfig { td: 1.0, ..config(Method::Clusters, false, 0.5) };
    let independent = config(Method::Independent, false, 0.5);
    let a = pipeline::release(&data, &clusters).unwrap();
    let b = pipeline::release(&data, &independent).unwrap();
    assert_eq!(a.partition, ClusterPartition::singletons(&data.sizes()));
    assert_eq!(a.randomized, b.randomized);
    for (x, y) in a.blocks.iter().zip(&b.blocks) {
        assert_eq!(x.projected, y.projected);
    }
}

#[test]
fn dependent_pair_is_clustered() {
    let data = dependent(5000, 7);
    let release = pipeline::release(&data, &config(Method::Clusters, false, 0.7)).unwrap();
    assert_eq!(release.partition.clusters(), [vec![0, 1], vec![2]]);
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn true_joint(data: &Dataset, attrs: &[usize]) -> Vec<f64> {
    let domain = JointDomain::of(data, attrs).unwrap();
    let mut counts = vec![0.0; domain.size()];
    for c in data.joint_codes(&domain) {
        counts[c] += 1.0 / data.n() as f64;
    }
    counts
}

fn model_joint(model: &pipeline::JointModel, data: &Dataset, attrs: &[usize]) -> Vec<f64> {
    let domain = JointDomain::of(data, attrs).unwrap();
    (0..domain.size())
        .map(|c| pipeline::query_probability(&CountQuery::new(domain.clone(), &[c], 0.0).unwrap(), model).unwrap())
        .collect()
}

#[test]
fn independent_attributes_are_recovered_by_the_product_rule() {
    let mut rng = stream(8, &[tag::SYNTHETIC]);
    let n = 100_000;
    let columns = vec![(0..n).map(|_| rng.random_range(0..3)).collect(), (0..n).map(|_| (rng.random::<f64>() < 0.3) as u32).collect()];
    let data = Dataset::from_columns(schema(&[3, 2]), columns).unwrap();
    let (_, model, _) = run(&data, &config(Method::Independent, false, 0.7)).unwrap();
    assert!(l1(&model_joint(&model, &data, &[0, 1]), &true_joint(&data, &[0, 1])) < 0.03);
}

#[test]
fn joint_randomization_recovers_a_binary_pair() {
    let mut rng = stream(9, &[tag::SYNTHETIC]);
    let n = 100_000;
    let a: Vec<u32> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let b: Vec<u32> = a.iter().map(|&x| if rng.random::<f64>() < 0.9 { x } else { 1 - x }).collect();
    let data = Dataset::from_columns(schema(&[2, 2]), vec![a, b]).unwrap();
    let release = run_rr_joint(&data, &[0, 1], Strength::KeepProbability(0.7), 100, 3).unwrap();
    assert!(l1(release.blocks[0].projected.values(), &true_joint(&data, &[0, 1])) < 0.02);

    // The product rule misses the dependence by a wide margin.
    let (_, independent, _) = run(&data, &config(Method::Independent, false, 0.7)).unwrap();
    assert!(l1(&model_joint(&independent, &data, &[0, 1]), &true_joint(&data, &[0, 1])) > 0.5);
}

#[test]
fn experiments_are_reproducible() {
    let data = dependent(1500, 10);
    let c = PipelineConfig { seed: 77, ..config(Method::Clusters, true, 0.6) };
    let a = run_experiment(&data, &c, &[0.2, 0.5], 12).unwrap();
    let b = run_experiment(&data, &c, &[0.2, 0.5], 12).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
    assert!(a.iter().all(|r| r.runs == 12 && r.median_abs.is_finite()));
}

#[test]
fn oversized_joint_domains_are_refused() {
    let data = dependent(100, 11);
    assert!(run_rr_joint(&data, &[0, 1, 2], Strength::KeepProbability(0.5), 10, 1).is_err());
    let small_n = dependent(5, 12);
    let release = run_rr_joint(&small_n, &[0, 1, 2], Strength::KeepProbability(0.5), 100, 1).unwrap();
    assert!(!release.warnings.is_empty());
}
