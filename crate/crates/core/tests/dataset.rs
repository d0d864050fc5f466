use std::io::Write;

use mdrr::dataset::{bins_from_edges, discretize, load_csv, read_csv, JointDomain, SchemaSpec};
use proptest::prelude::*;

#[test]
fn joint_codes_enumerate_exhaustively() {
    for radices in [vec![2, 3], vec![4, 5, 6], vec![10, 10, 10, 10], vec![7, 1, 13]] {
        let domain = JointDomain::new((0..radices.len()).collect(), radices).unwrap();
        let mut seen = vec![false; domain.size()];
        for code in 0..domain.size() {
            let tuple = domain.decode(code).unwrap();
            assert_eq!(domain.encode(&tuple).unwrap(), code);
            seen[code] = true;
        }
        assert!(seen.into_iter().all(|s| s));
    }
}

#[test]
fn mixed_radix_examples() {
    let d = JointDomain::new(vec![0, 1], vec![2, 3]).unwrap();
    assert_eq!(d.encode(&[1, 2]).unwrap(), 5);
    assert_eq!(d.encode(&[0, 0]).unwrap(), 0);
    assert!(d.encode(&[2, 0]).is_err());
}

proptest! {
    #[test]
    fn discretize_uses_half_open_bins(edges in prop::collection::btree_set(-1000i32..1000, 2..8), x in -1000.0f64..1000.0) {
        let edges: Vec<f64> = edges.into_iter().map(f64::from).collect();
        let bins = bins_from_edges(&edges).unwrap();
        let inside = x >= edges[0] && x < *edges.last().unwrap();
        match discretize(&[x], &bins) {
            Ok(idx) => {
                prop_assert!(inside);
                let k = idx[0] as usize;
                prop_assert!(edges[k] <= x && x < edges[k + 1]);
            }
            Err(_) => prop_assert!(!inside),
        }
    }
}

#[test]
fn csv_loading_is_deterministic_and_sorted() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write!(file, "colour,size\nred,2\nblue,10\n\"green\",2\nred,\n").unwrap();
    let spec = SchemaSpec::parse("column.colour = nominal\ncolumn.size = ordinal\n").unwrap();
    let a = load_csv(file.path(), &spec).unwrap();
    let b = load_csv(file.path(), &spec).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.report.rows_dropped, 1);
    assert_eq!(a.dataset.n(), 3);
    assert_eq!(a.dataset.attribute(0).categories(), ["blue", "green", "red"]);
    // Ordinal categories follow numeric order, not string order.
    assert_eq!(a.dataset.attribute(1).categories(), ["2", "10"]);
    assert_eq!(a.dataset.column(0), [2, 0, 1]);
}

#[test]
fn ragged_rows_are_rejected() {
    let err = read_csv("a,b\n1,2\n3\n".as_bytes(), &SchemaSpec::default());
    assert!(err.is_err());
}

#[test]
fn adult_schema_sizes() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/adult.csv");
    let ingested = load_csv(&path, &SchemaSpec::default()).unwrap();
    let sizes: Vec<(String, usize)> = ingested
        .dataset
        .schema()
        .iter()
        .map(|a| (a.name().to_string(), a.size()))
        .collect();
    let expected = [
        ("workclass", 9),
        ("education", 16),
        ("marital-status", 7),
        ("occupation", 15),
        ("relationship", 6),
        ("race", 5),
        ("sex", 2),
        ("income", 2),
    ];
    assert_eq!(sizes.len(), expected.len());
    for ((name, size), (en, es)) in sizes.iter().zip(expected) {
        assert_eq!((name.as_str(), *size), (en, es));
    }
    assert!(ingested.dataset.n() > 32_500);
}
