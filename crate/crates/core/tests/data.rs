use std::collections::HashSet;

use bmme_core::data;
use bmme_core::matcomp::ObservedMatrix;
use bmme_core::{matrix, Error, Matrix};
use ndarray::Array2;
use proptest::prelude::*;

fn dense() -> impl Strategy<Value = Matrix> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
        proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO, r * c)
            .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

fn sparse() -> impl Strategy<Value = ObservedMatrix> {
    (1usize..8, 1usize..8).prop_flat_map(|(r, c)| {
        proptest::collection::btree_map((0..r, 0..c), -1e6..1e6f64, 0..(r * c))
            .prop_map(move |m| ObservedMatrix::new(r, c, m.into_iter().map(|((i, j), v)| (i, j, v)).collect()).unwrap())
    })
}

proptest! {
    #[test]
    fn dense_csv_round_trips_exactly(m in dense()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        data::save_dense_csv(&path, &m).unwrap();
        prop_assert_eq!(data::load_dense_csv(&path).unwrap(), m);
    }

    #[test]
    fn matrix_market_round_trips_exactly(m in sparse()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtx");
        data::save_matrix_market(&path, &m).unwrap();
        prop_assert_eq!(data::load_matrix_market(&path).unwrap(), m);
    }

    #[test]
    fn split_is_a_partition(m in sparse(), frac in 0.05..0.95f64, seed in 0u64..1000) {
        prop_assume!(!m.is_empty());
        let (train, test) = data::train_test_split(&m, frac, seed).unwrap();
        prop_assert_eq!(train.len(), (frac * m.len() as f64).round() as usize);
        prop_assert_eq!(train.len() + test.len(), m.len());
        let a: HashSet<_> = train.entries().iter().map(|e| (e.0, e.1)).collect();
        let b: HashSet<_> = test.entries().iter().map(|e| (e.0, e.1)).collect();
        prop_assert!(a.is_disjoint(&b));
        let all: HashSet<_> = m.entries().iter().map(|e| (e.0, e.1, e.2.to_bits())).collect();
        let union: HashSet<_> = train.entries().iter().chain(test.entries()).map(|e| (e.0, e.1, e.2.to_bits())).collect();
        prop_assert_eq!(all, union);
    }

    #[test]
    fn synthetic_generator_invariants(m in 3usize..15, n in 10usize..40, r in 1usize..4, seed in 0u64..500) {
        prop_assume!(r <= m.min(n));
        let s = data::gen_synthetic_onmf(m, n, r, 0.05, seed).unwrap();
        prop_assert_eq!(s.x.dim(), (m, n));
        prop_assert!(matrix::all_nonnegative(&s.x));
        prop_assert_eq!(s.labels.len(), n);
        let gram = s.v_true.dot(&s.v_true.t());
        for i in 0..r {
            for j in 0..r {
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[[i, j]] - expect).abs() < 1e-12);
            }
        }
        for (j, col) in s.v_true.columns().into_iter().enumerate() {
            prop_assert_eq!(col.iter().filter(|&&x| x != 0.0).count(), 1);
            prop_assert!(col[s.labels[j]] > 0.0);
        }
    }

    #[test]
    fn low_rank_ratings_are_deterministic(seed in 0u64..200) {
        let a = data::gen_low_rank_ratings(10, 12, 2, 0.3, seed).unwrap();
        prop_assert_eq!(a.len(), 36);
        prop_assert_eq!(a, data::gen_low_rank_ratings(10, 12, 2, 0.3, seed).unwrap());
    }
}

#[test]
fn ratings_file_with_id_map() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ratings.dat");
    std::fs::write(&path, "u7::m1::4\nu3::m1::2::123\nu7::m9::5\n").unwrap();
    let r = data::load_ratings(&path).unwrap();
    assert_eq!(r.user_ids, vec!["u7", "u3"]);
    assert_eq!(r.item_ids, vec!["m1", "m9"]);
    assert_eq!(r.matrix.entries(), &[(0, 0, 4.0), (1, 0, 2.0), (0, 1, 5.0)]);
    assert_eq!(r.id_map_string(), "user\t0\tu7\nuser\t1\tu3\nitem\t0\tm1\nitem\t1\tm9\n");
}

#[test]
fn loader_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let bad_csv = dir.path().join("bad.csv");
    std::fs::write(&bad_csv, "1,2,3\n4,5,6\n7,x,9\n").unwrap();
    assert!(matches!(data::load_dense_csv(&bad_csv), Err(Error::Parse { line: 3, .. })));

    let bad_header = dir.path().join("bad.mtx");
    std::fs::write(&bad_header, "%%MatrixMarket matrix array real general\n1 1\n1.0\n").unwrap();
    assert!(matches!(data::load_matrix_market(&bad_header), Err(Error::Parse { line: 1, .. })));

    let short = dir.path().join("short.mtx");
    std::fs::write(&short, "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n").unwrap();
    assert!(matches!(data::load_matrix_market(&short), Err(Error::Parse { .. })));

    let bad_ratings = dir.path().join("bad.tsv");
    std::fs::write(&bad_ratings, "1\t2\n").unwrap();
    assert!(matches!(data::load_ratings(&bad_ratings), Err(Error::Parse { line: 1, .. })));

    assert!(matches!(data::load_dense_csv(&dir.path().join("missing.csv")), Err(Error::Io(_))));
}

#[test]
fn generator_argument_errors() {
    assert!(data::gen_synthetic_onmf(5, 5, 0, 0.0, 1).is_err());
    assert!(data::gen_synthetic_onmf(5, 5, 2, -0.1, 1).is_err());
    assert!(data::gen_low_rank_ratings(5, 5, 2, 0.0, 1).is_err());
    let obs = ObservedMatrix::new(2, 2, vec![(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
    assert!(data::train_test_split(&obs, 0.0, 1).is_err());
}
