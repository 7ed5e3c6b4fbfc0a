#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use syscd::dataset::{
    compute_stats, generate_synthetic_dense, generate_synthetic_sparse, load_libsvm, read_libsvm, write_libsvm,
    ColumnMatrix, DatasetStats, LabeledDataset, Orientation, StorageKind,
};
use syscd::partitioning::{RngStream, StreamPurpose};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/small.libsvm");

/// Independent reading of the fixture: split on whitespace and colons into a
/// dense example-major table.
fn naive_parse(text: &str) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        labels.push(parts.next().unwrap().parse::<f64>().unwrap());
        let mut row = vec![0.0; 7];
        for p in parts {
            let mut kv = p.split(':');
            let k: usize = kv.next().unwrap().parse().unwrap();
            let v: f64 = kv.next().unwrap().parse().unwrap();
            row[k - 1] = v;
        }
        rows.push(row);
    }
    (labels, rows)
}

#[test]
fn fixture_matches_naive_parser() {
    let text = std::fs::read_to_string(FIXTURE).unwrap();
    let (labels, rows) = naive_parse(&text);
    let d = load_libsvm(FIXTURE, None, Orientation::CoordinatesAreFeatures).unwrap();
    assert_eq!(d.labels, labels);
    assert_eq!(d.matrix.n_rows(), 20);
    assert_eq!(d.matrix.n_cols(), 7);
    let dense = d.matrix.to_dense_values();
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert_eq!(dense[j * 20 + i], v, "entry ({i}, {j})");
        }
    }
}

#[test]
fn fixture_in_example_orientation_is_transposed() {
    let a = load_libsvm(FIXTURE, None, Orientation::CoordinatesAreFeatures).unwrap();
    let b = load_libsvm(FIXTURE, None, Orientation::CoordinatesAreExamples).unwrap();
    assert_eq!(b.matrix.n_rows(), 7);
    assert_eq!(b.matrix.n_cols(), 20);
    let (da, db) = (a.matrix.to_dense_values(), b.matrix.to_dense_values());
    for i in 0..20 {
        for j in 0..7 {
            assert_eq!(da[j * 20 + i], db[i * 7 + j]);
        }
    }
}

#[test]
fn missing_file_is_io_error() {
    let err = load_libsvm("/nonexistent/file.libsvm", None, Orientation::default()).unwrap_err();
    assert!(matches!(err, syscd::Error::Io { .. }));
}

#[test]
fn sparse_nnz_matches_bernoulli_replay() {
    let (examples, features, density, seed) = (1000, 50, 0.1, 17);
    let d = generate_synthetic_sparse(examples, features, density, seed).unwrap();
    let mut rng = RngStream::for_purpose(seed, StreamPurpose::Data, 0, 0, 0);
    let mut nnz = 0;
    for _ in 0..features * examples {
        if rng.gen::<f64>() < density {
            nnz += 1;
            let _value: f64 = rng.gen();
        }
    }
    assert_eq!(d.matrix.nnz(), nnz);
    assert_eq!(d.matrix.storage_kind(), StorageKind::Sparse);
}

#[test]
fn fig1_shape_dense_generator() {
    let d = generate_synthetic_dense(100_000, 100, 1).unwrap();
    assert_eq!((d.matrix.n_rows(), d.matrix.n_cols()), (100_000, 100));
    assert!(d.labels.iter().all(|&y| y == 1.0 || y == -1.0));
    let values = d.matrix.to_dense_values();
    assert!(values.iter().all(|&v| (0.0..1.0).contains(&v)));
}

#[test]
fn one_percent_sparse_nnz_within_three_sigma() {
    let d = generate_synthetic_sparse(100_000, 1000, 0.01, 5).unwrap();
    let trials = 1e8;
    let mean = trials * 0.01;
    let sigma = (trials * 0.01 * 0.99f64).sqrt();
    let nnz = d.matrix.nnz() as f64;
    assert!(
        (nnz - mean).abs() <= 3.0 * sigma,
        "nnz {nnz}, expected {mean} +- {sigma}"
    );
}

/// Largest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_max_eigenvalue(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).fold(f64::MIN, f64::max)
}

#[test]
fn c_a_matches_jacobi_eigenvalue() {
    for seed in [1, 2, 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let m = ColumnMatrix::from_rows(&rows).unwrap();
        let ata: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| (0..5).map(|r| rows[r][i] * rows[r][j]).sum()).collect())
            .collect();
        let oracle = jacobi_max_eigenvalue(ata);
        let stats = compute_stats(&m, 10_000, 1e-15).unwrap();
        assert!(
            (stats.c_a - oracle).abs() <= 1e-8 * oracle,
            "seed {seed}: {} vs {oracle}",
            stats.c_a
        );
    }
}

#[test]
fn c_a_dominates_probes() {
    let sets = [
        generate_synthetic_dense(200, 30, 1).unwrap(),
        generate_synthetic_sparse(300, 40, 0.1, 2).unwrap(),
        generate_synthetic_dense(20, 60, 3).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for d in &sets {
        let stats = DatasetStats::from_matrix(&d.matrix).unwrap();
        assert!(stats.c_a >= 0.0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..d.matrix.n_cols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ax = d.matrix.matvec(&x).unwrap();
            let ratio = ax.iter().map(|a| a * a).sum::<f64>() / x.iter().map(|a| a * a).sum::<f64>();
            assert!(ratio <= stats.c_a * (1.0 + 1e-6), "{ratio} > {}", stats.c_a);
        }
    }
}

#[test]
fn column_norms_match_scalar_loop_exactly() {
    let d = generate_synthetic_sparse(200, 25, 0.3, 8).unwrap();
    let stats = DatasetStats::from_matrix(&d.matrix).unwrap();
    let dense = d.matrix.to_dense_values();
    for j in 0..25 {
        let mut s = 0.0;
        for i in 0..200 {
            let v = dense[j * 200 + i];
            if v != 0.0 {
                s += v * v;
            }
        }
        assert_eq!(stats.column_sq_norms[j], s);
    }
    let d = generate_synthetic_dense(50, 5, 8).unwrap();
    let stats = DatasetStats::from_matrix(&d.matrix).unwrap();
    let dense = d.matrix.to_dense_values();
    for j in 0..5 {
        let mut s = 0.0;
        for i in 0..50 {
            s += dense[j * 50 + i] * dense[j * 50 + i];
        }
        assert_eq!(stats.column_sq_norms[j], s);
    }
}

fn sparse_dataset() -> impl Strategy<Value = LabeledDataset> {
    (1usize..12, 1usize..8).prop_flat_map(|(rows, cols)| {
        let entry = prop::option::weighted(0.4, -1e6f64..1e6).prop_filter("nonzero", |v| *v != Some(0.0));
        (
            prop::collection::vec(prop::collection::vec(entry, rows), cols),
            prop::collection::vec(prop::bool::ANY, rows),
        )
            .prop_map(move |(cells, labels)| {
                let columns = cells
                    .into_iter()
                    .map(|c| {
                        c.into_iter()
                            .enumerate()
                            .filter_map(|(i, v)| v.map(|v| (i, v)))
                            .collect()
                    })
                    .collect();
                let labels = labels.into_iter().map(|b| if b { 1.0 } else { -1.0 }).collect();
                LabeledDataset::new(ColumnMatrix::from_sparse_columns(rows, columns).unwrap(), labels).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn libsvm_round_trip(d in sparse_dataset()) {
        let mut text = Vec::new();
        write_libsvm(&d, &mut text).unwrap();
        let back = read_libsvm(&text[..], Some(d.matrix.n_cols()), Orientation::CoordinatesAreFeatures).unwrap();
        prop_assert_eq!(&back.labels, &d.labels);
        prop_assert_eq!(back.matrix.n_rows(), d.matrix.n_rows());
        prop_assert_eq!(back.matrix.n_cols(), d.matrix.n_cols());
        prop_assert_eq!(back.matrix.to_dense_values(), d.matrix.to_dense_values());
    }

    #[test]
    fn generators_are_pure(rows in 1usize..30, cols in 1usize..10, seed in any::<u64>(), density in 0.01f64..=1.0) {
        prop_assert_eq!(
            generate_synthetic_dense(rows, cols, seed).unwrap().matrix.to_dense_values(),
            generate_synthetic_dense(rows, cols, seed).unwrap().matrix.to_dense_values()
        );
        let a = generate_synthetic_sparse(rows, cols, density, seed).unwrap();
        let b = generate_synthetic_sparse(rows, cols, density, seed).unwrap();
        prop_assert_eq!(a.labels, b.labels);
        prop_assert_eq!(a.matrix.to_dense_values(), b.matrix.to_dense_values());
    }
}
