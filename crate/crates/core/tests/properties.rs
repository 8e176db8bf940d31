mod common;

use ndarray::{array, s, Array2, Axis};
use proptest::prelude::*;
use rand::Rng;

use common::*;
use senmfk::matrices::{build_cooccurrence, build_tfidf, sppmi, SemanticConfig};
use senmfk::nmf::{nmf, perturb, perturb_symmetric, relative_error, solve_h, NmfConfig};
use senmfk::selection::{cluster_columns, silhouette};
use senmfk::split::assign_documents;
use senmfk::SparseMatrix;

fn sparse(a: &Array2<f64>) -> SparseMatrix {
    SparseMatrix::from_dense(a.view()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn tfidf_columns_are_unit(seed in any::<u64>()) {
        let (docs, terms) = random_docs(&mut rng(seed), 50, 15, 30);
        let x = build_tfidf(&to_corpus(&docs), &to_vocab(&docs, &terms)).unwrap().to_dense();
        for col in x.columns() {
            prop_assert!((col.dot(&col).sqrt() - 1.0).abs() < 1e-12);
            prop_assert!(col.iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn cooccurrence_matches_double_loop(seed in any::<u64>(), window in 1usize..40) {
        let (docs, terms) = random_docs(&mut rng(seed), 50, 15, 30);
        let cfg = SemanticConfig { window, shift: 1.0 };
        let c = build_cooccurrence(&to_corpus(&docs), &to_vocab(&docs, &terms), &cfg).unwrap().to_dense();
        let oracle = oracle_cooccurrence(&docs, &terms, window);
        for ((i, j), v) in c.indexed_iter() {
            prop_assert_eq!(*v, oracle[i][j] as f64);
        }
    }

    #[test]
    fn sppmi_is_symmetric_and_monotone_in_shift(seed in any::<u64>()) {
        let (docs, terms) = random_docs(&mut rng(seed), 30, 12, 30);
        let c = build_cooccurrence(&to_corpus(&docs), &to_vocab(&docs, &terms), &SemanticConfig::default()).unwrap();
        prop_assume!(c.nnz() > 0);
        let mut previous: Option<Array2<f64>> = None;
        for shift in [1.0, 1.5, 2.0, 4.0, 8.0] {
            let m = sppmi(&c, shift).unwrap().to_dense();
            prop_assert_eq!(&m, &m.t().to_owned());
            if let Some(p) = &previous {
                prop_assert!(m.iter().zip(p).all(|(a, b)| a <= b));
            }
            previous = Some(m);
        }
    }

    #[test]
    fn perturbation_stays_in_band(seed in any::<u64>(), delta in 0.0f64..0.5) {
        let mut r = rng(seed);
        let x = random_nonneg(&mut r, 12, 9, 0.4);
        let p = perturb(&sparse(&x), delta, seed).unwrap().to_dense();
        for (a, b) in p.iter().zip(&x) {
            prop_assert!(*a >= b * (1.0 - delta) - 1e-15 && *a <= b * (1.0 + delta) + 1e-15);
            prop_assert_eq!(*b == 0.0, *a == 0.0);
        }
        let square = x.slice(s![..9, ..9]);
        let sym = &square + &square.t();
        let q = perturb_symmetric(&sparse(&sym), delta, seed).unwrap().to_dense();
        prop_assert_eq!(&q, &q.t().to_owned());
    }

    #[test]
    fn silhouette_of_identical_copies_is_one(seed in any::<u64>(), k in 2usize..6, copies in 2usize..5) {
        let mut r = rng(seed);
        let basis = disjoint_basis(&mut r, 3 * k, k);
        let sets = vec![basis.clone(); copies];
        let clusters = cluster_columns(&sets).unwrap();
        let points = ndarray::concatenate(Axis(1), &sets.iter().map(|a| a.view()).collect::<Vec<_>>()).unwrap();
        let labels: Vec<usize> = clusters.labels.concat();
        let sil = silhouette(points.view(), &labels).unwrap();
        prop_assert!((sil.overall_min - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clustering_ignores_column_order(seed in any::<u64>(), k in 2usize..7) {
        let mut r = rng(seed);
        let basis = disjoint_basis(&mut r, 4 * k, k);
        let noisy = |r: &mut rand_chacha::ChaCha8Rng| basis.mapv(|v| v * (1.0 + 0.02 * r.random_range(-1.0..1.0)));
        let sets: Vec<Array2<f64>> = (0..4).map(|_| noisy(&mut r)).collect();
        let shuffled: Vec<(Array2<f64>, Vec<usize>)> = sets
            .iter()
            .map(|a| {
                let mut perm: Vec<usize> = (0..k).collect();
                rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
                (a.select(Axis(1), &perm), perm)
            })
            .collect();
        let plain = cluster_columns(&sets).unwrap();
        let permuted = cluster_columns(&shuffled.iter().map(|(a, _)| a.clone()).collect::<Vec<_>>()).unwrap();
        // Every cluster of the shuffled run holds the same original columns.
        for (set, (_, perm)) in shuffled.iter().enumerate() {
            for (col, &original) in perm.iter().enumerate() {
                let anchor_plain = plain.labels[set][original];
                let anchor_shuffled = permuted.labels[set][col];
                let members_plain: Vec<usize> = (0..4).map(|s| plain.labels[s].iter().position(|&l| l == anchor_plain).unwrap()).collect();
                let members_shuffled: Vec<usize> = (0..4)
                    .map(|s| shuffled[s].1[permuted.labels[s].iter().position(|&l| l == anchor_shuffled).unwrap()])
                    .collect();
                prop_assert_eq!(members_plain, members_shuffled);
            }
        }
    }

    #[test]
    fn assignments_survive_positive_scaling(seed in any::<u64>(), c in 0.01f64..100.0) {
        let h = random_nonneg(&mut rng(seed), 5, 20, 0.7);
        prop_assert_eq!(assign_documents(h.view()).topics, assign_documents((&h * c).view()).topics);
        let a = assign_documents(h.view());
        prop_assert_eq!(a.histogram.iter().sum::<usize>(), 20);
    }
}

#[test]
fn nmf_is_deterministic_per_seed() {
    let x = sparse(&random_nonneg(&mut rng(1), 30, 20, 0.5));
    let cfg = NmfConfig::default().with_seed(9);
    let a = nmf(&x, 4, &cfg).unwrap();
    let b = nmf(&x, 4, &cfg).unwrap();
    assert_eq!(a, b);
    let c = nmf(&x, 4, &cfg.with_seed(10)).unwrap();
    assert_ne!(a.w, c.w);
}

#[test]
fn nmf_is_scale_equivariant() {
    let x = random_nonneg(&mut rng(2), 25, 18, 0.6);
    let cfg = NmfConfig::default().with_seed(3);
    let a = nmf(&sparse(&x), 3, &cfg).unwrap();
    let b = nmf(&sparse(&(&x * 50.0)), 3, &cfg).unwrap();
    let pa = a.w.dot(&a.h) * 50.0;
    let pb = b.w.dot(&b.h);
    let diff = (&pa - &pb).iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(
        diff < 1e-6 * pb.iter().copied().fold(0.0, f64::max),
        "diff {diff}"
    );
    assert!((a.relative_error() - b.relative_error()).abs() < 1e-9);
}

#[test]
fn mu_trace_never_rises() {
    for seed in 0..10 {
        let x = sparse(&random_nonneg(&mut rng(seed), 40, 30, 0.5));
        let f = nmf(&x, 5, &NmfConfig::default().with_seed(seed)).unwrap();
        assert_eq!(f.trace[0].iteration, 0);
        for p in f.trace.windows(2) {
            assert!(p[1].relative_error <= p[0].relative_error + 1e-9);
        }
    }
}

#[test]
fn solve_h_matches_projected_gradient_on_exact_data() {
    let w = array![
        [1.0, 0.0, 0.5],
        [0.2, 1.0, 0.0],
        [0.0, 0.3, 1.0],
        [1.0, 1.0, 1.0],
        [0.5, 0.0, 0.2]
    ];
    let h_true = array![
        [1.0, 0.5, 2.0, 0.3],
        [0.2, 1.5, 0.7, 1.0],
        [0.9, 0.4, 0.1, 2.0]
    ];
    let x = w.dot(&h_true);
    let h = solve_h(&sparse(&x), w.view(), &NmfConfig::default()).unwrap();
    let err = relative_error(&sparse(&x), w.view(), h.view()).unwrap();
    assert!(err < 1e-6, "relative error {err}");
    let oracle = oracle_nnls(x.view(), w.view(), 20_000);
    let gap = (&h - &oracle).iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(gap < 1e-4, "gap {gap}");
}

#[test]
fn relative_error_against_dense_oracle() {
    let mut r = rng(5);
    for _ in 0..20 {
        let x = random_nonneg(&mut r, 15, 12, 0.3);
        let w = random_nonneg(&mut r, 15, 3, 1.0);
        let h = random_nonneg(&mut r, 3, 12, 1.0);
        let dense = (objective(x.view(), w.view(), h.view())
            / objective(x.view(), (w.clone() * 0.0).view(), h.view()))
        .sqrt();
        let got = relative_error(&sparse(&x), w.view(), h.view()).unwrap();
        assert!((got - dense).abs() < 1e-10, "{got} vs {dense}");
    }
}
