use std::collections::BTreeMap;
use std::sync::Arc;

use ctembed::eval::{f1_macro, knn_classify, SplitSpec};
use ctembed::graph::{giant_component, load_edge_list, transition_matrix, EdgeListOptions, LabeledGraph};
use ctembed::green::{commute_time, deflate_stationary, schultz_green};
use ctembed::linalg::LinearOperator;
use ctembed::multiscale::{
    build_chain, epsilon_span_residual, lift_operator, truncated_svd, ChainConfig, Truncation,
};
use ctembed::sgd::{
    negative_distribution, reintroduce_residual, scaled_dot, train, PairSampler, PairSource, ResidualPool, ScalingDiag,
    TrainConfig,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(seed: u64, n: usize, connected: bool) -> LabeledGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    if connected {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for k in 1..n {
            edges.push((order[k], order[rng.gen_range(0..k)], rng.gen_range(0.5..2.0)));
        }
        edges.push((order[0], order[1], 1.0));
        if n >= 3 {
            edges.push((order[1], order[2], 1.0));
            edges.push((order[0], order[2], 1.0));
        }
    }
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.gen_bool(0.15) {
                edges.push((a, b, rng.gen_range(0.5..2.0)));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1, 1.0));
    }
    LabeledGraph::from_edges(n, edges, None).unwrap()
}

fn dense_walk(g: &LabeledGraph) -> DMatrix<f64> {
    transition_matrix(g).unwrap().0.to_dense()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transition_rows_sum_to_one(seed in any::<u64>(), n in 2usize..40) {
        let g = giant_component(&random_graph(seed, n, false)).unwrap();
        let (t, _) = transition_matrix(&g).unwrap();
        for (r, s) in t.row_sums().iter().enumerate() {
            prop_assert!((s - 1.0).abs() <= 1e-12, "row {r} sums to {s}");
        }
    }

    #[test]
    fn edge_orientation_does_not_matter(seed in any::<u64>(), n in 2usize..25) {
        let g = random_graph(seed, n, false);
        let forward: String = g.edges().iter().map(|e| format!("v{} v{} {}\n", e.i, e.j, e.w)).collect();
        let reversed: String = g.edges().iter().map(|e| format!("v{} v{} {}\n", e.j, e.i, e.w)).collect();
        let a = load_edge_list(forward.as_bytes(), &EdgeListOptions::default()).unwrap();
        let b = load_edge_list(reversed.as_bytes(), &EdgeListOptions::default()).unwrap();
        let adjacency = |h: &LabeledGraph| -> BTreeMap<(String, String), f64> {
            h.edges()
                .iter()
                .map(|e| {
                    let (x, y) = (h.id(e.i).to_string(), h.id(e.j).to_string());
                    ((x.clone().min(y.clone()), x.max(y)), e.w)
                })
                .collect()
        };
        prop_assert_eq!(adjacency(&a), adjacency(&b));
    }

    #[test]
    fn stationary_distribution_is_fixed(seed in any::<u64>(), n in 3usize..40) {
        let g = random_graph(seed, n, true);
        let (t, deg) = transition_matrix(&g).unwrap();
        let moved = t.left_mul_vec(&deg.stationary);
        for (a, b) in moved.iter().zip(&deg.stationary) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn giant_component_is_idempotent(seed in any::<u64>(), n in 2usize..40) {
        let g = random_graph(seed, n, false);
        let once = giant_component(&g).unwrap();
        let twice = giant_component(&once).unwrap();
        prop_assert_eq!(once.ids(), twice.ids());
        prop_assert_eq!(once.edges(), twice.edges());
    }

    #[test]
    fn columns_lie_near_the_truncated_span(seed in any::<u64>(), rows in 2usize..30, cols in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = rng.gen_range(1..=rows.min(cols));
        let m = DMatrix::from_fn(rows, rank, |_, _| rng.gen_range(-1.0..1.0))
            * DMatrix::from_fn(rank, cols, |_, _| rng.gen_range(-1.0..1.0));
        let j = rng.gen_range(1..=rows.min(cols));
        let svd = truncated_svd(&m, &Truncation::RetainCount(j), seed).unwrap();
        for c in 0..cols {
            let col: DVector<f64> = m.column(c).into_owned();
            prop_assert!(epsilon_span_residual(&svd.u, &col).unwrap() <= svd.residual + 1e-10);
        }
    }

    #[test]
    fn untruncated_chain_reproduces_dyadic_powers(seed in any::<u64>(), n in 3usize..50, levels in 1usize..4) {
        let g = random_graph(seed, n, true);
        let t = dense_walk(&g);
        let cfg = ChainConfig::svd(Truncation::RetainFraction(1.0), levels).unwrap();
        let (chain, ops) = build_chain(&t, &cfg).unwrap();
        let mut power = t.clone();
        for op in &ops {
            power = &power * &power;
            let lifted = lift_operator(&chain, op).unwrap();
            prop_assert!((lifted - &power).amax() <= 1e-8, "level {}", op.level);
        }
    }

    #[test]
    fn level_dimensions_never_grow(seed in any::<u64>(), n in 3usize..40, alpha in 0.2f64..1.0) {
        let g = random_graph(seed, n, true);
        let t = dense_walk(&g);
        for cfg in [
            ChainConfig::svd(Truncation::RetainFraction(alpha), 5).unwrap(),
            ChainConfig::svd(Truncation::Threshold(1e-3), 5).unwrap(),
            ChainConfig::dwa(1e-3, 5).unwrap(),
        ] {
            let (chain, _) = build_chain(&t, &cfg).unwrap();
            let dims = chain.dimensions();
            prop_assert!(dims.windows(2).all(|w| w[1] <= w[0]), "{dims:?}");
        }
    }

    #[test]
    fn schultz_product_matches_power_series(seed in any::<u64>(), n in 2usize..20, levels in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0));
        for mut row in t.row_iter_mut() {
            let s: f64 = row.sum();
            row *= rng.gen_range(0.1..0.9) / s;
        }
        let cfg = ChainConfig::svd(Truncation::RetainFraction(1.0), levels).unwrap();
        let g = schultz_green(Arc::new(t.clone()), &cfg).unwrap();
        let mut series = DMatrix::<f64>::identity(n, n);
        let mut term = series.clone();
        for _ in 1..(1usize << (levels + 1)) {
            term = &term * &t;
            series += &term;
        }
        prop_assert!((g.to_dense() - &series).amax() <= 1e-10 * series.amax().max(1.0));
    }

    #[test]
    fn commute_time_is_exactly_symmetric(seed in any::<u64>(), n in 3usize..30, alpha in 0.3f64..1.0) {
        let g = random_graph(seed, n, true);
        let (t, deg) = transition_matrix(&g).unwrap();
        let d = deflate_stationary(Arc::new(t), &deg.stationary).unwrap();
        let cfg = ChainConfig::svd(Truncation::RetainFraction(alpha), 4).unwrap();
        let green = schultz_green(Arc::new(d), &cfg).unwrap();
        for i in 0..n {
            for j in (i + 1)..n {
                prop_assert_eq!(
                    commute_time(&green, i, j, &deg).unwrap().to_bits(),
                    commute_time(&green, j, i, &deg).unwrap().to_bits()
                );
            }
        }
    }

    #[test]
    fn f1_ignores_class_renaming(seed in any::<u64>(), n in 2usize..60, classes in 2u32..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<u32> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let predicted: Vec<u32> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let mut perm: Vec<u32> = (0..classes).collect();
        perm.shuffle(&mut rng);
        let rename = |v: &[u32]| -> Vec<u32> { v.iter().map(|&c| perm[c as usize]).collect() };
        let a = f1_macro(&predicted, &truth).unwrap();
        let b = f1_macro(&rename(&predicted), &rename(&truth)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn knn_ignores_rotations(seed in any::<u64>(), n in 8usize..40, d in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = DMatrix::from_fn(d, n, |_, _| rng.gen_range(-5.0..5.0));
        let labels: BTreeMap<usize, u32> = (0..n).map(|k| (k, rng.gen_range(0..3))).collect();
        let q = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        let rotated = &q * &coords;
        let train: Vec<usize> = (0..n).filter(|k| k % 3 != 0).collect();
        let test: Vec<usize> = (0..n).filter(|k| k % 3 == 0).collect();
        let a = knn_classify(&coords, &labels, &train, &test, 3).unwrap();
        let b = knn_classify(&rotated, &labels, &train, &test, 3).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn row_rescaling_is_absorbed_by_c(seed in any::<u64>(), m in 1usize..10, n in 2usize..20, s in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let c: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..1.5)).collect();
        let row = rng.gen_range(0..m);
        let mut theta2 = theta.clone();
        theta2.row_mut(row).scale_mut(s);
        let mut c2 = c.clone();
        c2[row] /= s;
        for i in 0..n {
            for j in 0..n {
                let a = scaled_dot(&c, &theta, i, j);
                let b = scaled_dot(&c2, &theta2, i, j);
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn stratified_splits_train_every_class(seed in any::<u64>(), n in 4usize..80, frac in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: BTreeMap<usize, u32> = (0..n).map(|k| (k, rng.gen_range(0..4))).collect();
        let split = SplitSpec { train_fraction: frac, stratified: true, seed, trials: 1 };
        let (train, test) = split.split(&labels, 0).unwrap();
        let classes: std::collections::BTreeSet<u32> = labels.values().copied().collect();
        for c in classes {
            prop_assert!(train.iter().any(|k| labels[k] == c));
        }
        prop_assert_eq!(train.len() + test.len(), n);
    }

    #[test]
    fn negative_distribution_is_normalized(seed in any::<u64>(), n in 3usize..40) {
        let g = random_graph(seed, n, true);
        let (_, deg) = transition_matrix(&g).unwrap();
        let p = negative_distribution(&deg);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn scaling_length_tracks_rows_through_reintroduction() {
    let g = random_graph(5, 30, true);
    let t = dense_walk(&g);
    let cfg = ChainConfig::svd(Truncation::RetainFraction(0.5), 3).unwrap();
    let (chain, _) = build_chain(&t, &cfg).unwrap();
    let mut pool = ResidualPool::from_chain(&chain).unwrap().expect("discarded columns exist");
    let mut theta = DMatrix::from_fn(4, 30, |r, c| (r * 30 + c) as f64 * 1e-2);
    let mut c = ScalingDiag::ones(4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut added = 0;
    while reintroduce_residual(&mut theta, &mut c, &mut pool, &mut rng).is_some() {
        added += 1;
        assert_eq!(c.len(), theta.nrows());
    }
    assert!(added > 0);
    assert_eq!(theta.nrows(), 4 + added);
}

#[test]
fn training_keeps_scaling_and_rows_aligned() {
    let g = random_graph(9, 40, true);
    let (t, deg) = transition_matrix(&g).unwrap();
    let cfg = ChainConfig::svd(Truncation::RetainFraction(0.5), 3).unwrap();
    let (chain, _) = build_chain(&t, &cfg).unwrap();
    let theta = DMatrix::from_fn(5, 40, |r, c| ((r + 1) * (c + 2)) as f64 % 7.0 - 3.0);
    let sampler = PairSampler::new(&g, &deg, PairSource::Edges, 3).unwrap();
    let tc = TrainConfig {
        delta: 0.5,
        epochs: 3,
        batch_size: 4,
        ..Default::default()
    };
    let out = train(&theta, Some(&chain), &sampler, &tc).unwrap();
    assert!(out.reintroduced > 0);
    assert_eq!(out.scaling.len(), out.embedding.nrows());
    assert_eq!(out.embedding.nrows(), 5 + out.reintroduced);
}
