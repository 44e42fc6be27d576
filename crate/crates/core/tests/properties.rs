mod common;

use common::*;
use eegraph::graph_core::{Graph, ShiftOperatorKind};
use eegraph::layers::{readout, GinLayer, ReadoutKind};
use eegraph::montage::{EdgePolicy, Montage, RSVP16};
use eegraph::numerics::{checkpoint, Module, Tensor};
use eegraph::pipeline::{augment_awgn, measured_snr_db, TrialSet};
use eegraph::pooling::{sort_order, SortOrder};
use eegraph::wl::{same_partition, wl_refine};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = Graph> {
    (1..=max_n).prop_flat_map(|n| {
        proptest::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
            let mut pairs = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if bits[k] {
                        pairs.push((i, j));
                    }
                    k += 1;
                }
            }
            Graph::undirected(n, &pairs).unwrap()
        })
    })
}

fn graph_and_perm(max_n: usize) -> impl Strategy<Value = (Graph, Vec<usize>)> {
    graph_strategy(max_n).prop_flat_map(|g| {
        let n = g.n();
        (Just(g), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    })
}

fn matrix(t: &Tensor) -> DMatrix<f64> {
    let n = t.shape()[0];
    DMatrix::from_row_slice(n, n, &t.to_vec())
}

fn perm_matrix(perm: &[usize]) -> DMatrix<f64> {
    let n = perm.len();
    let mut p = DMatrix::zeros(n, n);
    for (v, &q) in perm.iter().enumerate() {
        p[(q, v)] = 1.0;
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn operators_are_symmetric_with_bounded_spectrum(g in graph_strategy(10)) {
        for kind in ShiftOperatorKind::ALL {
            let m = matrix(&g.shift_operator(kind).unwrap());
            prop_assert!((&m - m.transpose()).abs().max() < 1e-12, "{kind} not symmetric");
        }
        let eig = nalgebra::SymmetricEigen::new(matrix(&g.normalized_laplacian())).eigenvalues;
        prop_assert!(eig.min() >= -1e-9 && eig.max() <= 2.0 + 1e-9);
        let eig = nalgebra::SymmetricEigen::new(matrix(&g.laplacian().unwrap())).eigenvalues;
        prop_assert!(eig.min() >= -1e-9, "laplacian is positive semidefinite");
    }

    #[test]
    fn operators_commute_with_relabelling((g, perm) in graph_and_perm(9)) {
        let gp = g.permute(&perm).unwrap();
        let p = perm_matrix(&perm);
        for kind in ShiftOperatorKind::ALL {
            let m = matrix(&g.shift_operator(kind).unwrap());
            let mp = matrix(&gp.shift_operator(kind).unwrap());
            prop_assert!((&p * m * p.transpose() - mp).abs().max() < 1e-12, "{kind}");
        }
    }

    #[test]
    fn edge_list_round_trips(g in graph_strategy(10)) {
        let back = Graph::from_edge_list(&g.to_edge_list()).unwrap();
        prop_assert_eq!(back.n(), g.n());
        prop_assert_eq!(back.adjacency().to_vec(), g.adjacency().to_vec());
    }

    #[test]
    fn wl_colors_are_equivariant((g, perm) in graph_and_perm(9)) {
        let a = wl_refine(&g, g.n());
        let b = wl_refine(&g.permute(&perm).unwrap(), g.n());
        prop_assert_eq!(a.rounds.len(), b.rounds.len());
        for (ra, rb) in a.rounds.iter().zip(&b.rounds) {
            let mut moved = vec![0; ra.len()];
            for (v, &p) in perm.iter().enumerate() {
                moved[p] = ra[v];
            }
            prop_assert!(same_partition(&moved, rb));
        }
    }

    #[test]
    fn wl_rounds_only_refine(g in graph_strategy(9)) {
        let c = wl_refine(&g, g.n());
        for w in c.rounds.windows(2) {
            // Nodes split apart never merge again.
            for i in 0..g.n() {
                for j in 0..g.n() {
                    if w[0][i] != w[0][j] {
                        prop_assert_ne!(w[1][i], w[1][j]);
                    }
                }
            }
        }
    }

    #[test]
    fn knng_degree_bounds(k in 1usize..15) {
        let m = Montage::from_labels(RSVP16).unwrap();
        let g = m.build_graph(&EdgePolicy::knn(k)).unwrap();
        prop_assert!(g.is_symmetric());
        for v in 0..g.n() {
            let d = g.neighbors(v).len();
            prop_assert!(d >= k && d < g.n());
        }
    }

    #[test]
    fn distance_graphs_grow_with_threshold(d1 in 0.0f64..2.1, d2 in 0.0f64..2.1) {
        let m = Montage::from_labels(RSVP16).unwrap();
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let a = m.build_graph(&EdgePolicy::distance(lo)).unwrap();
        let b = m.build_graph(&EdgePolicy::distance(hi)).unwrap();
        prop_assert!(a.num_edges() <= b.num_edges());
        for e in a.edges() {
            prop_assert!(b.neighbors(e.src).contains(&e.dst));
        }
    }

    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        v in proptest::collection::vec(-30.0f64..30.0, 12),
        c in -100.0f64..100.0,
    ) {
        let x = Tensor::new(&[3, 4], v.clone()).unwrap();
        let shifted = Tensor::new(&[3, 4], v.iter().map(|a| a + c).collect()).unwrap();
        let p = x.softmax().unwrap().to_vec();
        for row in p.chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&q| q >= 0.0));
        }
        prop_assert!(max_abs_diff(&p, &shifted.softmax().unwrap().to_vec()) < 1e-12);
        let lp = x.log_softmax().unwrap().to_vec();
        let ln: Vec<f64> = p.iter().map(|q| q.ln()).collect();
        prop_assert!(max_abs_diff(&lp, &ln) < 1e-9);
    }

    #[test]
    fn batch_norm_standardizes_each_channel(v in proptest::collection::vec(-5.0f64..5.0, 24)) {
        let x = Tensor::new(&[4, 2, 3], v).unwrap();
        let (y, _, var) = x
            .batch_norm_train(&Tensor::new(&[2], vec![1.0, 1.0]).unwrap(), &Tensor::zeros(&[2]), 1e-8)
            .unwrap();
        let y = y.to_vec();
        for c in 0..2 {
            prop_assume!(var[c] > 1e-3);
            let vals: Vec<f64> = (0..4).flat_map(|b| (0..3).map(move |l| (b, l))).map(|(b, l)| y[b * 6 + c * 3 + l]).collect();
            let mean = vals.iter().sum::<f64>() / 12.0;
            let var = vals.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 12.0;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sort_order_is_a_relabelling_invariant((g, perm) in graph_and_perm(8), seed in any::<u64>()) {
        let n = g.n();
        let mut r = rng(seed);
        let x = rand_values(&mut r, n * 2);
        let xp = permute_rows(&x, 2, &perm);
        let a = sort_order(&Tensor::new(&[n, 2], x.clone()).unwrap(), 2, &SortOrder::Features).unwrap();
        let b = sort_order(&Tensor::new(&[n, 2], xp).unwrap(), 2, &SortOrder::Features).unwrap();
        let mapped: Vec<usize> = a.iter().map(|&i| perm[i]).collect();
        prop_assert_eq!(mapped, b);
    }

    #[test]
    fn gin_sum_readout_is_permutation_invariant((g, perm) in graph_and_perm(8), seed in any::<u64>()) {
        let n = g.n();
        let mut r = rng(seed);
        let gin = GinLayer::new(&mut r, 3, 4, 2).unwrap();
        let x = rand_values(&mut r, n * 3);
        let a = readout(&gin.forward(&g, &Tensor::new(&[n, 3], x.clone()).unwrap()).unwrap(), ReadoutKind::Sum).unwrap();
        let gp = g.permute(&perm).unwrap();
        let b = readout(&gin.forward(&gp, &Tensor::new(&[n, 3], permute_rows(&x, 3, &perm)).unwrap()).unwrap(), ReadoutKind::Sum).unwrap();
        prop_assert!(max_abs_diff(&a.to_vec(), &b.to_vec()) < 1e-9);
    }

    #[test]
    fn augmentation_snr_tracks_target(snr in -5.0f64..20.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let (n, c, l) = (8, 4, 250);
        let data: Vec<f64> = rand_values(&mut r, n * c * l).iter().map(|v| v + 0.2).collect();
        let ts = TrialSet::new("p", [n, c, l], 2, 250.0, "rsvp16", data, vec![0; n]).unwrap();
        let (aug, _) = augment_awgn(&ts, &[snr], seed).unwrap();
        prop_assert_eq!(aug.n_trials(), 2 * n);
        let measured = measured_snr_db(&ts.data, &aug.data[ts.data.len()..]);
        prop_assert!((measured - snr).abs() < 0.5, "target {snr} measured {measured}");
    }
}

#[test]
fn checkpoint_restores_a_network_exactly() {
    use eegraph::config::ModelSpec;
    use eegraph::model::Network;

    let g = Montage::from_labels(RSVP16).unwrap().build_graph(&EdgePolicy::knn(1)).unwrap();
    let spec = ModelSpec::default();
    let a = Network::new(&spec, g.clone(), ShiftOperatorKind::Adjacency, 64, 2, 1).unwrap();
    let x = Tensor::new(&[4, 16, 64], rand_values(&mut rng(2), 4 * 16 * 64)).unwrap();
    a.forward(&x).unwrap();
    a.set_training(false);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    checkpoint::save(&path, &a.params()).unwrap();

    let b = Network::new(&spec, g, ShiftOperatorKind::Adjacency, 64, 2, 99).unwrap();
    b.set_training(false);
    assert_ne!(a.forward(&x).unwrap().to_vec(), b.forward(&x).unwrap().to_vec());
    checkpoint::load_into(&path, &b.params()).unwrap();
    assert_eq!(a.forward(&x).unwrap().to_vec(), b.forward(&x).unwrap().to_vec());
}

#[test]
fn checkpoint_rejects_a_different_architecture() {
    use eegraph::config::ModelSpec;
    use eegraph::model::Network;

    let g = Montage::from_labels(RSVP16).unwrap().build_graph(&EdgePolicy::knn(1)).unwrap();
    let a = Network::new(&ModelSpec::default(), g.clone(), ShiftOperatorKind::Adjacency, 64, 2, 1).unwrap();
    let wide = ModelSpec { hidden: 16, ..ModelSpec::default() };
    let b = Network::new(&wide, g, ShiftOperatorKind::Adjacency, 64, 2, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    checkpoint::save(&path, &a.params()).unwrap();
    assert!(checkpoint::load_into(&path, &b.params()).is_err());
}
