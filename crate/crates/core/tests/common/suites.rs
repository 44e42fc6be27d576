//! Acceptance-level checks shared by the integration tests and the
//! `acceptance` runner.

use std::collections::BTreeSet;

use eegraph::error::Result;
use eegraph::graph_core::Graph;
use eegraph::layers::{gin_graph_embedding, readout, Activation, GinLayer, GraphSageLayer, Linear, PolyFilterBank, ReadoutKind};
use eegraph::montage::{Electrode, EdgePolicy, Montage, ERRP56, RSVP16};
use eegraph::numerics::gradcheck::{check_gradients, DEFAULT_STEP, DEFAULT_TOLERANCE};
use eegraph::numerics::{lstm_cell, no_grad, LstmWeights, Module, Tensor};
use eegraph::pipeline::{augment_awgn, compressor_lengths, conv_len, measured_snr_db, Compressor, TrialSet};
use eegraph::pooling::{EdgeScoreNet, SagPool, Set2Set, SortPoolReadout};
use eegraph::trainer::{loss, RegSpec};
use eegraph::wl::wl_equivalent;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

/// Gradient check of `f` (projected on a fixed random direction) with respect
/// to `inputs`.
fn grad_case(rep: &mut Report, r: &mut ChaCha8Rng, name: &str, inputs: &[Tensor], f: &dyn Fn() -> Result<Tensor>) {
    let shape = match no_grad(f) {
        Ok(t) => t.shape().to_vec(),
        Err(e) => return rep.check(false, || format!("{name}: {e}")),
    };
    let n = shape.iter().product();
    let w = Tensor::new(&shape, rand_values(r, n)).unwrap();
    let g = || f()?.mul(&w);
    match check_gradients(&g, inputs, DEFAULT_STEP) {
        Ok(out) => rep.check(out.passes(DEFAULT_TOLERANCE), || {
            format!("{name}: relative error {:.3e} (per input {:?})", out.max_rel_error, out.per_input)
        }),
        Err(e) => rep.check(false, || format!("{name}: {e}")),
    }
}

/// Moves batch-norm scale and shift off their initial values. At `β = 0` the
/// stage output is positively homogeneous in `γ`, so the next normalization
/// cancels it and the true gradient is exactly zero.
fn generic_point(comp: &Compressor, r: &mut ChaCha8Rng) {
    for st in &comp.stages {
        st.gamma.set_data(&rand_values(r, st.gamma.numel()).iter().map(|v| 1.0 + 0.5 * v).collect::<Vec<_>>()).unwrap();
        st.beta.set_data(&rand_values(r, st.beta.numel())).unwrap();
    }
}

fn params_and(m: &dyn Module, extra: &[&Tensor]) -> Vec<Tensor> {
    let mut v: Vec<Tensor> = m.learnable_params().into_iter().map(|p| p.tensor).collect();
    v.extend(extra.iter().map(|t| (*t).clone()));
    v
}

pub fn primitive_gradients(seed: u64) -> Report {
    let r = &mut rng(seed);
    let mut rep = Report::default();
    let rep_ = &mut rep;
    let a = rand_param(r, &[3, 4]);
    let b = rand_param(r, &[3, 4]);
    let bias = rand_param(r, &[4]);
    let x3 = rand_param(r, &[2, 3, 4]);
    let ab = [a.clone(), b.clone()];
    let aa = [a.clone()];

    grad_case(rep_, r, "add", &ab, &|| a.add(&b));
    grad_case(rep_, r, "add (bias)", &[a.clone(), bias.clone()], &|| a.add(&bias));
    grad_case(rep_, r, "add (batched bias)", &[x3.clone(), bias.clone()], &|| x3.add(&bias));
    grad_case(rep_, r, "sub", &ab, &|| a.sub(&b));
    grad_case(rep_, r, "mul", &ab, &|| a.mul(&b));
    grad_case(rep_, r, "relu", &aa, &|| Ok(a.relu()));
    grad_case(rep_, r, "sigmoid", &aa, &|| Ok(a.sigmoid()));
    grad_case(rep_, r, "tanh", &aa, &|| Ok(a.tanh()));
    grad_case(rep_, r, "abs", &aa, &|| Ok(a.abs()));
    grad_case(rep_, r, "square", &aa, &|| Ok(a.square()));
    grad_case(rep_, r, "scale", &aa, &|| Ok(a.scale(-1.7)));
    grad_case(rep_, r, "neg", &aa, &|| Ok(a.neg()));
    let s = rand_param(r, &[1]);
    grad_case(rep_, r, "scale_by", &[a.clone(), s.clone()], &|| a.scale_by(&s));
    let col = rand_param(r, &[3, 1]);
    grad_case(rep_, r, "scale_rows", &[a.clone(), col.clone()], &|| a.scale_rows(&col));
    let m = rand_param(r, &[4, 2]);
    grad_case(rep_, r, "matmul", &[a.clone(), m.clone()], &|| a.matmul(&m));
    let sm = rand_param(r, &[3, 3]);
    grad_case(rep_, r, "propagate", &[sm.clone(), x3.clone()], &|| Tensor::propagate(&sm, &x3));
    grad_case(rep_, r, "transpose", &aa, &|| a.transpose());
    grad_case(rep_, r, "reshape", &aa, &|| a.reshape(&[2, 6]));
    grad_case(rep_, r, "sum_all", &aa, &|| Ok(a.sum_all()));
    grad_case(rep_, r, "mean_all", &aa, &|| a.mean_all());
    grad_case(rep_, r, "sum_axis 0", &aa, &|| a.sum_axis(0));
    grad_case(rep_, r, "sum_axis 1", &aa, &|| a.sum_axis(1));
    grad_case(rep_, r, "sum_axis (rank 3)", std::slice::from_ref(&x3), &|| x3.sum_axis(1));
    grad_case(rep_, r, "mean_axis", std::slice::from_ref(&x3), &|| x3.mean_axis(1));
    grad_case(rep_, r, "max_axis", &aa, &|| Ok(a.max_axis(1)?.0));
    grad_case(rep_, r, "max_axis (rank 3)", std::slice::from_ref(&x3), &|| Ok(x3.max_axis(1)?.0));
    grad_case(rep_, r, "softmax", &aa, &|| a.softmax());
    grad_case(rep_, r, "log_softmax", &aa, &|| a.log_softmax());
    grad_case(rep_, r, "concat 0", &ab, &|| Tensor::concat(&[a.clone(), b.clone()], 0));
    grad_case(rep_, r, "concat 1", &ab, &|| Tensor::concat(&[a.clone(), b.clone()], 1));
    grad_case(rep_, r, "gather_rows", &aa, &|| a.gather_rows(&[2, 0, 2]));
    grad_case(rep_, r, "narrow", &aa, &|| a.narrow(1, 1, 2));
    grad_case(rep_, r, "pick", &aa, &|| a.pick(&[0, 3, 1]));
    grad_case(rep_, r, "normalize_rows", &aa, &|| a.normalize_rows());

    let x = rand_param(r, &[2, 4, 9]);
    let w = rand_param(r, &[4, 2, 3]);
    let cb = rand_param(r, &[4]);
    grad_case(rep_, r, "conv1d (grouped, stride 2)", &[x.clone(), w.clone(), cb.clone()], &|| {
        x.conv1d(&w, Some(&cb), 2, 2)
    });
    let wd = rand_param(r, &[4, 1, 3]);
    grad_case(rep_, r, "conv1d (depthwise)", &[x.clone(), wd.clone()], &|| x.conv1d(&wd, None, 2, 4));
    let wf = rand_param(r, &[3, 4, 2]);
    grad_case(rep_, r, "conv1d (dense)", &[x.clone(), wf.clone()], &|| x.conv1d(&wf, None, 1, 1));

    let xb = rand_param(r, &[3, 2, 5]);
    let gamma = rand_param(r, &[2]);
    let beta = rand_param(r, &[2]);
    let bn_in = [xb.clone(), gamma.clone(), beta.clone()];
    grad_case(rep_, r, "batch_norm (train)", &bn_in, &|| Ok(xb.batch_norm_train(&gamma, &beta, 1e-8)?.0));
    let x2 = rand_param(r, &[5, 2]);
    grad_case(rep_, r, "batch_norm (train, rank 2)", &[x2.clone(), gamma.clone(), beta.clone()], &|| {
        Ok(x2.batch_norm_train(&gamma, &beta, 1e-8)?.0)
    });
    grad_case(rep_, r, "batch_norm (eval)", &bn_in, &|| {
        xb.batch_norm_eval(&gamma, &beta, &[0.1, -0.2], &[0.5, 1.3], 1e-8)
    });

    let lw = LstmWeights {
        w_ih: rand_param(r, &[3, 16]),
        w_hh: rand_param(r, &[4, 16]),
        bias: rand_param(r, &[16]),
    };
    let (lx, lh, lc) = (rand_param(r, &[2, 3]), rand_param(r, &[2, 4]), rand_param(r, &[2, 4]));
    let lstm_in = [lw.w_ih.clone(), lw.w_hh.clone(), lw.bias.clone(), lx.clone(), lh.clone(), lc.clone()];
    grad_case(rep_, r, "lstm_cell", &lstm_in, &|| {
        let (h, c) = lstm_cell(&lx, &lh, &lc, &lw)?;
        Tensor::concat(&[h, c], 1)
    });

    // A value reused along several paths must collect every contribution.
    grad_case(rep_, r, "diamond", &aa, &|| a.mul(&a)?.add(&a.tanh())?.mul(&a.sigmoid()));
    rep
}

pub fn layer_gradients(seed: u64) -> Report {
    let r = &mut rng(seed);
    let mut rep = Report::default();
    let rep_ = &mut rep;
    for n in [4, 5, 6] {
        let g = random_connected_graph(r, n, 0.4);
        let x = rand_param(r, &[n, 3]);

        let sage = GraphSageLayer::new(r, 3, 2);
        grad_case(rep_, r, &format!("graphsage n={n}"), &params_and(&sage, &[&x]), &|| sage.forward(&g, &x));

        let gin = GinLayer::new(r, 3, 5, 2).unwrap();
        gin.lambda.set_data(&[0.3]).unwrap();
        grad_case(rep_, r, &format!("gin n={n}"), &params_and(&gin, &[&x]), &|| gin.forward(&g, &x));

        let poly = PolyFilterBank::new(r, 3, 3, 2).unwrap();
        let s = g.normalized_adjacency();
        grad_case(rep_, r, &format!("polyfilter n={n}"), &params_and(&poly, &[&x]), &|| {
            poly.forward(&s, &x, Activation::Relu)
        });

        let h = rand_param(r, &[n, 4]);
        for rho in [3, 8] {
            let sp = SortPoolReadout::new(r, rho, 2, 2).unwrap();
            grad_case(rep_, r, &format!("sortpool rho={rho} n={n}"), &params_and(&sp, &[&h]), &|| sp.forward(&h));
        }

        let ep = EdgeScoreNet::new(r, 3);
        grad_case(rep_, r, &format!("edgepool n={n}"), &params_and(&ep, &[&x]), &|| {
            Ok(ep.pool(&g, &x)?.features)
        });

        let sag = SagPool::new(r, 3, 0.5).unwrap();
        let adj = g.adjacency();
        grad_case(rep_, r, &format!("sagpool n={n}"), &params_and(&sag, &[&x]), &|| Ok(sag.forward(&adj, &x)?.1));

        let s2s = Set2Set::new(r, 3, 2, 3).unwrap();
        grad_case(rep_, r, &format!("set2set n={n}"), &params_and(&s2s, &[&x]), &|| s2s.query(&x));
        grad_case(rep_, r, &format!("set2set readout n={n}"), &params_and(&s2s, &[&x]), &|| s2s.forward(&x));
    }

    let comp = Compressor::new(r, 3, 40).unwrap();
    generic_point(&comp, r);
    let xc = rand_param(r, &[3, 3, 40]);
    grad_case(rep_, r, "compressor", &params_and(&comp, &[&xc]), &|| comp.forward(&xc));

    let lin = Linear::new(r, 3, 4, true);
    let xl = rand_param(r, &[5, 3]);
    let labels = [0, 3, 1, 1, 2];
    for reg in [RegSpec::default(), RegSpec { alpha: 0.01, beta: 0.02 }] {
        let params = lin.params();
        grad_case(rep_, r, &format!("loss alpha={} beta={}", reg.alpha, reg.beta), &params_and(&lin, &[&xl]), &|| {
            loss(&lin.forward(&xl)?, &labels, &params, reg)
        });
    }
    rep
}

/// Criterion 1.
pub fn gradients(seed: u64) -> Report {
    let mut rep = primitive_gradients(seed);
    let layers = layer_gradients(seed + 1);
    rep.checks += layers.checks;
    rep.failures.extend(layers.failures);
    rep
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

fn distinct(values: &[f64], gap: f64) -> bool {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2).all(|w| w[1] - w[0] > gap)
}

/// Criterion 2. Returns the report plus how many graphs exercised the
/// SagPool and EdgePool correspondences (those need distinct scores).
pub fn permutation(seed: u64, graphs: usize) -> (Report, usize, usize) {
    let r = &mut rng(seed);
    let mut rep = Report::default();
    let (mut sag_checked, mut edge_checked) = (0, 0);
    const F: usize = 3;
    const TOL: f64 = 1e-9;
    for t in 0..graphs {
        let n = r.random_range(2..=8);
        let p = r.random_range(0.2..0.8);
        let g = random_graph(r, n, p);
        let perm = random_perm(r, n);
        let gp = g.permute(&perm).unwrap();
        let xv = rand_values(r, n * F);
        let x = tensor(&[n, F], xv.clone());
        let xp = tensor(&[n, F], permute_rows(&xv, F, &perm));

        let gin1 = GinLayer::new(r, F, 4, 4).unwrap();
        let gin2 = GinLayer::new(r, 4, 4, 4).unwrap();
        gin1.lambda.set_data(&[r.random_range(-0.5..0.5)]).unwrap();
        gin2.lambda.set_data(&[r.random_range(-0.5..0.5)]).unwrap();
        let gin_embed = |g: &Graph, x: &Tensor| -> Result<Vec<f64>> {
            let h1 = gin1.forward(g, x)?.relu();
            let h2 = gin2.forward(g, &h1)?.relu();
            Ok(gin_graph_embedding(&[x.clone(), h1, h2])?.to_vec())
        };
        let d = max_abs_diff(&gin_embed(&g, &x).unwrap(), &gin_embed(&gp, &xp).unwrap());
        rep.check(d < TOL, || format!("graph {t}: GIN+sum embeddings differ by {d:e}"));

        let sage = GraphSageLayer::new(r, F, 4);
        let ha = sage.forward(&g, &x).unwrap();
        let hb = sage.forward(&gp, &xp).unwrap();
        for kind in [ReadoutKind::Sum, ReadoutKind::Mean, ReadoutKind::Max] {
            let d = max_abs_diff(&readout(&ha, kind).unwrap().to_vec(), &readout(&hb, kind).unwrap().to_vec());
            rep.check(d < TOL, || format!("graph {t}: GraphSAGE+{kind:?} embeddings differ by {d:e}"));
        }

        let s2s = Set2Set::new(r, F, 4, 3).unwrap();
        let d = max_abs_diff(&s2s.forward(&x).unwrap().to_vec(), &s2s.forward(&xp).unwrap().to_vec());
        rep.check(d < TOL, || format!("graph {t}: Set2Set embeddings differ by {d:e}"));

        // Self-loops keep isolated nodes from all scoring tanh(0).
        let with_loops = |g: &Graph| g.adjacency().add(&Tensor::eye(n)).unwrap();
        let sag = SagPool::new(r, F, 0.5).unwrap();
        let z = sag.scores(&with_loops(&g), &x).unwrap().to_vec();
        if distinct(&z, 1e-9) {
            sag_checked += 1;
            let (ia, oa) = sag.forward(&with_loops(&g), &x).unwrap();
            let (ib, ob) = sag.forward(&with_loops(&gp), &xp).unwrap();
            let mapped: Vec<usize> = ia.iter().map(|&i| perm[i]).collect();
            rep.check(mapped == ib, || format!("graph {t}: SagPool kept {ia:?} vs {ib:?} under {perm:?}"));
            let d = max_abs_diff(&oa.to_vec(), &ob.to_vec());
            rep.check(d < TOL, || format!("graph {t}: SagPool outputs differ by {d:e}"));
        }

        let ep = EdgeScoreNet::new(r, F);
        let a = ep.pool(&g, &x).unwrap();
        let scores: Vec<f64> = a.scores.iter().map(|s| s.1).collect();
        if distinct(&scores, 1e-9) {
            edge_checked += 1;
            let b = ep.pool(&gp, &xp).unwrap();
            let mapped: BTreeSet<Vec<usize>> = a
                .clusters
                .iter()
                .map(|c| {
                    let mut m: Vec<usize> = c.iter().map(|&v| perm[v]).collect();
                    m.sort();
                    m
                })
                .collect();
            let got: BTreeSet<Vec<usize>> = b.clusters.iter().cloned().collect();
            rep.check(mapped == got, || format!("graph {t}: EdgePool partitions {:?} vs {:?}", a.clusters, b.clusters));
            let sa = readout(&a.features, ReadoutKind::Sum).unwrap().to_vec();
            let sb = readout(&b.features, ReadoutKind::Sum).unwrap().to_vec();
            let d = max_abs_diff(&sa, &sb);
            rep.check(d < TOL, || format!("graph {t}: EdgePool pooled features differ by {d:e}"));
        }
    }
    (rep, sag_checked, edge_checked)
}

/// `v`'s GIN pre-MLP aggregate when its neighbors carry `leaves`.
fn star_aggregate(gin: &GinLayer, center: &[f64], leaves: &[&[f64]]) -> Vec<f64> {
    let n = leaves.len() + 1;
    let pairs: Vec<(usize, usize)> = (1..n).map(|i| (0, i)).collect();
    let g = Graph::undirected(n, &pairs).unwrap();
    let mut x = center.to_vec();
    for l in leaves {
        x.extend_from_slice(l);
    }
    let h = gin.aggregate(&g, &tensor(&[n, center.len()], x)).unwrap().to_vec();
    h[..center.len()].to_vec()
}

fn mean_of(leaves: &[&[f64]]) -> Vec<f64> {
    let w = leaves[0].len();
    (0..w).map(|c| leaves.iter().map(|l| l[c]).sum::<f64>() / leaves.len() as f64).collect()
}

fn max_of(leaves: &[&[f64]]) -> Vec<f64> {
    let w = leaves[0].len();
    (0..w).map(|c| leaves.iter().map(|l| l[c]).fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// Criterion 3.
pub fn wl(seed: u64, pairs: usize) -> Report {
    let r = &mut rng(seed);
    let mut rep = Report::default();
    for t in 0..pairs {
        let n = r.random_range(1..=10);
        let p = r.random_range(0.1..0.9);
        let g = random_graph(r, n, p);
        let perm = random_perm(r, n);
        let gp = g.permute(&perm).unwrap();
        rep.check(wl_equivalent(&g, &gp, n), || format!("pair {t}: permuted copy not WL-equivalent"));
    }
    let two_triangles = Graph::undirected(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]).unwrap();
    rep.check(wl_equivalent(&cycle(6), &two_triangles, 6), || "C6 vs two triangles should be WL-equivalent".into());
    rep.check(!wl_equivalent(&path(3), &complete(3), 3), || "P3 vs K3 should be distinguished".into());

    let gin = GinLayer::new(r, 2, 2, 2).unwrap();
    let (a, b, c): (&[f64], &[f64], &[f64]) = (&[0.3, -0.2], &[0.9, 0.4], &[0.5, 0.5]);
    type Case<'a> = (&'a str, Vec<&'a [f64]>, Vec<&'a [f64]>, bool);
    let cases: [Case; 3] = [
        ("{a,a} vs {a,a,a}", vec![a, a], vec![a, a, a], true),
        ("{a,b} vs {a,b,b}", vec![a, b], vec![a, b, b], false),
        ("{a,b} vs {a,a,b,b}", vec![a, b], vec![a, a, b, b], true),
    ];
    for (name, v, v2, mean_collapses) in cases {
        let m = max_abs_diff(&max_of(&v), &max_of(&v2));
        rep.check(m < 1e-12, || format!("{name}: max aggregation should coincide"));
        if mean_collapses {
            let m = max_abs_diff(&mean_of(&v), &mean_of(&v2));
            rep.check(m < 1e-12, || format!("{name}: mean aggregation should coincide"));
        }
        let d = max_abs_diff(&star_aggregate(&gin, c, &v), &star_aggregate(&gin, c, &v2));
        rep.check(d > 1e-6, || format!("{name}: sum aggregates coincide"));
    }
    rep
}

fn sorted_edges(g: &Graph) -> Vec<(usize, usize)> {
    let mut e: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.src, e.dst)).collect();
    e.sort();
    e
}

fn random_montage(r: &mut ChaCha8Rng, n: usize) -> Montage {
    let electrodes = (0..n)
        .map(|i| {
            let p: [f64; 3] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            Electrode { name: format!("E{i}"), pos: p.map(|v| v / norm) }
        })
        .collect();
    Montage::new(electrodes).unwrap()
}

/// Criterion 4.
pub fn edge_policies(seed: u64) -> Report {
    let r = &mut rng(seed);
    let mut rep = Report::default();
    let errp = Montage::from_labels(ERRP56).unwrap();
    let full = errp.build_graph(&EdgePolicy::complete()).unwrap();
    rep.check(full.num_edges() == 3080, || format!("complete 56-node graph has {} edges", full.num_edges()));
    let looped = errp.build_graph(&EdgePolicy::complete().with_self_loops()).unwrap();
    rep.check(looped.num_edges() == 3136, || format!("with self-loops: {} edges", looped.num_edges()));

    let mut montages = vec![errp, Montage::from_labels(RSVP16).unwrap()];
    for _ in 0..20 {
        let n = r.random_range(2..=12);
        montages.push(random_montage(r, n));
    }
    for m in &montages {
        let n = m.len();
        let complete = m.build_graph(&EdgePolicy::complete()).unwrap();
        let knn = m.build_graph(&EdgePolicy::knn(n - 1)).unwrap();
        rep.check(sorted_edges(&knn) == sorted_edges(&complete), || format!("n={n}: kNNG(n-1) differs from complete"));
        let far = m.build_graph(&EdgePolicy::distance(f64::INFINITY)).unwrap();
        rep.check(sorted_edges(&far) == sorted_edges(&complete), || format!("n={n}: infinite threshold differs from complete"));
        let none = m.build_graph(&EdgePolicy::distance(0.0)).unwrap();
        rep.check(none.num_edges() == 0, || format!("n={n}: zero threshold gave {} edges", none.num_edges()));
        let none_loops = m.build_graph(&EdgePolicy::distance(0.0).with_self_loops()).unwrap();
        rep.check(none_loops.num_edges() == n, || format!("n={n}: zero threshold with loops"));

        let mut policies = vec![EdgePolicy::complete()];
        policies.extend((1..n).map(EdgePolicy::knn));
        policies.extend([0.0, 0.3, 0.7, 1.2, 2.0].map(EdgePolicy::distance));
        for p in policies {
            for p in [p, p.with_self_loops()] {
                let g = m.build_graph(&p).unwrap();
                let edges = sorted_edges(&g);
                let mirrored = edges.iter().all(|&(s, d)| edges.binary_search(&(d, s)).is_ok());
                rep.check(g.is_symmetric() && mirrored, || {
                    format!("n={n}: {p} is not symmetric")
                });
            }
        }
    }
    rep
}

fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    let n = t.shape()[0];
    DMatrix::from_row_slice(n, n, &t.to_vec())
}

/// Criterion 5.
pub fn shift_operators(seed: u64, graphs: usize) -> Report {
    let r = &mut rng(seed);
    let mut rep = Report::default();
    for t in 0..graphs {
        let n = r.random_range(1..=10);
        let p = r.random_range(0.0..1.0);
        let mut g = random_graph(r, n, p);
        let loops = t % 4 == 3;
        if loops {
            let mut edges = g.edges().to_vec();
            edges.extend((0..n).map(|v| eegraph::graph_core::Edge { src: v, dst: v, weight: 1.0 }));
            g = Graph::new(n, edges, true).unwrap();
        }
        let a_norm = to_matrix(&g.normalized_adjacency());
        let l_norm = to_matrix(&g.normalized_laplacian());
        let id = DMatrix::<f64>::identity(n, n);
        let d = (&l_norm - (&id - &a_norm)).abs().max();
        rep.check(d <= 1e-12, || format!("graph {t}: normalized laplacian off by {d:e}"));

        if loops {
            rep.check(g.laplacian().is_err(), || format!("graph {t}: laplacian accepted self-loops"));
        } else {
            let l = to_matrix(&g.laplacian().unwrap());
            let worst = (0..n).map(|i| l.row(i).sum().abs()).fold(0.0, f64::max);
            rep.check(worst <= 1e-12, || format!("graph {t}: laplacian row sum {worst:e}"));
        }

        let eig = nalgebra::SymmetricEigen::new(l_norm.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        rep.check(lo >= -1e-9 && hi <= 2.0 + 1e-9, || format!("graph {t}: spectrum [{lo}, {hi}]"));
        // Cross-check the top of the spectrum by power iteration.
        let top = power_iteration(&l_norm, 5000);
        rep.check((top - hi).abs() < 1e-6, || format!("graph {t}: power iteration {top} vs {hi}"));
    }
    rep
}

fn power_iteration(m: &DMatrix<f64>, iters: usize) -> f64 {
    let n = m.nrows();
    // Shift so the largest eigenvalue is also the largest in magnitude.
    let shifted = m + DMatrix::<f64>::identity(n, n) * 1.0;
    let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + i as f64 * 0.37);
    for _ in 0..iters {
        let w = &shifted * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
    }
    (v.transpose() * m * &v)[(0, 0)] / v.norm_squared()
}

/// Criterion 6.
pub fn augmentation(seed: u64) -> Report {
    let r = &mut rng(seed);
    let mut rep = Report::default();
    let (n, c, l) = (40, 8, 250);
    let mut data = Vec::with_capacity(n * c * l);
    for _ in 0..n {
        for ch in 0..c {
            let amp = 0.5 + ch as f64 * 0.3;
            let phase: f64 = r.random_range(0.0..std::f64::consts::TAU);
            for s in 0..l {
                let t = s as f64 / l as f64;
                data.push(amp * (2.0 * std::f64::consts::PI * 5.0 * t + phase).sin() + 0.1 * r.random_range(-1.0..1.0));
            }
        }
    }
    let labels = (0..n).map(|i| i % 2).collect();
    let ts = TrialSet::new("snr", [n, c, l], 2, 250.0, "rsvp16", data, labels).unwrap();
    let levels = [10.0, 5.0, 2.0];
    let (aug, stats) = augment_awgn(&ts, &levels, seed).unwrap();
    rep.check(aug.n_trials() == 4 * n, || format!("{} trials after augmentation", aug.n_trials()));
    rep.check(stats.zero_power_channels == 0, || "unexpected zero-power channels".into());
    rep.check(aug.data[..ts.data.len()] == ts.data[..], || "originals must come first, unchanged".into());
    let block = ts.data.len();
    for (k, &target) in levels.iter().enumerate() {
        let noisy = &aug.data[(k + 1) * block..(k + 2) * block];
        let snr = measured_snr_db(&ts.data, noisy);
        rep.check((snr - target).abs() <= 0.5, || format!("target {target} dB measured {snr:.3} dB"));
        rep.check(aug.labels[(k + 1) * n..(k + 2) * n] == ts.labels[..], || format!("labels of level {target}"));
    }
    rep
}

/// Criterion 7.
pub fn compressor(seed: u64) -> Report {
    let r = &mut rng(seed);
    let mut rep = Report::default();
    for (samples, expected) in [(250usize, vec![124usize, 61, 30]), (128, vec![63, 31])] {
        let lengths = compressor_lengths(samples, Compressor::OUT);
        rep.check(lengths == expected, || format!("{samples}: lengths {lengths:?}"));
        // Independent recurrence L' = floor((L - K) / S) + 1.
        let mut l = samples;
        for &got in &lengths {
            let next = (l - Compressor::KERNEL) / Compressor::STRIDE + 1;
            rep.check(got == next && conv_len(l) == next, || format!("{samples}: recurrence mismatch at {l}"));
            l = next;
        }
        let comp = Compressor::new(r, 3, samples).unwrap();
        let y = comp.forward(&Tensor::new(&[2, 3, samples], rand_values(r, 6 * samples)).unwrap()).unwrap();
        rep.check(y.shape() == [2, 3, 32], || format!("{samples}: output shape {:?}", y.shape()));
        rep.check(comp.stages.len() == expected.len(), || format!("{samples}: {} stages", comp.stages.len()));

        let x = rand_param(r, &[2, 2, samples]);
        let comp = Compressor::new(r, 2, samples).unwrap();
        generic_point(&comp, r);
        grad_case(&mut rep, r, &format!("compressor {samples}"), &params_and(&comp, &[&x]), &|| comp.forward(&x));
    }
    rep
}
