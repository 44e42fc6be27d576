#![allow(dead_code)]

pub mod suites;

use eegraph::graph_core::Graph;
use eegraph::numerics::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Learnable tensor with entries in `±[0.1, 1]`, away from relu/abs kinks.
pub fn rand_param(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::param(shape, data).unwrap()
}

pub fn rand_values(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Erdős–Rényi graph with edge probability `p`.
pub fn random_graph(rng: &mut impl Rng, n: usize, p: f64) -> Graph {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                pairs.push((i, j));
            }
        }
    }
    Graph::undirected(n, &pairs).unwrap()
}

/// Random graph that always contains a spanning path, so no node is isolated.
pub fn random_connected_graph(rng: &mut impl Rng, n: usize, p: f64) -> Graph {
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    for i in 0..n {
        for j in i + 2..n {
            if rng.random_bool(p) {
                pairs.push((i, j));
            }
        }
    }
    Graph::undirected(n, &pairs).unwrap()
}

pub fn random_perm(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Rows of an `[n, w]` matrix moved so that row `v` lands at `perm[v]`.
pub fn permute_rows(x: &[f64], width: usize, perm: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (v, &p) in perm.iter().enumerate() {
        out[p * width..(p + 1) * width].copy_from_slice(&x[v * width..(v + 1) * width]);
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn cycle(n: usize) -> Graph {
    let pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Graph::undirected(n, &pairs).unwrap()
}

pub fn path(n: usize) -> Graph {
    let pairs: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    Graph::undirected(n, &pairs).unwrap()
}

pub fn complete(n: usize) -> Graph {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j));
        }
    }
    Graph::undirected(n, &pairs).unwrap()
}

/// Outcome of one acceptance criterion: a list of named checks.
#[derive(Default, Debug)]
pub struct Report {
    pub checks: usize,
    pub failures: Vec<String>,
}

impl Report {
    pub fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checks > 0
    }

    pub fn assert_passed(&self) {
        assert!(self.checks > 0, "no checks ran");
        assert!(self.failures.is_empty(), "{} of {} checks failed:\n{}", self.failures.len(), self.checks, self.failures.join("\n"));
    }
}
