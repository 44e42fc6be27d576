//! Graph convolution layers and readouts.
//!
//! Node features are `[n, F]` for a single graph or `[B, n, F]` for a batch of
//! trials that share one electrode graph.

use std::cell::Cell;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_core::Graph;
use crate::numerics::{join_name, Module, Param, ParamKind, Tensor};

pub(crate) fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::param(shape, data).expect("consistent shape")
}

/// Views `[.., n, F]` features as a batch `[B, n, F]`.
fn as_batch(x: &Tensor) -> Result<Tensor> {
    match x.rank() {
        2 => x.reshape(&[1, x.shape()[0], x.shape()[1]]),
        3 => Ok(x.clone()),
        _ => Err(Error::invalid("graph layer", format!("expected [n, F] or [B, n, F], got {:?}", x.shape()))),
    }
}

fn restore_rank(y: Tensor, like: &Tensor) -> Result<Tensor> {
    if like.rank() == 2 {
        let s = y.shape().to_vec();
        y.reshape(&s[1..])
    } else {
        Ok(y)
    }
}

/// Applies `S` to every graph in the batch.
pub fn graph_propagate(s: &Tensor, x: &Tensor) -> Result<Tensor> {
    restore_rank(Tensor::propagate(s, &as_batch(x)?)?, x)
}

/// Affine map on the last axis. Weight is stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Linear {
            weight: uniform(rng, &[fan_in, fan_out], bound),
            bias: bias.then(|| uniform(rng, &[fan_out], bound)),
        }
    }

    pub fn from_tensors(weight: Tensor, bias: Option<Tensor>) -> Self {
        Linear { weight, bias }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape().to_vec();
        let Some((&last, lead)) = s.split_last() else {
            return Err(Error::shape("linear", &s, self.weight.shape()));
        };
        if last != self.in_features() {
            return Err(Error::shape("linear", &s, self.weight.shape()));
        }
        let rows: usize = lead.iter().product();
        let mut y = x.reshape(&[rows, last])?.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            y = y.add(b)?;
        }
        let mut out_shape = lead.to_vec();
        out_shape.push(self.out_features());
        y.reshape(&out_shape)
    }
}

impl Module for Linear {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Param>) {
        out.push(Param {
            name: join_name(prefix, "weight"),
            tensor: self.weight.clone(),
            kind: ParamKind::Weight,
        });
        if let Some(b) = &self.bias {
            out.push(Param {
                name: join_name(prefix, "bias"),
                tensor: b.clone(),
                kind: ParamKind::Bias,
            });
        }
    }
}

/// `Σ_k σ(S^k X W_k)` over `K` taps.
#[derive(Clone, Debug)]
pub struct PolyFilterBank {
    pub taps: Vec<Linear>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Identity => x.clone(),
            Activation::Relu => x.relu(),
        }
    }
}

impl PolyFilterBank {
    pub fn new(rng: &mut impl Rng, taps: usize, fan_in: usize, fan_out: usize) -> Result<Self> {
        if taps == 0 {
            return Err(Error::Config("polynomial filter needs at least one tap".into()));
        }
        Ok(PolyFilterBank {
            taps: (0..taps).map(|_| Linear::new(rng, fan_in, fan_out, false)).collect(),
        })
    }

    pub fn forward(&self, s: &Tensor, x: &Tensor, act: Activation) -> Result<Tensor> {
        let mut power = x.clone();
        let mut total: Option<Tensor> = None;
        for (k, tap) in self.taps.iter().enumerate() {
            if k > 0 {
                power = graph_propagate(s, &power)?;
            }
            let term = act.apply(&tap.forward(&power)?);
            total = Some(match total {
                None => term,
                Some(t) => t.add(&term)?,
            });
        }
        Ok(total.expect("at least one tap"))
    }
}

impl Module for PolyFilterBank {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Param>) {
        for (k, tap) in self.taps.iter().enumerate() {
            tap.collect_params(&join_name(prefix, &format!("tap{k}")), out);
        }
    }
}

/// Row-stochastic neighbor-mean operator; rows of isolated nodes are zero.
/// With `sample`, each node averages over at most that many neighbors drawn
/// without replacement.
pub fn mean_operator(g: &Graph, sample_size: Option<usize>, rng: Option<&mut ChaCha8Rng>) -> Tensor {
    let n = g.n();
    let mut m = vec![0.0; n * n];
    let mut rng = rng;
    for v in 0..n {
        let nb = g.neighbors(v);
        let chosen: Vec<usize> = match (sample_size, rng.as_deref_mut()) {
            (Some(k), Some(r)) if nb.len() > k => {
                let mut idx: Vec<usize> = sample(r, nb.len(), k).into_iter().map(|i| nb[i]).collect();
                idx.sort_unstable();
                idx
            }
            _ => nb.to_vec(),
        };
        if chosen.is_empty() {
            continue;
        }
        let w = 1.0 / chosen.len() as f64;
        for u in chosen {
            m[v * n + u] += w;
        }
    }
    Tensor::new(&[n, n], m).expect("consistent shape")
}

#[derive(Clone, Debug)]
pub struct GraphSageLayer {
    pub pool: Linear,
    pub update: Linear,
    pub neighbor_sample_size: Option<usize>,
    sample_seed: u64,
    calls: Cell<u64>,
}

impl GraphSageLayer {
    pub fn new(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        GraphSageLayer {
            pool: Linear::new(rng, fan_in, fan_in, true),
            update: Linear::new(rng, 2 * fan_in, fan_out, false),
            neighbor_sample_size: None,
            sample_seed: rng.random(),
            calls: Cell::new(0),
        }
    }

    pub fn from_parts(pool: Linear, update: Linear) -> Self {
        GraphSageLayer {
            pool,
            update,
            neighbor_sample_size: None,
            sample_seed: 0,
            calls: Cell::new(0),
        }
    }

    pub fn with_sampling(mut self, size: usize) -> Self {
        self.neighbor_sample_size = Some(size);
        self
    }

    fn aggregator(&self, g: &Graph) -> Tensor {
        match self.neighbor_sample_size {
            None => mean_operator(g, None, None),
            Some(k) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.sample_seed);
                rng.set_stream(self.calls.get());
                self.calls.set(self.calls.get() + 1);
                mean_operator(g, Some(k), Some(&mut rng))
            }
        }
    }

    pub fn forward(&self, g: &Graph, h: &Tensor) -> Result<Tensor> {
        let pooled = self.pool.forward(h)?.relu();
        let agg = graph_propagate(&self.aggregator(g), &pooled)?;
        let axis = h.rank() - 1;
        let joined = Tensor::concat(&[h.clone(), agg], axis)?;
        self.update.forward(&joined)?.relu().normalize_rows()
    }
}

impl Module for GraphSageLayer {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Param>) {
        self.pool.collect_params(&join_name(prefix, "pool"), out);
        self.update.collect_params(&join_name(prefix, "update"), out);
    }
}

#[derive(Clone, Debug)]
pub struct GinLayer {
    pub fc1: Linear,
    pub fc2: Linear,
    /// Self-weight `λ`, shape `[1]`.
    pub lambda: Tensor,
}

impl GinLayer {
    pub fn new(rng: &mut impl Rng, fan_in: usize, hidden: usize, fan_out: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("GIN hidden width must be at least 1".into()));
        }
        Ok(GinLayer {
            fc1: Linear::new(rng, fan_in, hidden, true),
            fc2: Linear::new(rng, hidden, fan_out, true),
            lambda: Tensor::param(&[1], vec![0.0])?,
        })
    }

    /// `(1 + λ)·h_v + Σ_{u ∈ N(v)} h_u`.
    pub fn aggregate(&self, g: &Graph, h: &Tensor) -> Result<Tensor> {
        let one_plus = self.lambda.add(&Tensor::scalar(1.0))?;
        let own = h.scale_by(&one_plus)?;
        own.add(&graph_propagate(&g.adjacency(), h)?)
    }

    pub fn mlp(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.relu())
    }

    pub fn forward(&self, g: &Graph, h: &Tensor) -> Result<Tensor> {
        self.mlp(&self.aggregate(g, h)?)
    }
}

impl Module for GinLayer {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Param>) {
        self.fc1.collect_params(&join_name(prefix, "fc1"), out);
        self.fc2.collect_params(&join_name(prefix, "fc2"), out);
        out.push(Param {
            name: join_name(prefix, "lambda"),
            tensor: self.lambda.clone(),
            kind: ParamKind::Scalar,
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    Sum,
    Mean,
    Max,
}

impl FromStr for ReadoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(ReadoutKind::Sum),
            "mean" => Ok(ReadoutKind::Mean),
            "max" => Ok(ReadoutKind::Max),
            _ => Err(Error::Config(format!("unknown readout `{s}`"))),
        }
    }
}

/// Reduces the node axis: `[n, F] → [F]`, `[B, n, F] → [B, F]`.
pub fn readout(h: &Tensor, kind: ReadoutKind) -> Result<Tensor> {
    let axis = match h.rank() {
        2 => 0,
        3 => 1,
        _ => return Err(Error::invalid("readout", format!("unsupported shape {:?}", h.shape()))),
    };
    if h.shape()[axis] == 0 {
        return Err(Error::invalid("readout", "graph has no nodes"));
    }
    match kind {
        ReadoutKind::Sum => h.sum_axis(axis),
        ReadoutKind::Mean => h.mean_axis(axis),
        ReadoutKind::Max => Ok(h.max_axis(axis)?.0),
    }
}

/// Concatenated sum-readouts of every round, round 0 included.
pub fn gin_graph_embedding(per_round: &[Tensor]) -> Result<Tensor> {
    if per_round.is_empty() {
        return Err(Error::invalid("gin_graph_embedding", "no rounds"));
    }
    let parts = per_round
        .iter()
        .map(|h| readout(h, ReadoutKind::Sum))
        .collect::<Result<Vec<_>>>()?;
    let axis = parts[0].rank() - 1;
    Tensor::concat(&parts, axis)
}
