//! The full classifier: temporal compressor, graph convolutions, pooling and
//! an MLP head producing class logits.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ConvKind, ExperimentConfig, ModelSpec, PoolKind, SortBy};
use crate::error::{Error, Result};
use crate::graph_core::{Graph, ShiftOperatorKind};
use crate::layers::{gin_graph_embedding, readout, Activation, GinLayer, GraphSageLayer, Linear, PolyFilterBank, ReadoutKind};
use crate::numerics::{count_learnable, join_name, Module, Param, Tensor};
use crate::pipeline::Compressor;
use crate::pooling::{EdgeScoreNet, SagPool, Set2Set, SortOrder, SortPoolReadout};
use crate::wl::wl_refine_default;

#[derive(Clone, Debug)]
pub enum ConvLayer {
    Gin(GinLayer),
    Sage(GraphSageLayer),
    Poly(PolyFilterBank),
}

impl ConvLayer {
    fn forward(&self, g: &Graph, s: &Tensor, h: &Tensor) -> Result<Tensor> {
        match self {
            ConvLayer::Gin(l) => Ok(l.forward(g, h)?.relu()),
            ConvLayer::Sage(l) => l.forward(g, h),
            ConvLayer::Poly(l) => l.forward(s, h, Activation::Relu),
        }
    }
}

impl Module for ConvLayer {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Param>) {
        match self {
            ConvLayer::Gin(l) => l.collect_params(prefix, out),
            ConvLayer::Sage(l) => l.collect_params(prefix, out),
            ConvLayer::Poly(l) => l.collect_params(prefix, out),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Pooling {
    Readout(ReadoutKind),
    Sort(SortPoolReadout),
    Edge(EdgeScoreNet),
    Sag(SagPool),
    Set2Set(Set2Set),
}

impl Module for Pooling {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Param>) {
        match self {
            Pooling::Readout(_) => {}
            Pooling::Sort(p) => p.collect_params(prefix, out),
            Pooling::Edge(p) => p.collect_params(prefix, out),
            Pooling::Sag(p) => p.collect_params(prefix, out),
            Pooling::Set2Set(p) => p.collect_params(prefix, out),
        }
    }
}

/// Graph classifier over `[B, C, L]` trials on a fixed electrode graph.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: ModelSpec,
    pub graph: Graph,
    pub shift: Tensor,
    pub compressor: Compressor,
    pub convs: Vec<ConvLayer>,
    pub pooling: Pooling,
    pub head: (Linear, Linear),
    pub n_classes: usize,
}

impl Network {
    pub fn new(
        spec: &ModelSpec,
        graph: Graph,
        shift_kind: ShiftOperatorKind,
        samples: usize,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        let shift = graph.shift_operator(shift_kind)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = graph.n();
        let compressor = Compressor::new(&mut rng, n, samples)?;
        let f0 = Compressor::OUT;
        let h = spec.hidden;
        let mut convs = Vec::with_capacity(spec.depth);
        for d in 0..spec.depth {
            let fin = if d == 0 { f0 } else { h };
            convs.push(match spec.conv {
                ConvKind::Gin => ConvLayer::Gin(GinLayer::new(&mut rng, fin, h, h)?),
                ConvKind::Sage => {
                    let layer = GraphSageLayer::new(&mut rng, fin, h);
                    ConvLayer::Sage(match spec.sample {
                        Some(k) => layer.with_sampling(k),
                        None => layer,
                    })
                }
                ConvKind::Poly => ConvLayer::Poly(PolyFilterBank::new(&mut rng, spec.taps, fin, h)?),
            });
        }
        let (pooling, embed) = match spec.pool {
            PoolKind::Sum | PoolKind::Mean | PoolKind::Max => {
                let kind = match spec.pool {
                    PoolKind::Sum => ReadoutKind::Sum,
                    PoolKind::Mean => ReadoutKind::Mean,
                    _ => ReadoutKind::Max,
                };
                let width = if spec.conv == ConvKind::Gin { f0 + spec.depth * h } else { h };
                (Pooling::Readout(kind), width)
            }
            PoolKind::Sortpool => {
                let mut sp = SortPoolReadout::new(&mut rng, spec.sort_rho()?, h, spec.depth)?;
                if spec.sort_by == SortBy::Wl {
                    sp.order = SortOrder::from_coloring(&wl_refine_default(&graph));
                }
                let len = sp.output_len();
                (Pooling::Sort(sp), len)
            }
            PoolKind::Edgepool => (Pooling::Edge(EdgeScoreNet::new(&mut rng, h)), h),
            PoolKind::Sagpool => (Pooling::Sag(SagPool::new(&mut rng, h, spec.sag_rho()?)?), h),
            PoolKind::Set2set => (Pooling::Set2Set(Set2Set::new(&mut rng, h, h, spec.steps)?), h),
        };
        let head = (
            Linear::new(&mut rng, embed, spec.head_hidden, true),
            Linear::new(&mut rng, spec.head_hidden, n_classes, true),
        );
        Ok(Network {
            spec: spec.clone(),
            graph,
            shift,
            compressor,
            convs,
            pooling,
            head,
            n_classes,
        })
    }

    /// Builds the graph from the config's montage and edge policy.
    pub fn from_config(
        cfg: &ExperimentConfig,
        montage: &crate::montage::Montage,
        samples: usize,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let graph = montage.build_graph(&cfg.edge_policy()?)?;
        let mut net = Self::new(&cfg.model, graph, cfg.graph.shift_operator, samples, n_classes, seed)?;
        if !cfg.compressor.batch_norm {
            net.compressor = net.compressor.without_batch_norm();
        }
        Ok(net)
    }

    pub fn set_training(&self, on: bool) {
        self.compressor.set_training(on);
    }

    pub fn param_count(&self) -> usize {
        count_learnable(&self.params())
    }

    /// Node features after each round: compressor output, then every conv.
    pub fn node_rounds(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut rounds = vec![self.compressor.forward(x)?];
        for conv in &self.convs {
            let h = conv.forward(&self.graph, &self.shift, rounds.last().unwrap())?;
            rounds.push(h);
        }
        Ok(rounds)
    }

    /// Graph-level embedding `[B, D]`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let rounds = self.node_rounds(x)?;
        let last = rounds.last().unwrap().clone();
        let gin = self.spec.conv == ConvKind::Gin;
        match &self.pooling {
            Pooling::Readout(ReadoutKind::Sum) if gin => gin_graph_embedding(&rounds),
            Pooling::Readout(kind) if gin => readout(&Tensor::concat(&rounds, 2)?, *kind),
            Pooling::Readout(kind) => readout(&last, *kind),
            Pooling::Sort(sp) => {
                let h = Tensor::concat(&rounds[1..], 2)?;
                per_graph(&h, |g| sp.forward(g))
            }
            Pooling::Edge(net) => per_graph(&last, |h| {
                readout(&net.pool(&self.graph, h)?.features, ReadoutKind::Sum)
            }),
            Pooling::Sag(sp) => per_graph(&last, |h| readout(&sp.forward(&self.shift, h)?.1, ReadoutKind::Sum)),
            Pooling::Set2Set(s2s) => per_graph(&last, |h| s2s.forward(h)),
        }
    }

    /// Class logits `[B, n_classes]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let e = self.embed(x)?;
        self.head.1.forward(&self.head.0.forward(&e)?.relu())
    }
}

/// Applies `f` to each `[n, F]` slice of a `[B, n, F]` batch and stacks the
/// resulting vectors into `[B, D]`.
fn per_graph(h: &Tensor, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let (b, n, w) = (h.shape()[0], h.shape()[1], h.shape()[2]);
    let rows = (0..b)
        .map(|i| {
            let v = f(&h.narrow(0, i, 1)?.reshape(&[n, w])?)?;
            let d = v.numel();
            v.reshape(&[1, d])
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat(&rows, 0)
}

impl Module for Network {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Param>) {
        self.compressor.collect_params(&join_name(prefix, "compressor"), out);
        for (i, c) in self.convs.iter().enumerate() {
            c.collect_params(&join_name(prefix, &format!("conv{i}")), out);
        }
        self.pooling.collect_params(&join_name(prefix, "pool"), out);
        self.head.0.collect_params(&join_name(prefix, "head.fc1"), out);
        self.head.1.collect_params(&join_name(prefix, "head.fc2"), out);
    }
}
