//! Graph pooling operators: SortPool, EdgePool, SagPool and Set2Set.
//!
//! All operators here work on a single graph's `[n, F]` node matrix; batched
//! callers loop over trials because the selected nodes differ per trial.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph_core::{Edge, Graph};
use crate::layers::{graph_propagate, uniform, Linear};
use crate::numerics::{join_name, lstm_cell, LstmWeights, Module, Param, ParamKind, Tensor};
use crate::wl::WlColoring;

/// Descending lexicographic comparison of two rows split into `blocks`
/// blocks of width `block`, last block first.
fn cmp_blocks(a: &[f64], b: &[f64], block: usize) -> Ordering {
    let blocks = a.len() / block.max(1);
    for k in (0..blocks).rev() {
        let (ra, rb) = (&a[k * block..(k + 1) * block], &b[k * block..(k + 1) * block]);
        for (x, y) in ra.iter().zip(rb) {
            match y.total_cmp(x) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
    }
    Ordering::Equal
}

/// Row order used by SortPool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SortOrder {
    /// Descending by the last round's feature block, then earlier rounds.
    Features,
    /// Descending by structural WL colors (last round first), then features.
    Wl(Vec<Vec<u32>>),
}

impl SortOrder {
    pub fn from_coloring(c: &WlColoring) -> Self {
        SortOrder::Wl(c.rounds.clone())
    }
}

/// Node permutation that SortPool applies to `h: [n, K·F]`.
pub fn sort_order(h: &Tensor, block: usize, order: &SortOrder) -> Result<Vec<usize>> {
    if h.rank() != 2 || block == 0 || !h.shape()[1].is_multiple_of(block) {
        return Err(Error::invalid("sortpool", format!("cannot split {:?} into blocks of {block}", h.shape())));
    }
    let (n, w) = (h.shape()[0], h.shape()[1]);
    let data = h.to_vec();
    let row = |i: usize| &data[i * w..(i + 1) * w];
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        let by_wl = match order {
            SortOrder::Features => Ordering::Equal,
            SortOrder::Wl(rounds) => rounds
                .iter()
                .rev()
                .map(|r| r[b].cmp(&r[a]))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal),
        };
        by_wl.then_with(|| cmp_blocks(row(a), row(b), block)).then(a.cmp(&b))
    });
    Ok(idx)
}

/// Sorts, truncates or zero-pads to `rho` rows, and flattens to `rho·K·F`.
pub fn sortpool(h: &Tensor, block: usize, rho: usize, order: &SortOrder) -> Result<Tensor> {
    if rho == 0 {
        return Err(Error::Config("sortpool rho must be at least 1".into()));
    }
    let idx = sort_order(h, block, order)?;
    let (n, w) = (h.shape()[0], h.shape()[1]);
    let keep: Vec<usize> = idx.into_iter().take(rho).collect();
    let mut rows = h.gather_rows(&keep)?;
    if n < rho {
        rows = Tensor::concat(&[rows, Tensor::zeros(&[rho - n, w])], 0)?;
    }
    rows.reshape(&[rho * w])
}

/// SortPool followed by its 1-D convolution stage: a conv whose kernel and
/// stride span one node row, ReLU, and max-pooling over node pairs.
#[derive(Clone, Debug)]
pub struct SortPoolReadout {
    pub rho: usize,
    pub block: usize,
    pub row_width: usize,
    pub conv_weight: Tensor,
    pub conv_bias: Tensor,
    pub order: SortOrder,
}

impl SortPoolReadout {
    pub const CHANNELS: usize = 16;

    pub fn new(rng: &mut impl Rng, rho: usize, block: usize, rounds: usize) -> Result<Self> {
        if rho == 0 || block == 0 || rounds == 0 {
            return Err(Error::Config("sortpool needs rho, feature width and rounds ≥ 1".into()));
        }
        let width = block * rounds;
        let bound = 1.0 / (width as f64).sqrt();
        Ok(SortPoolReadout {
            rho,
            block,
            row_width: width,
            conv_weight: uniform(rng, &[Self::CHANNELS, 1, width], bound),
            conv_bias: uniform(rng, &[Self::CHANNELS], bound),
            order: SortOrder::Features,
        })
    }

    pub fn output_len(&self) -> usize {
        Self::CHANNELS * (self.rho / 2).max(1)
    }

    /// `h_concat: [n, K·F]` → `[output_len]`.
    pub fn forward(&self, h_concat: &Tensor) -> Result<Tensor> {
        let flat = sortpool(h_concat, self.block, self.rho, &self.order)?;
        let x = flat.reshape(&[1, 1, self.rho * self.row_width])?;
        let y = x
            .conv1d(&self.conv_weight, Some(&self.conv_bias), self.row_width, 1)?
            .relu();
        let c = Self::CHANNELS;
        let pooled = if self.rho >= 2 {
            let half = self.rho / 2;
            y.narrow(2, 0, 2 * half)?.reshape(&[c, half, 2])?.max_axis(2)?.0
        } else {
            y
        };
        pooled.reshape(&[self.output_len()])
    }
}

impl Module for SortPoolReadout {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Param>) {
        out.push(Param {
            name: join_name(prefix, "conv.weight"),
            tensor: self.conv_weight.clone(),
            kind: ParamKind::Weight,
        });
        out.push(Param {
            name: join_name(prefix, "conv.bias"),
            tensor: self.conv_bias.clone(),
            kind: ParamKind::Bias,
        });
    }
}

/// Learnable edge scorer `w·[h_i, h_j] + b`.
#[derive(Clone, Debug)]
pub struct EdgeScoreNet {
    pub linear: Linear,
}

#[derive(Clone, Debug)]
pub struct EdgePoolOutput {
    pub graph: Graph,
    pub features: Tensor,
    /// Members of each output node, sorted; clusters ordered by lowest member.
    pub clusters: Vec<Vec<usize>>,
    /// Score of every undirected edge `(i, j)`, `i < j`, in `undirected_pairs` order.
    pub scores: Vec<((usize, usize), f64)>,
}

impl EdgeScoreNet {
    pub fn new(rng: &mut impl Rng, features: usize) -> Self {
        EdgeScoreNet {
            linear: Linear::new(rng, 2 * features, 1, true),
        }
    }

    /// Contracts a greedy maximal matching in descending score order.
    ///
    /// Each directed edge gets a raw score; a softmax runs over all directed
    /// edges and an undirected edge's score is the sum of its two directions,
    /// which keeps the result independent of node labelling.
    pub fn pool(&self, g: &Graph, h: &Tensor) -> Result<EdgePoolOutput> {
        if !g.is_symmetric() {
            return Err(Error::Graph("edge pooling needs a symmetric graph".into()));
        }
        if h.rank() != 2 || h.shape()[0] != g.n() {
            return Err(Error::shape("edgepool", h.shape(), &[g.n()]));
        }
        let n = g.n();
        let pairs = g.undirected_pairs();
        if pairs.is_empty() {
            return Ok(EdgePoolOutput {
                graph: g.clone(),
                features: h.clone(),
                clusters: (0..n).map(|v| vec![v]).collect(),
                scores: Vec::new(),
            });
        }
        let directed: Vec<(usize, usize)> = pairs.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect();
        let src: Vec<usize> = directed.iter().map(|e| e.0).collect();
        let dst: Vec<usize> = directed.iter().map(|e| e.1).collect();
        let feats = Tensor::concat(&[h.gather_rows(&src)?, h.gather_rows(&dst)?], 1)?;
        let raw = self.linear.forward(&feats)?.reshape(&[directed.len()])?;
        let dir_scores = raw.softmax()?;
        // Directed entries 2e and 2e+1 belong to undirected edge e.
        let e_count = pairs.len();
        let score = dir_scores.reshape(&[e_count, 2])?.sum_axis(1)?;
        let sv = score.to_vec();

        let mut visit: Vec<usize> = (0..e_count).collect();
        visit.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(pairs[a].cmp(&pairs[b])));
        let mut taken = vec![false; n];
        let mut edge_of = vec![e_count; n];
        for e in visit {
            let (i, j) = pairs[e];
            if !taken[i] && !taken[j] {
                taken[i] = true;
                taken[j] = true;
                edge_of[i] = e;
                edge_of[j] = e;
            }
        }

        let mut cluster_of = vec![usize::MAX; n];
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for v in 0..n {
            if cluster_of[v] != usize::MAX {
                continue;
            }
            let members = if edge_of[v] < e_count {
                let (i, j) = pairs[edge_of[v]];
                vec![i, j]
            } else {
                vec![v]
            };
            for &m in &members {
                cluster_of[m] = clusters.len();
            }
            clusters.push(members);
        }

        // Contracted nodes are weighted by their edge score, singletons by 1.
        let coef_table = Tensor::concat(&[score, Tensor::new(&[1], vec![1.0])?], 0)?;
        let coef = coef_table.gather_rows(&edge_of)?;
        let scaled = h.scale_rows(&coef)?;
        let m = clusters.len();
        let mut member = vec![0.0; m * n];
        for (c, ms) in clusters.iter().enumerate() {
            for &v in ms {
                member[c * n + v] = 1.0;
            }
        }
        let features = Tensor::new(&[m, n], member)?.matmul(&scaled)?;

        let mut links: BTreeSet<(usize, usize)> = BTreeSet::new();
        for e in g.edges() {
            let (a, b) = (cluster_of[e.src], cluster_of[e.dst]);
            if a != b || e.src == e.dst {
                links.insert((a, b));
            }
        }
        let edges = links
            .into_iter()
            .map(|(src, dst)| Edge { src, dst, weight: 1.0 })
            .collect();
        Ok(EdgePoolOutput {
            graph: Graph::new(m, edges, true)?,
            features,
            clusters,
            scores: pairs.into_iter().zip(sv).collect(),
        })
    }
}

impl Module for EdgeScoreNet {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Param>) {
        self.linear.collect_params(&join_name(prefix, "score"), out);
    }
}

/// Self-attention pooling: `Z = tanh(S X W_att)`, keep the top `⌈ρ n⌉` nodes.
#[derive(Clone, Debug)]
pub struct SagPool {
    /// `[F, 1]`
    pub w_att: Tensor,
    pub rho: f64,
}

impl SagPool {
    pub fn new(rng: &mut impl Rng, features: usize, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::Config(format!("sagpool rho must lie in (0, 1], got {rho}")));
        }
        Ok(SagPool {
            w_att: uniform(rng, &[features, 1], 1.0 / (features.max(1) as f64).sqrt()),
            rho,
        })
    }

    pub fn keep_count(&self, n: usize) -> usize {
        ((self.rho * n as f64).ceil() as usize).clamp(1.min(n), n)
    }

    pub fn scores(&self, s: &Tensor, x: &Tensor) -> Result<Tensor> {
        Ok(graph_propagate(s, x)?.matmul(&self.w_att)?.tanh())
    }

    /// Returns kept indices (descending score, ties to lower index) and the
    /// kept rows scaled by their scores.
    pub fn forward(&self, s: &Tensor, x: &Tensor) -> Result<(Vec<usize>, Tensor)> {
        let z = self.scores(s, x)?;
        let zv = z.to_vec();
        let idx = top_rank(&zv, self.keep_count(zv.len()));
        let out = x.gather_rows(&idx)?.scale_rows(&z.gather_rows(&idx)?)?;
        Ok((idx, out))
    }
}

/// Indices of the `k` largest values; ties go to the lower index.
pub fn top_rank(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

impl Module for SagPool {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Param>) {
        out.push(Param {
            name: join_name(prefix, "w_att"),
            tensor: self.w_att.clone(),
            kind: ParamKind::Weight,
        });
    }
}

/// LSTM-driven attention readout.
#[derive(Clone, Debug)]
pub struct Set2Set {
    pub lstm: LstmWeights,
    pub steps: usize,
    pub dense: Linear,
}

impl Set2Set {
    pub const DEFAULT_STEPS: usize = 3;

    pub fn new(rng: &mut impl Rng, features: usize, out: usize, steps: usize) -> Result<Self> {
        if steps == 0 || features == 0 {
            return Err(Error::Config("set2set needs steps ≥ 1 and features ≥ 1".into()));
        }
        let f = features;
        let bound = 1.0 / (f as f64).sqrt();
        Ok(Set2Set {
            lstm: LstmWeights {
                w_ih: uniform(rng, &[2 * f, 4 * f], bound),
                w_hh: uniform(rng, &[f, 4 * f], bound),
                bias: uniform(rng, &[4 * f], bound),
            },
            steps,
            dense: Linear::new(rng, 2 * f, out, true),
        })
    }

    pub fn features(&self) -> usize {
        self.lstm.hidden_size()
    }

    /// Final query `q*_T`, `[2F]`.
    pub fn query(&self, h: &Tensor) -> Result<Tensor> {
        let f = self.features();
        if h.rank() != 2 || h.shape()[1] != f || h.shape()[0] == 0 {
            return Err(Error::shape("set2set", h.shape(), &[f]));
        }
        let n = h.shape()[0];
        let mut q_star = Tensor::zeros(&[1, 2 * f]);
        let mut hid = Tensor::zeros(&[1, f]);
        let mut cell = Tensor::zeros(&[1, f]);
        for _ in 0..self.steps {
            let (hn, cn) = lstm_cell(&q_star, &hid, &cell, &self.lstm)?;
            hid = hn;
            cell = cn;
            let e = h.matmul(&hid.transpose()?)?.reshape(&[n])?;
            let alpha = e.softmax()?.reshape(&[1, n])?;
            let r = alpha.matmul(h)?;
            q_star = Tensor::concat(&[hid.clone(), r], 1)?;
        }
        q_star.reshape(&[2 * f])
    }

    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        Ok(self.dense.forward(&self.query(h)?)?.relu())
    }
}

impl Module for Set2Set {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Param>) {
        for (name, t, kind) in [
            ("lstm.w_ih", &self.lstm.w_ih, ParamKind::Weight),
            ("lstm.w_hh", &self.lstm.w_hh, ParamKind::Weight),
            ("lstm.bias", &self.lstm.bias, ParamKind::Bias),
        ] {
            out.push(Param {
                name: join_name(prefix, name),
                tensor: t.clone(),
                kind,
            });
        }
        self.dense.collect_params(&join_name(prefix, "dense"), out);
    }
}
