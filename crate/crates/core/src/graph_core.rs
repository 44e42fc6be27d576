//! Graphs over electrode sites and their four shift operators.
//!
//! The edge list is canonical. Dense `n × n` operator matrices are computed
//! once at construction; montages have at most a few dozen nodes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftOperatorKind {
    Adjacency,
    Laplacian,
    NormalizedAdjacency,
    NormalizedLaplacian,
}

impl ShiftOperatorKind {
    pub const ALL: [ShiftOperatorKind; 4] = [
        ShiftOperatorKind::Adjacency,
        ShiftOperatorKind::Laplacian,
        ShiftOperatorKind::NormalizedAdjacency,
        ShiftOperatorKind::NormalizedLaplacian,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ShiftOperatorKind::Adjacency => "adjacency",
            ShiftOperatorKind::Laplacian => "laplacian",
            ShiftOperatorKind::NormalizedAdjacency => "normalized-adjacency",
            ShiftOperatorKind::NormalizedLaplacian => "normalized-laplacian",
        }
    }
}

impl fmt::Display for ShiftOperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShiftOperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown shift operator `{s}`")))
    }
}

#[derive(Clone, Debug)]
struct Operators {
    adjacency: Vec<f64>,
    degree: Vec<f64>,
    laplacian: Option<Vec<f64>>,
    normalized_adjacency: Vec<f64>,
    normalized_laplacian: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    symmetric: bool,
    neighbors: Vec<Vec<usize>>,
    ops: Operators,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.symmetric == other.symmetric && self.edges == other.edges
    }
}

impl Graph {
    /// Validates and canonicalizes (sorts) the edge list, then computes all
    /// operator matrices.
    pub fn new(n: usize, edges: Vec<Edge>, symmetric: bool) -> Result<Self> {
        let mut edges = edges;
        for e in &edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) out of range for {n} nodes",
                    e.src, e.dst
                )));
            }
            if !e.weight.is_finite() {
                return Err(Error::Graph(format!("edge ({}, {}) has non-finite weight", e.src, e.dst)));
            }
        }
        edges.sort_by_key(|e| (e.src, e.dst));
        if let Some(w) = edges.windows(2).find(|w| (w[0].src, w[0].dst) == (w[1].src, w[1].dst)) {
            return Err(Error::Graph(format!("duplicate edge ({}, {})", w[0].src, w[0].dst)));
        }
        let mut neighbors = vec![Vec::new(); n];
        for e in &edges {
            neighbors[e.src].push(e.dst);
        }
        let mut adjacency = vec![0.0; n * n];
        for e in &edges {
            adjacency[e.src * n + e.dst] = e.weight;
        }
        if symmetric {
            for e in &edges {
                if adjacency[e.dst * n + e.src] != e.weight || !neighbors[e.dst].contains(&e.src) {
                    return Err(Error::Graph(format!(
                        "graph flagged symmetric but edge ({}, {}) has no matching reverse",
                        e.src, e.dst
                    )));
                }
            }
        }
        let ops = Operators::compute(n, &edges, adjacency);
        Ok(Self {
            n,
            edges,
            symmetric,
            neighbors,
            ops,
        })
    }

    /// Symmetric unit-weight graph from undirected pairs (both directions are added).
    pub fn undirected(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(2 * pairs.len());
        for &(i, j) in pairs {
            edges.push(Edge { src: i, dst: j, weight: 1.0 });
            if i != j {
                edges.push(Edge { src: j, dst: i, weight: 1.0 });
            }
        }
        Self::new(n, edges, true)
    }

    pub fn empty(n: usize) -> Self {
        Self::new(n, Vec::new(), true).expect("empty graph is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn has_self_loops(&self) -> bool {
        self.edges.iter().any(|e| e.src == e.dst)
    }

    /// Out-neighbors of `v` in ascending order (includes `v` itself when it has a self-loop).
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> f64 {
        self.ops.degree[v]
    }

    /// Undirected edges `(i, j)` with `i < j` in ascending order; self-loops excluded.
    pub fn undirected_pairs(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .filter(|e| e.src < e.dst)
            .map(|e| (e.src, e.dst))
            .collect()
    }

    /// Relabels node `v` as `perm[v]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::Graph("permutation length differs from node count".into()));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge { src: perm[e.src], dst: perm[e.dst], weight: e.weight })
            .collect();
        Self::new(self.n, edges, self.symmetric)
    }

    fn matrix(&self, data: &[f64]) -> Tensor {
        Tensor::new(&[self.n, self.n], data.to_vec()).expect("n×n operator")
    }

    /// `A[i][j] = w_ij`.
    pub fn adjacency(&self) -> Tensor {
        self.matrix(&self.ops.adjacency)
    }

    /// Diagonal row sums of the adjacency.
    pub fn degree_matrix(&self) -> Tensor {
        let n = self.n;
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = self.ops.degree[i];
        }
        self.matrix(&d)
    }

    /// `L = D − A`; undefined with self-loops.
    pub fn laplacian(&self) -> Result<Tensor> {
        self.ops
            .laplacian
            .as_deref()
            .map(|l| self.matrix(l))
            .ok_or(Error::SelfLoops)
    }

    /// `D^{-1/2} A D^{-1/2}` with `0^{-1/2} := 0` for isolated nodes.
    pub fn normalized_adjacency(&self) -> Tensor {
        self.matrix(&self.ops.normalized_adjacency)
    }

    /// `I − D^{-1/2} A D^{-1/2}`.
    pub fn normalized_laplacian(&self) -> Tensor {
        self.matrix(&self.ops.normalized_laplacian)
    }

    pub fn shift_operator(&self, kind: ShiftOperatorKind) -> Result<Tensor> {
        match kind {
            ShiftOperatorKind::Adjacency => Ok(self.adjacency()),
            ShiftOperatorKind::Laplacian => self.laplacian(),
            ShiftOperatorKind::NormalizedAdjacency => Ok(self.normalized_adjacency()),
            ShiftOperatorKind::NormalizedLaplacian => Ok(self.normalized_laplacian()),
        }
    }

    /// Plain-text edge list: `n <count> symmetric <0|1>` then one `i j w` per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("n {} symmetric {}\n", self.n, u8::from(self.symmetric));
        for e in &self.edges {
            s.push_str(&format!("{} {} {}\n", e.src, e.dst, e.weight));
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty edge list".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (n, symmetric) = match fields.as_slice() {
            ["n", n, "symmetric", s] => {
                let n = n.parse().map_err(|_| Error::Format(format!("bad node count in `{header}`")))?;
                let s = match *s {
                    "0" => false,
                    "1" => true,
                    _ => return Err(Error::Format(format!("bad symmetric flag in `{header}`"))),
                };
                (n, s)
            }
            _ => return Err(Error::Format(format!("bad edge-list header `{header}`"))),
        };
        let mut edges = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Format(format!("bad edge line `{line}`"));
            let [i, j, w] = parts.as_slice() else {
                return Err(bad());
            };
            edges.push(Edge {
                src: i.parse().map_err(|_| bad())?,
                dst: j.parse().map_err(|_| bad())?,
                weight: w.parse().map_err(|_| bad())?,
            });
        }
        Self::new(n, edges, symmetric)
    }
}

impl Operators {
    fn compute(n: usize, edges: &[Edge], adjacency: Vec<f64>) -> Self {
        let degree: Vec<f64> = (0..n).map(|i| adjacency[i * n..(i + 1) * n].iter().sum()).collect();
        let has_loops = edges.iter().any(|e| e.src == e.dst);
        let laplacian = (!has_loops).then(|| {
            let mut l: Vec<f64> = adjacency.iter().map(|a| -a).collect();
            for i in 0..n {
                l[i * n + i] += degree[i];
            }
            l
        });
        let inv_sqrt: Vec<f64> = degree
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let mut normalized_adjacency = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                normalized_adjacency[i * n + j] = inv_sqrt[i] * adjacency[i * n + j] * inv_sqrt[j];
            }
        }
        let mut normalized_laplacian: Vec<f64> = normalized_adjacency.iter().map(|a| -a).collect();
        for i in 0..n {
            normalized_laplacian[i * n + i] += 1.0;
        }
        Self {
            adjacency,
            degree,
            laplacian,
            normalized_adjacency,
            normalized_laplacian,
        }
    }
}
