//! Electrode montages on a unit-sphere head model and the edge-formation
//! policies that turn them into graphs.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph_core::{Edge, Graph};
use crate::numerics::Tensor;

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Electrode {
    pub name: String,
    pub pos: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Montage {
    electrodes: Vec<Electrode>,
}

/// 56-channel layout of the error-related-potential recordings.
pub const ERRP56: &[&str] = &[
    "Fp1", "Fp2", "AF7", "AF3", "AF4", "AF8", "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8",
    "FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8", "T7", "C5", "C3", "C1", "Cz",
    "C2", "C4", "C6", "T8", "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8", "P7",
    "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", "PO7", "POz", "PO8", "O1", "O2",
];

/// 16-channel layout used for the RSVP recordings and the synthetic fixtures.
pub const RSVP16: &[&str] = &[
    "Fp1", "Fp2", "F3", "Fz", "F4", "T7", "C3", "Cz", "C4", "T8", "P3", "Pz", "P4", "O1", "Oz", "O2",
];

/// Idealized unit-sphere position of a 10-10 label.
///
/// Axes: `x` toward the right ear, `y` toward the nasion, `z` toward the
/// vertex (Cz). Rows sit 18° apart along the midline; the outer ring (Fpz,
/// Fp1, AF7, F7, FT7, T7, …, Oz) lies at 72° from the vertex, 18° apart in
/// azimuth. Interior electrodes are interpolated linearly in the azimuthal
/// projection between the midline point and the ring point of their row.
pub fn ten_ten_position(label: &str) -> Option<[f64; 3]> {
    let upper = label.to_ascii_uppercase();
    let split = upper.find(|c: char| c.is_ascii_digit() || c == 'Z')?;
    let (row, col) = upper.split_at(split);
    // Rows counted from Cz; negative is anterior.
    let row_idx: i32 = match row {
        "FP" => -4,
        "AF" => -3,
        "F" => -2,
        "FC" | "FT" => -1,
        "C" | "T" => 0,
        "CP" | "TP" => 1,
        "P" => 2,
        "PO" => 3,
        "O" => 4,
        _ => return None,
    };
    let (lateral, side) = if col == "Z" {
        (0u32, 0.0)
    } else {
        let k: u32 = col.parse().ok()?;
        if k == 0 || k > 10 {
            return None;
        }
        (k.div_ceil(2), if k % 2 == 1 { -1.0 } else { 1.0 })
    };
    let ring = 72f64.to_radians();
    let step = 18f64.to_radians();
    // Azimuthal-equidistant projection: radius = polar angle from vertex.
    let (px, py) = if row_idx.abs() == 4 {
        // Fp and O rows live on the ring itself.
        let az = lateral as f64 * step;
        let (sx, cy) = (side * az.sin(), az.cos());
        let dir = if row_idx < 0 { 1.0 } else { -1.0 };
        (ring * sx, dir * ring * cy)
    } else {
        let mid = (0.0, -(row_idx as f64) * step);
        // Ring point of this row: azimuth measured from the nose, 18° per row.
        let az = (90.0 + 18.0 * row_idx as f64).to_radians();
        let end = (ring * az.sin(), ring * az.cos());
        let t = lateral as f64 / 4.0;
        if t > 1.0 {
            return None;
        }
        (side * t * end.0, mid.1 + t * (end.1 - mid.1))
    };
    let theta = (px * px + py * py).sqrt();
    if theta == 0.0 {
        return Some([0.0, 0.0, 1.0]);
    }
    let s = theta.sin() / theta;
    Some([px * s, py * s, theta.cos()])
}

impl Montage {
    pub fn new(electrodes: Vec<Electrode>) -> Result<Self> {
        if electrodes.is_empty() {
            return Err(Error::Montage("no electrodes".into()));
        }
        let mut seen = HashSet::new();
        for e in &electrodes {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Montage(format!("duplicate electrode name `{}`", e.name)));
            }
            let norm = e.pos.iter().map(|c| c * c).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Montage(format!(
                    "electrode `{}` has norm {norm}; coordinates must lie on the unit sphere",
                    e.name
                )));
            }
        }
        Ok(Self { electrodes })
    }

    /// Builds a montage from 10-10 labels using [`ten_ten_position`].
    pub fn from_labels(labels: &[&str]) -> Result<Self> {
        let electrodes = labels
            .iter()
            .map(|&name| {
                ten_ten_position(name)
                    .map(|pos| Electrode { name: name.to_string(), pos })
                    .ok_or_else(|| Error::Montage(format!("unknown 10-10 label `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(electrodes)
    }

    /// Either a built-in name (`errp56`, `rsvp16`) or a montage file path.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec {
            "errp56" => Self::from_labels(ERRP56),
            "rsvp16" => Self::from_labels(RSVP16),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Text format: one `name x y z` per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut electrodes = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Montage(format!("line {}: expected `name x y z`, got `{raw}`", lineno + 1));
            let [name, x, y, z] = parts.as_slice() else {
                return Err(bad());
            };
            let coord = |s: &str| s.parse::<f64>().map_err(|_| bad());
            electrodes.push(Electrode {
                name: name.to_string(),
                pos: [coord(x)?, coord(y)?, coord(z)?],
            });
        }
        Self::new(electrodes)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.electrodes {
            s.push_str(&format!("{} {:.9} {:.9} {:.9}\n", e.name, e.pos[0], e.pos[1], e.pos[2]));
        }
        s
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }

    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.electrodes.iter().position(|e| e.name == name)
    }

    /// Electrode indices with `x < 0`.
    pub fn left_hemisphere(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.electrodes[i].pos[0] < -1e-9).collect()
    }

    /// Reorders electrodes so the electrode at old index `i` moves to `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::Montage("permutation length differs from electrode count".into()));
        }
        let mut slots: Vec<Option<Electrode>> = vec![None; self.len()];
        for (i, &p) in perm.iter().enumerate() {
            slots[p] = Some(self.electrodes[i].clone());
        }
        let electrodes = slots
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Montage("not a permutation".into()))?;
        Self::new(electrodes)
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.electrodes[i].pos, self.electrodes[j].pos);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    /// Euclidean chord distances, `n × n`.
    pub fn pairwise_distances(&self) -> Tensor {
        let n = self.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = self.distance(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Tensor::new(&[n, n], d).expect("n×n")
    }

    pub fn build_graph(&self, policy: &EdgePolicy) -> Result<Graph> {
        graph_from_distances(&self.pairwise_distances().to_vec(), self.len(), policy)
    }
}

/// Applies an edge policy to a symmetric `n × n` distance matrix. All edges
/// get weight 1 and the result is always symmetric.
pub fn graph_from_distances(dist: &[f64], n: usize, policy: &EdgePolicy) -> Result<Graph> {
    if dist.len() != n * n {
        return Err(Error::Montage(format!("distance matrix has {} entries, expected {}", dist.len(), n * n)));
    }
    let mut adj = vec![false; n * n];
    match policy.kind {
        EdgeKind::Complete => {
            for i in 0..n {
                for j in 0..n {
                    adj[i * n + j] = i != j;
                }
            }
        }
        EdgeKind::Knn { k } => {
            if k == 0 {
                return Err(Error::EdgePolicy("knng:k=0".into()));
            }
            if k >= n {
                return Err(Error::KTooLarge { k, n });
            }
            for i in 0..n {
                let mut others: Vec<(f64, usize)> =
                    (0..n).filter(|&j| j != i).map(|j| (dist[i * n + j], j)).collect();
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, j) in others.iter().take(k) {
                    adj[i * n + j] = true;
                    adj[j * n + i] = true;
                }
            }
        }
        EdgeKind::Distance { d } => {
            for i in 0..n {
                for j in 0..n {
                    adj[i * n + j] = i != j && dist[i * n + j] < d;
                }
            }
        }
    }
    if policy.self_loops {
        for i in 0..n {
            adj[i * n + i] = true;
        }
    }
    let edges = (0..n * n)
        .filter(|&idx| adj[idx])
        .map(|idx| Edge { src: idx / n, dst: idx % n, weight: 1.0 })
        .collect();
    Graph::new(n, edges, true)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeKind {
    Complete,
    Knn { k: usize },
    Distance { d: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgePolicy {
    pub kind: EdgeKind,
    pub self_loops: bool,
}

impl EdgePolicy {
    pub fn complete() -> Self {
        Self { kind: EdgeKind::Complete, self_loops: false }
    }

    pub fn knn(k: usize) -> Self {
        Self { kind: EdgeKind::Knn { k }, self_loops: false }
    }

    pub fn distance(d: f64) -> Self {
        Self { kind: EdgeKind::Distance { d }, self_loops: false }
    }

    pub fn with_self_loops(mut self) -> Self {
        self.self_loops = true;
        self
    }
}

impl FromStr for EdgePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::EdgePolicy(s.to_string());
        let (head, loops) = match s.split_once(',') {
            Some((h, "self-loops")) => (h, true),
            Some(_) => return Err(bad()),
            None => (s, false),
        };
        let kind = if head == "complete" {
            EdgeKind::Complete
        } else if let Some(k) = head.strip_prefix("knng:k=") {
            let k: usize = k.parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(bad());
            }
            EdgeKind::Knn { k }
        } else if let Some(d) = head.strip_prefix("dist:d=") {
            let d: f64 = d.parse().map_err(|_| bad())?;
            if d.is_nan() || d < 0.0 {
                return Err(bad());
            }
            EdgeKind::Distance { d }
        } else {
            return Err(bad());
        };
        Ok(Self { kind, self_loops: loops })
    }
}

impl fmt::Display for EdgePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EdgeKind::Complete => write!(f, "complete")?,
            EdgeKind::Knn { k } => write!(f, "knng:k={k}")?,
            EdgeKind::Distance { d } => write!(f, "dist:d={d}")?,
        }
        if self.self_loops {
            write!(f, ",self-loops")?;
        }
        Ok(())
    }
}
