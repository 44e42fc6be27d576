//! 1-dimensional Weisfeiler-Lehman color refinement.
//!
//! Each round a node's signature is its own color followed by the sorted
//! multiset of its neighbors' colors. Distinct signatures are ranked in
//! lexicographic order and the rank becomes the new color, so the integers
//! are deterministic and not merely partition-equivalent.

use std::collections::BTreeMap;

use crate::graph_core::Graph;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WlColoring {
    /// `rounds[r][v]` is the color of node `v` after `r` refinements.
    pub rounds: Vec<Vec<u32>>,
    pub converged: bool,
}

type Signature = (u32, Vec<u32>);

impl WlColoring {
    pub fn final_colors(&self) -> &[u32] {
        self.rounds.last().expect("round 0 always present")
    }

    pub fn num_colors(&self, round: usize) -> usize {
        distinct(&self.rounds[round])
    }
}

fn distinct(colors: &[u32]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

fn signatures(g: &Graph, colors: &[u32]) -> Vec<Signature> {
    (0..g.n())
        .map(|v| {
            let mut nb: Vec<u32> = g.neighbors(v).iter().map(|&u| colors[u]).collect();
            nb.sort_unstable();
            (colors[v], nb)
        })
        .collect()
}

/// Ranks signatures from several graphs in one shared table.
fn compress(all: &[Vec<Signature>]) -> Vec<Vec<u32>> {
    let mut table: BTreeMap<&Signature, u32> = BTreeMap::new();
    for sigs in all {
        for s in sigs {
            table.insert(s, 0);
        }
    }
    for (rank, v) in table.values_mut().enumerate() {
        *v = rank as u32;
    }
    all.iter()
        .map(|sigs| sigs.iter().map(|s| table[s]).collect())
        .collect()
}

/// Two colorings induce the same partition of the nodes.
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd: BTreeMap<u32, u32> = BTreeMap::new();
    let mut back: BTreeMap<u32, u32> = BTreeMap::new();
    a.iter().zip(b).all(|(&x, &y)| {
        *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x
    })
}

/// Refines until the partition stops changing or `max_rounds` refinements
/// have been made. Node features are ignored; self-loops count as neighbors.
pub fn wl_refine(g: &Graph, max_rounds: usize) -> WlColoring {
    let mut rounds = vec![vec![0u32; g.n()]];
    let mut converged = false;
    for _ in 0..max_rounds {
        let prev = rounds.last().unwrap();
        let next = compress(&[signatures(g, prev)]).pop().unwrap();
        let stable = same_partition(prev, &next);
        rounds.push(next);
        if stable {
            converged = true;
            break;
        }
    }
    WlColoring { rounds, converged }
}

/// Refinement with the default budget of `n` rounds.
pub fn wl_refine_default(g: &Graph) -> WlColoring {
    wl_refine(g, g.n().max(1))
}

/// Necessary condition for isomorphism: color histograms agree after every
/// one of `rounds` joint refinements.
pub fn wl_equivalent(g1: &Graph, g2: &Graph, rounds: usize) -> bool {
    if g1.n() != g2.n() {
        return false;
    }
    let mut c1 = vec![0u32; g1.n()];
    let mut c2 = vec![0u32; g2.n()];
    for _ in 0..rounds {
        let mut next = compress(&[signatures(g1, &c1), signatures(g2, &c2)]);
        c2 = next.pop().unwrap();
        c1 = next.pop().unwrap();
        let (mut h1, mut h2) = (c1.clone(), c2.clone());
        h1.sort_unstable();
        h2.sort_unstable();
        if h1 != h2 {
            return false;
        }
    }
    true
}
