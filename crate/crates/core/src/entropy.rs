//! Directed structural entropy of a graph under no partition, a flat
//! partition, or a partition tree, plus closed-form deltas for the two
//! tree edits the builder uses.

use serde::Serialize;

use crate::error::{EdenError, Result};
use crate::graph::DiGraph;
use crate::tree::{NodeKind, PartitionTree, TreeNodeId};

/// Assignment of every graph node to a block `0..blocks`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    blocks: usize,
}

impl Partition {
    /// Every block id in `0..=max` must be used at least once.
    pub fn new(assignment: Vec<usize>, n: usize) -> Result<Self> {
        if assignment.len() != n {
            return Err(EdenError::Partition(format!(
                "assignment covers {} nodes, graph has {n}",
                assignment.len()
            )));
        }
        let blocks = assignment.iter().max().map_or(0, |&b| b + 1);
        let mut used = vec![false; blocks];
        for &b in &assignment {
            used[b] = true;
        }
        if let Some(empty) = used.iter().position(|&u| !u) {
            return Err(EdenError::Partition(format!("block {empty} is empty")));
        }
        Ok(Partition { assignment, blocks })
    }

    pub fn singletons(n: usize) -> Self {
        Partition {
            assignment: (0..n).collect(),
            blocks: n,
        }
    }

    pub fn single_block(n: usize) -> Self {
        Partition {
            assignment: vec![0; n],
            blocks: usize::from(n > 0),
        }
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block_of(&self, v: usize) -> usize {
        self.assignment[v]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReport {
    pub value: f64,
    pub in_part: f64,
    pub out_part: f64,
    /// Contribution of each block, for flat partitions only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_block: Option<Vec<f64>>,
}

/// `-p ln p` with the convention `0 ln 0 = 0`.
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.ln()
    } else {
        0.0
    }
}

fn edge_count(g: &DiGraph) -> Result<f64> {
    match g.m() {
        0 => Err(EdenError::EmptyGraph),
        m => Ok(m as f64),
    }
}

/// Entropy of the degree distributions with no partition.
pub fn one_dim_entropy(g: &DiGraph) -> Result<EntropyReport> {
    let m = edge_count(g)?;
    let (mut hin, mut hout) = (0.0, 0.0);
    for v in 0..g.n() {
        hin += plogp(g.in_degree(v) as f64 / m);
        hout += plogp(g.out_degree(v) as f64 / m);
    }
    Ok(EntropyReport {
        value: hin + hout,
        in_part: hin,
        out_part: hout,
        per_block: None,
    })
}

/// Two-level entropy: root, one node per block, one leaf per graph node.
/// A node's own term is weighted by the edges crossing its boundary, so a
/// self-loop adds to its volume but not to its weight, exactly as in
/// [`tree_entropy`] on the matching two-level tree.
pub fn two_dim_entropy(g: &DiGraph, p: &Partition) -> Result<EntropyReport> {
    if p.assignment.len() != g.n() {
        return Err(EdenError::Partition(format!(
            "assignment covers {} nodes, graph has {}",
            p.assignment.len(),
            g.n()
        )));
    }
    let m = edge_count(g)?;
    let k = p.blocks;
    let (mut vol_in, mut vol_out) = (vec![0u64; k], vec![0u64; k]);
    let (mut cut_in, mut cut_out) = (vec![0u64; k], vec![0u64; k]);
    for v in 0..g.n() {
        vol_in[p.block_of(v)] += g.in_degree(v) as u64;
        vol_out[p.block_of(v)] += g.out_degree(v) as u64;
    }
    for (u, v) in g.edges() {
        let (bu, bv) = (p.block_of(u), p.block_of(v));
        if bu != bv {
            cut_out[bu] += 1;
            cut_in[bv] += 1;
        }
    }
    let mut per_block = vec![0.0; k];
    let (mut hin, mut hout) = (0.0, 0.0);
    for v in 0..g.n() {
        let b = p.block_of(v);
        let (din, dout) = (g.in_degree(v) as f64, g.out_degree(v) as f64);
        let looped = f64::from(u8::from(g.has_self_loop(v)));
        let tin = if din > 0.0 {
            -((din - looped) / m) * (din / vol_in[b] as f64).ln()
        } else {
            0.0
        };
        let tout = if dout > 0.0 {
            -((dout - looped) / m) * (dout / vol_out[b] as f64).ln()
        } else {
            0.0
        };
        hin += tin;
        hout += tout;
        per_block[b] += tin + tout;
    }
    for b in 0..k {
        let tin = cut_term(cut_in[b], vol_in[b], m as u64, m);
        let tout = cut_term(cut_out[b], vol_out[b], m as u64, m);
        hin += tin;
        hout += tout;
        per_block[b] += tin + tout;
    }
    Ok(EntropyReport {
        value: hin + hout,
        in_part: hin,
        out_part: hout,
        per_block: Some(per_block),
    })
}

/// `-(g/m) ln(vol/vol_parent)`, zero whenever nothing crosses the boundary.
fn cut_term(g: u64, vol: u64, vol_parent: u64, m: f64) -> f64 {
    if g == 0 || vol == 0 {
        0.0
    } else {
        -(g as f64 / m) * (vol as f64 / vol_parent as f64).ln()
    }
}

fn check_tree(g: &DiGraph, t: &PartitionTree) -> Result<f64> {
    if t.num_leaves() != g.n() {
        return Err(EdenError::Structure(format!(
            "tree has {} leaves, graph has {} nodes",
            t.num_leaves(),
            g.n()
        )));
    }
    if t.volume() != g.m() as u64 {
        return Err(EdenError::Structure("tree caches were built for a different graph".into()));
    }
    edge_count(g)
}

/// Entropy of a partition tree, read from the node caches.
pub fn tree_entropy(g: &DiGraph, t: &PartitionTree) -> Result<EntropyReport> {
    let m = check_tree(g, t)?;
    let (mut hin, mut hout) = (0.0, 0.0);
    for node in t.nodes() {
        let Some(p) = node.parent else { continue };
        let parent = t.node(p)?;
        hin += cut_term(node.g_in, node.vol_in, parent.vol_in, m);
        hout += cut_term(node.g_out, node.vol_out, parent.vol_out, m);
    }
    Ok(EntropyReport {
        value: hin + hout,
        in_part: hin,
        out_part: hout,
        per_block: None,
    })
}

/// Closed-form entropy change of merging two root children whose blocks
/// share `w` edges (both directions) into a node of the given volumes.
/// Candidates with equal `w` and equal volume products get bit-identical
/// values, so exact ties fall through to the id order.
pub(crate) fn combine_delta(m: u64, w: u64, vol_in: u64, vol_out: u64) -> f64 {
    if w == 0 {
        return 0.0;
    }
    let product = vol_in as u128 * vol_out as u128;
    let square = m as u128 * m as u128;
    (w as f64 / m as f64) * (product as f64 / square as f64).ln()
}

/// Entropy change of `combine(a, b)`; negative means the merge helps.
pub fn delta_combine(g: &DiGraph, t: &PartitionTree, a: TreeNodeId, b: TreeNodeId) -> Result<f64> {
    check_tree(g, t)?;
    let root = t.root();
    let (na, nb) = (t.node(a)?, t.node(b)?);
    if a == b || na.parent != Some(root) || nb.parent != Some(root) {
        return Err(EdenError::Structure(format!("{a} and {b} are not distinct root children")));
    }
    let w = t.crossing_between(g, a, b);
    Ok(combine_delta(t.volume(), w, na.vol_in + nb.vol_in, na.vol_out + nb.vol_out))
}

/// Entropy change of `detach(v)`; never negative.
pub fn delta_detach(g: &DiGraph, t: &PartitionTree, v: TreeNodeId) -> Result<f64> {
    let m = check_tree(g, t)?;
    let node = t.node(v)?;
    if matches!(node.kind, NodeKind::Root | NodeKind::Leaf) {
        return Err(EdenError::Structure(format!("node {v} cannot be detached")));
    }
    Ok(detach_delta(t, v, m))
}

pub(crate) fn detach_delta(t: &PartitionTree, v: TreeNodeId, m: f64) -> f64 {
    let node = t.get(v).unwrap();
    let parent = t.get(node.parent.unwrap()).unwrap();
    let (mut sum_in, mut sum_out) = (0u64, 0u64);
    for &c in &node.children {
        let c = t.get(c).unwrap();
        sum_in += c.g_in;
        sum_out += c.g_out;
    }
    let side = |sum: u64, gv: u64, vol: u64, vol_p: u64| {
        if sum == gv || vol == 0 {
            0.0
        } else {
            ((sum - gv) as f64 / m) * (vol_p as f64 / vol as f64).ln()
        }
    };
    side(sum_in, node.g_in, node.vol_in, parent.vol_in) + side(sum_out, node.g_out, node.vol_out, parent.vol_out)
}
