use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use indexmap::{IndexMap, IndexSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PartitionTree, TreeNodeId};
use crate::entropy::{combine_delta, detach_delta, tree_entropy};
use crate::error::{EdenError, Result};
use crate::graph::DiGraph;
use crate::rng::salted_rng;

/// How Phase I chooses which two root children to merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MergeStrategy {
    /// Evaluate every pair.
    Exhaustive,
    /// Evaluate `samples` random adjacent pairs (default
    /// `max(64, ceil(sqrt(k(k-1)/2)))` for `k` root children).
    MonteCarlo { samples: Option<usize>, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MergeRecord {
    pub a: TreeNodeId,
    pub b: TreeNodeId,
    pub merged: TreeNodeId,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub tree: PartitionTree,
    pub entropy: f64,
    /// Phase I merges, using the ids of the uncompacted arena.
    pub merges: Vec<MergeRecord>,
    pub phase_one_height: usize,
    pub detached: usize,
    pub fillers: usize,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    delta: f64,
    lo: TreeNodeId,
    hi: TreeNodeId,
}

impl Candidate {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.delta
            .total_cmp(&other.delta)
            .then(self.lo.cmp(&other.lo))
            .then(self.hi.cmp(&other.hi))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so that `BinaryHeap` pops the smallest delta first.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

const NO_SLOT: usize = usize::MAX;

/// Root children of a tree together with the edge counts between their blocks.
struct Blocks {
    m: u64,
    slot_of: Vec<usize>,
    node_of: Vec<TreeNodeId>,
    vol: Vec<(u64, u64)>,
    adj: Vec<IndexMap<usize, u64>>,
    members: BTreeSet<TreeNodeId>,
    connected: IndexSet<usize>,
}

impl Blocks {
    fn from_tree(g: &DiGraph, t: &PartitionTree) -> Self {
        let tops = t.children(t.root()).to_vec();
        let mut slot_of = vec![NO_SLOT; t.capacity()];
        let mut block_of_vertex = vec![0usize; g.n()];
        let mut vol = Vec::with_capacity(tops.len());
        for (s, &top) in tops.iter().enumerate() {
            slot_of[top] = s;
            let node = t.get(top).unwrap();
            vol.push((node.vol_in, node.vol_out));
            for v in t.leaves_under(top) {
                block_of_vertex[v] = s;
            }
        }
        let mut adj = vec![IndexMap::new(); tops.len()];
        for (u, v) in g.edges() {
            let (a, b) = (block_of_vertex[u], block_of_vertex[v]);
            if a != b {
                *adj[a].entry(b).or_insert(0) += 1;
                *adj[b].entry(a).or_insert(0) += 1;
            }
        }
        let connected = (0..tops.len()).filter(|&s| !adj[s].is_empty()).collect();
        Blocks {
            m: t.volume(),
            slot_of,
            members: tops.iter().copied().collect(),
            node_of: tops,
            vol,
            adj,
            connected,
        }
    }

    fn candidate(&self, sa: usize, sb: usize, w: u64) -> Candidate {
        let (a, b) = (self.node_of[sa], self.node_of[sb]);
        let (va, vb) = (self.vol[sa], self.vol[sb]);
        Candidate {
            delta: combine_delta(self.m, w, va.0 + vb.0, va.1 + vb.1),
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    fn fallback(&self) -> Candidate {
        let mut it = self.members.iter().copied();
        let (lo, hi) = (it.next().unwrap(), it.next().unwrap());
        Candidate { delta: 0.0, lo, hi }
    }

    fn better_of_fallback(&self, best: Option<Candidate>) -> Candidate {
        match best {
            Some(c) if c.delta < 0.0 => c,
            _ => self.fallback(),
        }
    }

    fn scan_all(&self) -> Candidate {
        let best = self
            .connected
            .iter()
            .flat_map(|&s| self.adj[s].iter().map(move |(&x, &w)| (s, x, w)))
            .map(|(s, x, w)| self.candidate(s, x, w))
            .min_by(Candidate::key_cmp);
        self.better_of_fallback(best)
    }

    fn sample(&self, samples: Option<usize>, rng: &mut ChaCha8Rng) -> Candidate {
        let k = self.members.len();
        let pairs = k * (k - 1) / 2;
        let s = samples.unwrap_or_else(|| 64.max((pairs as f64).sqrt().ceil() as usize));
        if s >= pairs || self.connected.is_empty() {
            return self.scan_all();
        }
        let mut best: Option<Candidate> = None;
        for _ in 0..s {
            let sa = self.connected[rng.random_range(0..self.connected.len())];
            let neigh = &self.adj[sa];
            let (&sb, &w) = neigh.get_index(rng.random_range(0..neigh.len())).unwrap();
            let c = self.candidate(sa, sb, w);
            if best.is_none_or(|b| c.key_cmp(&b) == Ordering::Less) {
                best = Some(c);
            }
        }
        self.better_of_fallback(best)
    }

    fn weight(&self, a: TreeNodeId, b: TreeNodeId) -> u64 {
        let (sa, sb) = (self.slot_of[a], self.slot_of[b]);
        self.adj[sa].get(&sb).copied().unwrap_or(0)
    }

    /// Records that `a` and `b` became children of the new root child `n`.
    /// Returns the slot now owned by `n`.
    fn merge(&mut self, a: TreeNodeId, b: TreeNodeId, n: TreeNodeId) -> usize {
        let (sa, sb) = (self.slot_of[a], self.slot_of[b]);
        let (keep, drop) = if self.adj[sa].len() >= self.adj[sb].len() {
            (sa, sb)
        } else {
            (sb, sa)
        };
        self.adj[keep].swap_remove(&drop);
        let moved = std::mem::take(&mut self.adj[drop]);
        for (x, w) in moved {
            if x == keep {
                continue;
            }
            *self.adj[keep].entry(x).or_insert(0) += w;
            let nx = &mut self.adj[x];
            nx.swap_remove(&drop);
            *nx.entry(keep).or_insert(0) += w;
        }
        self.vol[keep] = (self.vol[sa].0 + self.vol[sb].0, self.vol[sa].1 + self.vol[sb].1);
        self.node_of[keep] = n;
        self.node_of[drop] = NO_SLOT;
        self.slot_of[a] = NO_SLOT;
        self.slot_of[b] = NO_SLOT;
        if self.slot_of.len() <= n {
            self.slot_of.resize(n + 1, NO_SLOT);
        }
        self.slot_of[n] = keep;
        self.members.remove(&a);
        self.members.remove(&b);
        self.members.insert(n);
        self.connected.swap_remove(&drop);
        if self.adj[keep].is_empty() {
            self.connected.swap_remove(&keep);
        }
        keep
    }

    fn is_member(&self, id: TreeNodeId) -> bool {
        self.slot_of.get(id).is_some_and(|&s| s != NO_SLOT)
    }
}

fn require_edges(g: &DiGraph, t: &PartitionTree) -> Result<()> {
    if g.m() == 0 {
        return Err(EdenError::EmptyGraph);
    }
    if t.num_leaves() != g.n() || t.volume() != g.m() as u64 {
        return Err(EdenError::Structure("tree does not belong to this graph".into()));
    }
    Ok(())
}

/// The pair of root children Phase I would merge next, smaller id first.
pub fn pick_two(g: &DiGraph, t: &PartitionTree, strategy: MergeStrategy) -> Result<(TreeNodeId, TreeNodeId)> {
    require_edges(g, t)?;
    if t.children(t.root()).len() < 2 {
        return Err(EdenError::Structure("the root has fewer than two children".into()));
    }
    let blocks = Blocks::from_tree(g, t);
    let c = match strategy {
        MergeStrategy::Exhaustive => blocks.scan_all(),
        MergeStrategy::MonteCarlo { samples, seed } => blocks.sample(samples, &mut salted_rng(seed, &[1])),
    };
    Ok((c.lo, c.hi))
}

/// The node Phase II would detach next: among internal nodes on a path to a
/// deepest leaf, the one whose removal raises the entropy least.
pub fn choose_node(g: &DiGraph, t: &PartitionTree) -> Result<TreeNodeId> {
    require_edges(g, t)?;
    let m = g.m() as f64;
    let depth = t.depths();
    let down = t.subtree_heights();
    let height = down[t.root()];
    let mut best: Option<(f64, TreeNodeId)> = None;
    for node in t.nodes() {
        if node.parent.is_none() || node.is_leaf() || depth[node.id].unwrap() + down[node.id] != height {
            continue;
        }
        let d = detach_delta(t, node.id, m);
        if best.is_none_or(|(bd, _)| d.total_cmp(&bd) == Ordering::Less) {
            best = Some((d, node.id));
        }
    }
    best.map(|(_, id)| id)
        .ok_or_else(|| EdenError::Structure("no internal node lies on a deepest path".into()))
}

fn phase_one(g: &DiGraph, t: &mut PartitionTree, strategy: MergeStrategy) -> Vec<MergeRecord> {
    let mut blocks = Blocks::from_tree(g, t);
    let mut merges = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut rng = None;
    match strategy {
        MergeStrategy::Exhaustive => {
            for &s in &blocks.connected {
                for (&x, &w) in &blocks.adj[s] {
                    if blocks.node_of[s] < blocks.node_of[x] {
                        heap.push(blocks.candidate(s, x, w));
                    }
                }
            }
        }
        MergeStrategy::MonteCarlo { seed, .. } => rng = Some(salted_rng(seed, &[1])),
    }
    while blocks.members.len() > 2 {
        let c = match strategy {
            MergeStrategy::Exhaustive => {
                while heap
                    .peek()
                    .is_some_and(|c: &Candidate| !(blocks.is_member(c.lo) && blocks.is_member(c.hi)))
                {
                    heap.pop();
                }
                match heap.peek() {
                    Some(&c) if c.delta < 0.0 => {
                        heap.pop();
                        c
                    }
                    _ => blocks.fallback(),
                }
            }
            MergeStrategy::MonteCarlo { samples, .. } => blocks.sample(samples, rng.as_mut().unwrap()),
        };
        let w = blocks.weight(c.lo, c.hi);
        let n = t.combine_with_crossing(c.lo, c.hi, w);
        let slot = blocks.merge(c.lo, c.hi, n);
        if matches!(strategy, MergeStrategy::Exhaustive) {
            for (&x, &wx) in &blocks.adj[slot] {
                heap.push(blocks.candidate(slot, x, wx));
            }
        }
        merges.push(MergeRecord {
            a: c.lo,
            b: c.hi,
            merged: n,
            delta: c.delta,
        });
    }
    merges
}

fn phase_three(t: &mut PartitionTree, h: usize) -> usize {
    let down = t.subtree_heights();
    let root = t.root();
    let mut inserted = 0;
    for v in t.bfs() {
        let Some(p) = t.parent(v) else { continue };
        let target = if p == root { h } else { down[p] };
        let mut top = v;
        for _ in 0..target - 1 - down[v] {
            top = t.insert_filler(top).expect("non-root node");
            inserted += 1;
        }
    }
    inserted
}

/// Builds a partition tree of height exactly `h` with every leaf at depth `h`.
pub fn build_hkt(g: &DiGraph, h: usize, strategy: MergeStrategy) -> Result<BuildOutcome> {
    if h < 2 {
        return Err(EdenError::Parameter(format!("tree height must be at least 2, got {h}")));
    }
    let mut t = PartitionTree::flat(g)?;
    require_edges(g, &t)?;
    let merges = phase_one(g, &mut t, strategy);
    let phase_one_height = t.height();
    let mut detached = 0;
    while t.height() > h {
        let v = choose_node(g, &t)?;
        t.detach(v)?;
        detached += 1;
    }
    let fillers = phase_three(&mut t, h);
    t.compact();
    let entropy = tree_entropy(g, &t)?.value;
    Ok(BuildOutcome {
        tree: t,
        entropy,
        merges,
        phase_one_height,
        detached,
        fillers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles() -> DiGraph {
        DiGraph::from_edges(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (2, 3)]).unwrap()
    }

    #[test]
    fn picks_the_lowest_delta_pair() {
        let g = DiGraph::from_edges(4, &[(0, 1), (1, 0), (2, 3)]).unwrap();
        let t = PartitionTree::flat(&g).unwrap();
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..4 {
            for b in a + 1..4 {
                let d = crate::entropy::delta_combine(&g, &t, a, b).unwrap();
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        assert_eq!(pick_two(&g, &t, MergeStrategy::Exhaustive).unwrap(), (best.1, best.2));
    }

    #[test]
    fn pick_two_falls_back_to_smallest_ids() {
        let g2 = DiGraph::from_edges(5, &[(3, 4)]).unwrap();
        let mut t2 = PartitionTree::flat(&g2).unwrap();
        t2.combine(&g2, 3, 4).unwrap();
        assert_eq!(pick_two(&g2, &t2, MergeStrategy::Exhaustive).unwrap(), (0, 1));
    }

    #[test]
    fn builds_uniform_trees() {
        let g = two_triangles();
        for h in 2..6 {
            for strategy in [MergeStrategy::Exhaustive, MergeStrategy::MonteCarlo { samples: None, seed: 3 }] {
                let out = build_hkt(&g, h, strategy).unwrap();
                out.tree.validate(&g).unwrap();
                assert_eq!(out.tree.height(), h);
                assert_eq!(out.tree.uniform_leaf_depth(), Some(h));
                assert_eq!(out.tree.root(), 0);
            }
        }
    }

    #[test]
    fn rejects_low_height() {
        assert!(matches!(
            build_hkt(&two_triangles(), 1, MergeStrategy::Exhaustive),
            Err(EdenError::Parameter(_))
        ));
    }

    #[test]
    fn separates_the_triangles() {
        let g = two_triangles();
        let out = build_hkt(&g, 2, MergeStrategy::Exhaustive).unwrap();
        let t = &out.tree;
        let mut blocks: Vec<Vec<usize>> = t
            .children(t.root())
            .iter()
            .map(|&c| {
                let mut l = t.leaves_under(c);
                l.sort();
                l
            })
            .collect();
        blocks.sort();
        assert_eq!(blocks, vec![vec![0, 1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn choose_node_only_on_deepest_paths() {
        let g = two_triangles();
        let mut t = PartitionTree::flat(&g).unwrap();
        let a = t.combine(&g, 0, 1).unwrap();
        let b = t.combine(&g, a, 2).unwrap();
        t.combine(&g, 3, 4).unwrap();
        let v = choose_node(&g, &t).unwrap();
        assert!(v == a || v == b);
    }
}
