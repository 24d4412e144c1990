//! Per-depth views of a uniform-depth partition tree.

use indexmap::IndexMap;
use ndarray::{Array1, Array2, Axis};

use crate::error::{EdenError, Result};
use crate::graph::DiGraph;
use crate::propagation::{aggregate_neighborhood, partition_propagate};
use crate::tree::{NodeKind, PartitionTree, TreeNodeId};

/// Tree nodes at one depth, with the graph induced between their blocks.
#[derive(Debug, Clone)]
pub struct Level {
    pub depth: usize,
    pub nodes: Vec<TreeNodeId>,
    /// Edge `a -> b` whenever some graph edge leaves block `a` for block `b`.
    pub graph: DiGraph,
    /// Mean of the leaf embeddings under each node.
    pub embeddings: Array2<f64>,
}

/// Levels `0..=h` of a tree whose leaves all sit at depth `h`.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    levels: Vec<Level>,
    position: Vec<Option<(usize, usize)>>,
    kinds: Vec<Option<NodeKind>>,
    parent: Vec<Option<TreeNodeId>>,
    children: Vec<Vec<TreeNodeId>>,
    graph_node: Vec<Option<usize>>,
}

impl Hierarchy {
    /// `leaf_embeddings` has one row per graph node.
    pub fn new(g: &DiGraph, tree: &PartitionTree, leaf_embeddings: &Array2<f64>) -> Result<Self> {
        if leaf_embeddings.nrows() != g.n() || tree.num_leaves() != g.n() {
            return Err(EdenError::Dimension("embeddings, graph and tree disagree on n".into()));
        }
        let height = tree
            .uniform_leaf_depth()
            .ok_or_else(|| EdenError::Structure("leaves are not all at the same depth".into()))?;
        let cap = tree.capacity();
        let mut position = vec![None; cap];
        let mut kinds = vec![None; cap];
        let mut parent = vec![None; cap];
        let mut children = vec![Vec::new(); cap];
        let mut graph_node = vec![None; cap];
        for node in tree.nodes() {
            kinds[node.id] = Some(node.kind);
            parent[node.id] = node.parent;
            children[node.id] = node.children.clone();
            graph_node[node.id] = node.graph_node;
        }
        let raw_levels = tree.levels();
        debug_assert_eq!(raw_levels.len(), height + 1);
        // block_of[v] = index of v's ancestor at the current depth, filled bottom-up
        let mut block_of: Vec<usize> = vec![0; g.n()];
        let mut levels = Vec::with_capacity(height + 1);
        for (depth, nodes) in raw_levels.into_iter().enumerate().rev() {
            for (i, &t) in nodes.iter().enumerate() {
                position[t] = Some((depth, i));
            }
            let mut sums = Array2::zeros((nodes.len(), leaf_embeddings.ncols()));
            let mut counts = vec![0usize; nodes.len()];
            for (i, &t) in nodes.iter().enumerate() {
                for v in tree.leaves_under(t) {
                    block_of[v] = i;
                    sums.row_mut(i).scaled_add(1.0, &leaf_embeddings.row(v));
                    counts[i] += 1;
                }
            }
            for (mut row, &c) in sums.rows_mut().into_iter().zip(&counts) {
                row /= c as f64;
            }
            let edges: Vec<(usize, usize)> = g.edges().map(|(u, v)| (block_of[u], block_of[v])).filter(|(a, b)| a != b).collect();
            let (graph, _) = DiGraph::from_edges_with_report(nodes.len(), &edges)?;
            levels.push(Level {
                depth,
                nodes,
                graph,
                embeddings: sums,
            });
        }
        levels.reverse();
        Ok(Hierarchy {
            levels,
            position,
            kinds,
            parent,
            children,
            graph_node,
        })
    }

    pub fn height(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, depth: usize) -> &Level {
        &self.levels[depth]
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// `(depth, index within level)` of a tree node.
    pub fn position(&self, t: TreeNodeId) -> Result<(usize, usize)> {
        self.position
            .get(t)
            .copied()
            .flatten()
            .ok_or_else(|| EdenError::Contract(format!("tree node {t} is not part of the hierarchy")))
    }

    pub fn kind(&self, t: TreeNodeId) -> Option<NodeKind> {
        self.kinds.get(t).copied().flatten()
    }

    pub fn parent(&self, t: TreeNodeId) -> Option<TreeNodeId> {
        self.parent.get(t).copied().flatten()
    }

    pub fn children(&self, t: TreeNodeId) -> &[TreeNodeId] {
        self.children.get(t).map_or(&[], Vec::as_slice)
    }

    pub fn graph_node(&self, t: TreeNodeId) -> Option<usize> {
        self.graph_node.get(t).copied().flatten()
    }

    /// Other children of `t`'s parent, in child order.
    pub fn siblings(&self, t: TreeNodeId) -> Vec<TreeNodeId> {
        self.parent(t)
            .map(|p| self.children(p).iter().copied().filter(|&c| c != t).collect())
            .unwrap_or_default()
    }

    /// Non-filler internal nodes at `depth` (the partitions whose members sit one level below).
    pub fn partitions(&self, depth: usize) -> Vec<TreeNodeId> {
        self.levels[depth]
            .nodes
            .iter()
            .copied()
            .filter(|&t| matches!(self.kind(t), Some(NodeKind::Internal | NodeKind::Root)))
            .collect()
    }

    /// Embedding rows for the given tree nodes, which must share a depth.
    pub fn embeddings_of(&self, nodes: &[TreeNodeId]) -> Result<Array2<f64>> {
        let Some(&first) = nodes.first() else {
            return Err(EdenError::Contract("no nodes given".into()));
        };
        let depth = self.position(first)?.0;
        let mut idx = Vec::with_capacity(nodes.len());
        for &t in nodes {
            let (d, i) = self.position(t)?;
            if d != depth {
                return Err(EdenError::Contract(format!("tree node {t} is not at depth {depth}")));
            }
            idx.push(i);
        }
        Ok(self.levels[depth].embeddings.select(Axis(0), &idx))
    }
}

/// Memoised neighbourhood summaries: the aggregate of the propagated
/// embeddings of `children(p)`, or of `children(p) ∪ children(q)`.
#[derive(Debug, Clone, Default)]
pub struct NeighborhoodCache {
    tau: f64,
    steps: usize,
    cache: IndexMap<(TreeNodeId, Option<TreeNodeId>), Array1<f64>>,
}

impl NeighborhoodCache {
    pub fn new(tau: f64, steps: usize) -> Self {
        NeighborhoodCache {
            tau,
            steps,
            cache: IndexMap::new(),
        }
    }

    pub fn get(&mut self, hier: &Hierarchy, p: TreeNodeId, q: Option<TreeNodeId>) -> Result<Array1<f64>> {
        if let Some(v) = self.cache.get(&(p, q)) {
            return Ok(v.clone());
        }
        let mut members: Vec<TreeNodeId> = hier.children(p).to_vec();
        if let Some(q) = q {
            members.extend_from_slice(hier.children(q));
        }
        if members.is_empty() {
            return Err(EdenError::Partition(format!("partition {p} has no members")));
        }
        let (depth, _) = hier.position(members[0])?;
        let level = hier.level(depth);
        let idx: Vec<usize> = members.iter().map(|&t| hier.position(t).map(|(_, i)| i)).collect::<Result<_>>()?;
        let propagated = partition_propagate(&level.graph, &idx, &level.embeddings, self.tau, self.steps)?;
        let agg = aggregate_neighborhood(&propagated)?;
        self.cache.insert((p, q), agg.clone());
        Ok(agg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_hkt, MergeStrategy};

    #[test]
    fn levels_cover_every_node() {
        let g = DiGraph::from_edges(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (2, 3)]).unwrap();
        let tree = build_hkt(&g, 3, MergeStrategy::Exhaustive).unwrap().tree;
        let z = Array2::from_shape_fn((6, 2), |(i, j)| (i * 2 + j) as f64);
        let h = Hierarchy::new(&g, &tree, &z).unwrap();
        assert_eq!(h.height(), 3);
        for level in h.levels() {
            let mut leaves: Vec<usize> = level.nodes.iter().flat_map(|&t| tree.leaves_under(t)).collect();
            leaves.sort();
            assert_eq!(leaves, (0..6).collect::<Vec<_>>());
        }
        assert_eq!(h.level(3).graph.m(), g.m());
        let root_row = h.level(0).embeddings.row(0).to_owned();
        assert_eq!(root_row, z.mean_axis(Axis(0)).unwrap());
        let mut cache = NeighborhoodCache::new(0.5, 5);
        let p = h.partitions(2)[0];
        let a = cache.get(&h, p, None).unwrap();
        assert_eq!(a.len(), 2);
    }
}
