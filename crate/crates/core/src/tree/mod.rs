//! Partition trees over a digraph.
//!
//! The tree is an arena of [`TreeNode`]s. Every node caches the in/out
//! volume of its leaf set and the number of edges crossing into and out of
//! that set; the entropy code reads these caches instead of the graph.

mod builder;
mod export;

pub use builder::{build_hkt, choose_node, pick_two, BuildOutcome, MergeStrategy};
pub use export::TreeDump;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{EdenError, Result};
use crate::graph::DiGraph;

pub type TreeNodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Root,
    Internal,
    Filler,
    Leaf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: TreeNodeId,
    pub parent: Option<TreeNodeId>,
    pub children: Vec<TreeNodeId>,
    pub kind: NodeKind,
    pub graph_node: Option<usize>,
    pub vol_in: u64,
    pub vol_out: u64,
    pub g_in: u64,
    pub g_out: u64,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.kind == NodeKind::Leaf
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTree {
    nodes: Vec<Option<TreeNode>>,
    root: TreeNodeId,
    leaf_of: Vec<TreeNodeId>,
    volume: u64,
}

fn structure(msg: impl Into<String>) -> EdenError {
    EdenError::Structure(msg.into())
}

impl PartitionTree {
    /// A root directly over one leaf per graph node. Leaf ids equal graph ids
    /// and the root gets id `n`.
    pub fn flat(g: &DiGraph) -> Result<Self> {
        let n = g.n();
        if n == 0 {
            return Err(structure("cannot build a tree over an empty graph"));
        }
        let mut nodes: Vec<Option<TreeNode>> = (0..n)
            .map(|v| {
                let looped = g.has_self_loop(v) as u64;
                Some(TreeNode {
                    id: v,
                    parent: Some(n),
                    children: Vec::new(),
                    kind: NodeKind::Leaf,
                    graph_node: Some(v),
                    vol_in: g.in_degree(v) as u64,
                    vol_out: g.out_degree(v) as u64,
                    g_in: g.in_degree(v) as u64 - looped,
                    g_out: g.out_degree(v) as u64 - looped,
                })
            })
            .collect();
        let m = g.m() as u64;
        nodes.push(Some(TreeNode {
            id: n,
            parent: None,
            children: (0..n).collect(),
            kind: NodeKind::Root,
            graph_node: None,
            vol_in: m,
            vol_out: m,
            g_in: 0,
            g_out: 0,
        }));
        Ok(PartitionTree {
            nodes,
            root: n,
            leaf_of: (0..n).collect(),
            volume: m,
        })
    }

    pub(crate) fn from_parts(nodes: Vec<Option<TreeNode>>, root: TreeNodeId, leaf_of: Vec<TreeNodeId>, volume: u64) -> Self {
        PartitionTree {
            nodes,
            root,
            leaf_of,
            volume,
        }
    }

    pub fn root(&self) -> TreeNodeId {
        self.root
    }

    /// Total edge count the caches were built against (`vol(V)`).
    pub fn volume(&self) -> u64 {
        self.volume
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_of.len()
    }

    /// Size of the id space; ids of deleted nodes stay unused.
    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: TreeNodeId) -> Option<&TreeNode> {
        self.nodes.get(id).and_then(Option::as_ref)
    }

    pub fn node(&self, id: TreeNodeId) -> Result<&TreeNode> {
        self.get(id).ok_or_else(|| structure(format!("unknown tree node {id}")))
    }

    fn node_mut(&mut self, id: TreeNodeId) -> &mut TreeNode {
        self.nodes[id].as_mut().expect("live tree node")
    }

    /// Live nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().flatten()
    }

    pub fn leaf_of(&self, v: usize) -> TreeNodeId {
        self.leaf_of[v]
    }

    pub fn parent(&self, id: TreeNodeId) -> Option<TreeNodeId> {
        self.get(id).and_then(|n| n.parent)
    }

    pub fn children(&self, id: TreeNodeId) -> &[TreeNodeId] {
        self.get(id).map_or(&[], |n| n.children.as_slice())
    }

    pub fn count_children(&self, id: TreeNodeId) -> Result<usize> {
        Ok(self.node(id)?.children.len())
    }

    pub fn depth(&self, id: TreeNodeId) -> usize {
        let mut d = 0;
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            d += 1;
            cur = p;
        }
        d
    }

    /// Length of the longest downward path from `id` to a leaf.
    pub fn subtree_height(&self, id: TreeNodeId) -> usize {
        let mut best = 0;
        let mut stack = vec![(id, 0usize)];
        while let Some((v, d)) = stack.pop() {
            let ch = self.children(v);
            if ch.is_empty() {
                best = best.max(d);
            }
            stack.extend(ch.iter().map(|&c| (c, d + 1)));
        }
        best
    }

    pub fn height(&self) -> usize {
        self.subtree_height(self.root)
    }

    /// Live node ids in breadth-first order from the root.
    pub fn bfs(&self) -> Vec<TreeNodeId> {
        let mut order = Vec::with_capacity(self.len());
        let mut queue = VecDeque::from([self.root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            queue.extend(self.children(v).iter().copied());
        }
        order
    }

    /// Depth of every live node, indexed by id.
    pub fn depths(&self) -> Vec<Option<usize>> {
        let mut depth = vec![None; self.nodes.len()];
        depth[self.root] = Some(0);
        for v in self.bfs() {
            let d = depth[v].unwrap();
            for &c in self.children(v) {
                depth[c] = Some(d + 1);
            }
        }
        depth
    }

    /// Subtree height of every live node, indexed by id.
    pub fn subtree_heights(&self) -> Vec<usize> {
        let mut down = vec![0usize; self.nodes.len()];
        for &v in self.bfs().iter().rev() {
            down[v] = self.children(v).iter().map(|&c| down[c] + 1).max().unwrap_or(0);
        }
        down
    }

    /// Node ids grouped by depth; `levels()[0] == [root]`.
    pub fn levels(&self) -> Vec<Vec<TreeNodeId>> {
        let depth = self.depths();
        let mut levels: Vec<Vec<TreeNodeId>> = Vec::new();
        for v in self.bfs() {
            let d = depth[v].unwrap();
            if levels.len() <= d {
                levels.resize(d + 1, Vec::new());
            }
            levels[d].push(v);
        }
        levels
    }

    /// Graph nodes under `id`, in depth-first child order.
    pub fn leaves_under(&self, id: TreeNodeId) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(v) = stack.pop() {
            match self.get(v) {
                Some(node) if node.is_leaf() => out.push(node.graph_node.unwrap()),
                Some(node) => stack.extend(node.children.iter().rev()),
                None => {}
            }
        }
        out
    }

    /// Whether every leaf sits at the same depth.
    pub fn uniform_leaf_depth(&self) -> Option<usize> {
        let depth = self.depths();
        let mut it = self.leaf_of.iter().map(|&l| depth[l]);
        let first = it.next()??;
        it.all(|d| d == Some(first)).then_some(first)
    }

    /// Number of edges between the leaf sets of `a` and `b`, both directions.
    pub fn crossing_between(&self, g: &DiGraph, a: TreeNodeId, b: TreeNodeId) -> u64 {
        let (small, large) = {
            let la = self.leaves_under(a);
            let lb = self.leaves_under(b);
            if la.len() <= lb.len() {
                (la, lb)
            } else {
                (lb, la)
            }
        };
        let mut in_large = vec![false; g.n()];
        for &v in &large {
            in_large[v] = true;
        }
        small
            .iter()
            .map(|&u| {
                g.out_neighbors(u)
                    .iter()
                    .chain(g.in_neighbors(u))
                    .filter(|&&x| in_large[x as usize])
                    .count() as u64
            })
            .sum()
    }

    fn require_root_children(&self, a: TreeNodeId, b: TreeNodeId) -> Result<()> {
        if a == b {
            return Err(structure(format!("cannot combine node {a} with itself")));
        }
        for x in [a, b] {
            if self.node(x)?.parent != Some(self.root) {
                return Err(structure(format!("node {x} is not a child of the root")));
            }
        }
        Ok(())
    }

    /// Inserts a new node between the root and its children `a` and `b`.
    pub fn combine(&mut self, g: &DiGraph, a: TreeNodeId, b: TreeNodeId) -> Result<TreeNodeId> {
        self.require_root_children(a, b)?;
        let w = self.crossing_between(g, a, b);
        Ok(self.combine_with_crossing(a, b, w))
    }

    /// `combine` with the crossing count between the two blocks supplied.
    pub(crate) fn combine_with_crossing(&mut self, a: TreeNodeId, b: TreeNodeId, w: u64) -> TreeNodeId {
        let id = self.nodes.len();
        let (na, nb) = (self.node(a).unwrap().clone(), self.node(b).unwrap().clone());
        self.nodes.push(Some(TreeNode {
            id,
            parent: Some(self.root),
            children: vec![a, b],
            kind: NodeKind::Internal,
            graph_node: None,
            vol_in: na.vol_in + nb.vol_in,
            vol_out: na.vol_out + nb.vol_out,
            g_in: na.g_in + nb.g_in - w,
            g_out: na.g_out + nb.g_out - w,
        }));
        self.node_mut(a).parent = Some(id);
        self.node_mut(b).parent = Some(id);
        let root = self.root;
        let children = &mut self.node_mut(root).children;
        let pa = children.iter().position(|&c| c == a).unwrap();
        children[pa] = id;
        let pb = children.iter().position(|&c| c == b).unwrap();
        children.remove(pb);
        id
    }

    /// Removes internal node `v`, splicing its children into its parent.
    pub fn detach(&mut self, v: TreeNodeId) -> Result<()> {
        let node = self.node(v)?;
        if node.kind == NodeKind::Root || node.kind == NodeKind::Leaf {
            return Err(structure(format!("node {v} is a {:?} and cannot be detached", node.kind)));
        }
        let parent = node.parent.unwrap();
        let kids = node.children.clone();
        for &c in &kids {
            self.node_mut(c).parent = Some(parent);
        }
        let siblings = &mut self.node_mut(parent).children;
        let pos = siblings.iter().position(|&c| c == v).unwrap();
        siblings.splice(pos..=pos, kids);
        self.nodes[v] = None;
        Ok(())
    }

    /// Inserts a single-child filler node between `v` and its parent.
    pub fn insert_filler(&mut self, v: TreeNodeId) -> Result<TreeNodeId> {
        let node = self.node(v)?;
        let parent = node.parent.ok_or_else(|| structure("cannot insert a filler above the root"))?;
        let id = self.nodes.len();
        let filler = TreeNode {
            id,
            parent: Some(parent),
            children: vec![v],
            kind: NodeKind::Filler,
            graph_node: None,
            vol_in: node.vol_in,
            vol_out: node.vol_out,
            g_in: node.g_in,
            g_out: node.g_out,
        };
        self.nodes.push(Some(filler));
        self.node_mut(v).parent = Some(id);
        let siblings = &mut self.node_mut(parent).children;
        let pos = siblings.iter().position(|&c| c == v).unwrap();
        siblings[pos] = id;
        Ok(id)
    }

    /// `|subtree_height(parent(v)) - subtree_height(v)|`.
    pub fn delta_height(&self, v: TreeNodeId) -> Result<usize> {
        let parent = self.node(v)?.parent.ok_or_else(|| structure("the root has no parent"))?;
        Ok(self.subtree_height(parent).abs_diff(self.subtree_height(v)))
    }

    /// Re-parents leaves (`(graph node, new parent)` pairs) and refreshes caches.
    pub fn move_leaves(&mut self, g: &DiGraph, moves: &[(usize, TreeNodeId)]) -> Result<()> {
        for &(v, to) in moves {
            let leaf = *self
                .leaf_of
                .get(v)
                .ok_or_else(|| structure(format!("graph node {v} has no leaf")))?;
            let target = self.node(to)?;
            if target.is_leaf() {
                return Err(structure(format!("cannot move a leaf under leaf {to}")));
            }
            let from = self.node(leaf)?.parent.unwrap();
            if from == to {
                continue;
            }
            if self.node(from)?.children.len() == 1 {
                return Err(structure(format!("moving leaf {leaf} would empty node {from}")));
            }
            self.node_mut(from).children.retain(|&c| c != leaf);
            self.node_mut(to).children.push(leaf);
            if self.node(to)?.kind == NodeKind::Filler {
                self.node_mut(to).kind = NodeKind::Internal;
            }
            self.node_mut(leaf).parent = Some(to);
        }
        self.recompute_caches(g);
        Ok(())
    }

    /// Recomputes all volume and crossing caches from the graph.
    pub fn recompute_caches(&mut self, g: &DiGraph) {
        let computed = self.computed_caches(g);
        for (slot, c) in self.nodes.iter_mut().zip(computed) {
            if let (Some(node), Some(c)) = (slot.as_mut(), c) {
                (node.vol_in, node.vol_out, node.g_in, node.g_out) = c;
            }
        }
        self.volume = g.m() as u64;
    }

    fn computed_caches(&self, g: &DiGraph) -> Vec<Option<(u64, u64, u64, u64)>> {
        let depth = self.depths();
        let mut caches: Vec<Option<(u64, u64, u64, u64)>> = depth.iter().map(|d| d.map(|_| (0, 0, 0, 0))).collect();
        for v in 0..self.leaf_of.len().min(g.n()) {
            let mut cur = Some(self.leaf_of[v]);
            while let Some(t) = cur {
                let c = caches[t].as_mut().unwrap();
                c.0 += g.in_degree(v) as u64;
                c.1 += g.out_degree(v) as u64;
                cur = self.parent(t);
            }
        }
        for (u, v) in g.edges() {
            if u == v {
                continue;
            }
            let (mut a, mut b) = (self.leaf_of[u], self.leaf_of[v]);
            while a != b {
                let (da, db) = (depth[a].unwrap(), depth[b].unwrap());
                if da >= db {
                    caches[a].as_mut().unwrap().3 += 1;
                    a = self.parent(a).unwrap();
                }
                if db >= da {
                    caches[b].as_mut().unwrap().2 += 1;
                    b = self.parent(b).unwrap();
                }
            }
        }
        caches
    }

    /// Checks the structural invariants and that the caches match the graph.
    pub fn validate(&self, g: &DiGraph) -> Result<()> {
        let root = self.node(self.root)?;
        if root.kind != NodeKind::Root || root.parent.is_some() {
            return Err(structure("root node is malformed"));
        }
        if self.leaf_of.len() != g.n() {
            return Err(structure(format!(
                "tree has {} leaves, graph has {} nodes",
                self.leaf_of.len(),
                g.n()
            )));
        }
        let reachable = self.bfs();
        if reachable.len() != self.len() {
            return Err(structure("tree contains unreachable nodes"));
        }
        let mut seen = vec![false; g.n()];
        for &id in &reachable {
            let node = self.node(id)?;
            if node.id != id {
                return Err(structure(format!("node {id} records id {}", node.id)));
            }
            for &c in &node.children {
                if self.node(c)?.parent != Some(id) {
                    return Err(structure(format!("child {c} does not point back to {id}")));
                }
            }
            match node.kind {
                NodeKind::Leaf => {
                    let v = node.graph_node.ok_or_else(|| structure(format!("leaf {id} has no graph node")))?;
                    if !node.children.is_empty() {
                        return Err(structure(format!("leaf {id} has children")));
                    }
                    if v >= g.n() || seen[v] || self.leaf_of[v] != id {
                        return Err(structure(format!("leaf {id} maps inconsistently to graph node {v}")));
                    }
                    seen[v] = true;
                }
                kind => {
                    if node.graph_node.is_some() || node.children.is_empty() {
                        return Err(structure(format!("{kind:?} node {id} is malformed")));
                    }
                    if kind == NodeKind::Filler && node.children.len() != 1 {
                        return Err(structure(format!("filler {id} has {} children", node.children.len())));
                    }
                    if kind == NodeKind::Root && id != self.root {
                        return Err(structure(format!("second root {id}")));
                    }
                }
            }
        }
        if self.volume != g.m() as u64 {
            return Err(structure("tree volume differs from the edge count"));
        }
        for (id, c) in self.computed_caches(g).into_iter().enumerate() {
            if let Some(c) = c {
                let node = self.node(id)?;
                if (node.vol_in, node.vol_out, node.g_in, node.g_out) != c {
                    return Err(structure(format!("stale caches on node {id}")));
                }
            }
        }
        Ok(())
    }

    /// Renumbers live nodes in breadth-first order (root becomes 0).
    pub fn compact(&mut self) {
        let order = self.bfs();
        let mut new_id = vec![usize::MAX; self.nodes.len()];
        for (i, &old) in order.iter().enumerate() {
            new_id[old] = i;
        }
        let mut nodes = Vec::with_capacity(order.len());
        for &old in &order {
            let mut node = self.nodes[old].take().unwrap();
            node.id = new_id[old];
            node.parent = node.parent.map(|p| new_id[p]);
            for c in node.children.iter_mut() {
                *c = new_id[*c];
            }
            nodes.push(Some(node));
        }
        for l in self.leaf_of.iter_mut() {
            *l = new_id[*l];
        }
        self.root = new_id[self.root];
        self.nodes = nodes;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pairs() -> DiGraph {
        DiGraph::from_edges(4, &[(0, 1), (1, 0), (2, 3), (3, 2)]).unwrap()
    }

    #[test]
    fn fresh_tree_counts() {
        let g = DiGraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]).unwrap();
        let mut t = PartitionTree::flat(&g).unwrap();
        assert_eq!(t.count_children(t.root()).unwrap(), 5);
        assert_eq!(t.count_children(0).unwrap(), 0);
        t.combine(&g, 0, 1).unwrap();
        assert_eq!(t.count_children(t.root()).unwrap(), 4);
        t.validate(&g).unwrap();
    }

    #[test]
    fn combine_caches() {
        let g = two_pairs();
        let mut t = PartitionTree::flat(&g).unwrap();
        let n = t.combine(&g, 0, 1).unwrap();
        let node = t.node(n).unwrap();
        assert_eq!(node.vol_in, 2);
        assert_eq!((node.g_in, node.g_out), (0, 0));
        t.validate(&g).unwrap();
        let g3 = DiGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let mut t3 = PartitionTree::flat(&g3).unwrap();
        t3.combine(&g3, 0, 1).unwrap();
        assert_eq!(t3.count_children(t3.root()).unwrap(), 2);
    }

    #[test]
    fn combine_requires_root_children() {
        let g = two_pairs();
        let mut t = PartitionTree::flat(&g).unwrap();
        let n = t.combine(&g, 0, 1).unwrap();
        assert!(t.combine(&g, 0, 2).is_err());
        assert!(t.combine(&g, n, n).is_err());
    }

    #[test]
    fn detach_splices_children() {
        let g = two_pairs();
        let mut t = PartitionTree::flat(&g).unwrap();
        let n = t.combine(&g, 1, 2).unwrap();
        t.detach(n).unwrap();
        assert_eq!(t.children(t.root()), &[0, 1, 2, 3]);
        assert!(t.detach(0).is_err());
        assert!(t.detach(t.root()).is_err());
        t.validate(&g).unwrap();
    }

    #[test]
    fn fillers_and_delta_height() {
        let g = two_pairs();
        let mut t = PartitionTree::flat(&g).unwrap();
        let a = t.combine(&g, 0, 1).unwrap();
        let b = t.combine(&g, a, 2).unwrap();
        // leaf 3 hangs directly below the root of a height-3 tree
        assert_eq!(t.height(), 3);
        assert_eq!(t.delta_height(3).unwrap(), 3);
        assert_eq!(t.delta_height(a).unwrap(), 1);
        assert_eq!(t.delta_height(2).unwrap(), 2);
        let f = t.insert_filler(3).unwrap();
        assert_eq!(t.node(f).unwrap().kind, NodeKind::Filler);
        assert!(t.insert_filler(t.root()).is_err());
        let _ = b;
        t.validate(&g).unwrap();
    }

    #[test]
    fn compact_renumbers_breadth_first() {
        let g = two_pairs();
        let mut t = PartitionTree::flat(&g).unwrap();
        let a = t.combine(&g, 0, 1).unwrap();
        t.combine(&g, 2, 3).unwrap();
        t.detach(a).unwrap();
        t.compact();
        assert_eq!(t.root(), 0);
        assert_eq!(t.capacity(), t.len());
        t.validate(&g).unwrap();
    }

    #[test]
    fn leaf_moves_keep_caches_valid() {
        let g = two_pairs();
        let mut t = PartitionTree::flat(&g).unwrap();
        let a = t.combine(&g, 0, 1).unwrap();
        let b = t.combine(&g, 2, 3).unwrap();
        t.move_leaves(&g, &[(1, b)]).unwrap();
        assert_eq!(t.children(b).len(), 3);
        t.validate(&g).unwrap();
        assert!(t.move_leaves(&g, &[(0, b)]).is_err(), "would empty {a}");
    }
}
