use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{NodeKind, PartitionTree, TreeNode, TreeNodeId};
use crate::error::{EdenError, Result};
use crate::graph::DiGraph;

/// Serialized form of a [`PartitionTree`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub root: TreeNodeId,
    pub volume: u64,
    pub height: usize,
    pub num_leaves: usize,
    pub nodes: Vec<TreeNode>,
}

impl PartitionTree {
    pub fn dump(&self) -> TreeDump {
        TreeDump {
            root: self.root,
            volume: self.volume,
            height: self.height(),
            num_leaves: self.num_leaves(),
            nodes: self.nodes().cloned().collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.dump()).expect("tree serializes")
    }

    /// Rebuilds a tree from a dump and checks it against `g`.
    pub fn from_dump(dump: TreeDump, g: &DiGraph) -> Result<Self> {
        let cap = dump.nodes.iter().map(|n| n.id + 1).max().unwrap_or(0);
        let mut nodes: Vec<Option<TreeNode>> = vec![None; cap];
        let mut leaf_of = vec![usize::MAX; dump.num_leaves];
        for node in dump.nodes {
            if nodes[node.id].is_some() {
                return Err(EdenError::Structure(format!("duplicate tree node {}", node.id)));
            }
            if node.kind == NodeKind::Leaf {
                let v = node
                    .graph_node
                    .filter(|&v| v < leaf_of.len())
                    .ok_or_else(|| EdenError::Structure(format!("leaf {} has a bad graph node", node.id)))?;
                leaf_of[v] = node.id;
            }
            let id = node.id;
            nodes[id] = Some(node);
        }
        if leaf_of.contains(&usize::MAX) {
            return Err(EdenError::Structure("some graph nodes have no leaf".into()));
        }
        if dump.root >= cap {
            return Err(EdenError::Structure("root id out of range".into()));
        }
        let tree = PartitionTree::from_parts(nodes, dump.root, leaf_of, dump.volume);
        tree.validate(g)?;
        Ok(tree)
    }

    pub fn from_json(text: &str, g: &DiGraph) -> Result<Self> {
        Self::from_dump(serde_json::from_str(text)?, g)
    }

    /// Graphviz rendering; leaves are labelled with their graph node.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph hkt {\n  node [shape=circle];\n");
        for node in self.nodes() {
            let (label, shape) = match node.kind {
                NodeKind::Leaf => (format!("v{}", node.graph_node.unwrap()), "box"),
                NodeKind::Root => ("root".to_string(), "doublecircle"),
                NodeKind::Filler => (format!("f{}", node.id), "point"),
                NodeKind::Internal => (format!("t{}", node.id), "circle"),
            };
            writeln!(out, "  n{} [label=\"{label}\", shape={shape}];", node.id).unwrap();
            for c in &node.children {
                writeln!(out, "  n{} -> n{c};", node.id).unwrap();
            }
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_hkt, MergeStrategy};

    #[test]
    fn json_round_trip() {
        let g = DiGraph::from_edges(5, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 3), (1, 3)]).unwrap();
        let t = build_hkt(&g, 3, MergeStrategy::Exhaustive).unwrap().tree;
        let back = PartitionTree::from_json(&t.to_json(), &g).unwrap();
        assert_eq!(back, t);
        assert!(t.to_dot().contains("v4"));
    }

    #[test]
    fn rejects_tampered_dump() {
        let g = DiGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let t = build_hkt(&g, 2, MergeStrategy::Exhaustive).unwrap().tree;
        let mut dump = t.dump();
        dump.nodes.last_mut().unwrap().vol_in += 1;
        assert!(PartitionTree::from_dump(dump, &g).is_err());
    }
}
