use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EdenError, Result};
use crate::tree::{PartitionTree, TreeNodeId};

/// Inverse weights of the three move types and the walk length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    pub p_rw: f64,
    pub s_rw: f64,
    pub c_rw: f64,
    pub k: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            p_rw: 1.0,
            s_rw: 1.0,
            c_rw: 1.0,
            k: 5,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_rw", self.p_rw), ("s_rw", self.s_rw), ("c_rw", self.c_rw)] {
            if v.is_nan() || v <= 0.0 {
                return Err(EdenError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.k == 0 {
            return Err(EdenError::Config("walk length k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Parent,
    Sibling,
    Child,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub to: TreeNodeId,
    pub kind: MoveKind,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkPath {
    pub leaf: TreeNodeId,
    pub steps: Vec<TreeNodeId>,
}

impl WalkPath {
    /// Start leaf followed by the visited nodes.
    pub fn nodes(&self) -> impl Iterator<Item = TreeNodeId> + '_ {
        std::iter::once(self.leaf).chain(self.steps.iter().copied())
    }
}

/// Moves available from `at`, having arrived from `previous`. Stepping back
/// to `previous` is only allowed when nothing else is reachable.
pub fn transitions(tree: &PartitionTree, at: TreeNodeId, previous: Option<TreeNodeId>, cfg: &WalkConfig) -> Vec<Transition> {
    let mut moves: Vec<(TreeNodeId, MoveKind, f64)> = Vec::new();
    if let Some(p) = tree.parent(at) {
        moves.push((p, MoveKind::Parent, 1.0 / cfg.p_rw));
        for &s in tree.children(p) {
            if s != at {
                moves.push((s, MoveKind::Sibling, 1.0 / cfg.s_rw));
            }
        }
    }
    for &c in tree.children(at) {
        moves.push((c, MoveKind::Child, 1.0 / cfg.c_rw));
    }
    if moves.iter().any(|m| Some(m.0) != previous) {
        moves.retain(|m| Some(m.0) != previous);
    }
    let total: f64 = moves.iter().map(|m| m.2).sum();
    let uniform = !(total > 0.0 && total.is_finite());
    let count = moves.len() as f64;
    moves
        .into_iter()
        .map(|(to, kind, w)| Transition {
            to,
            kind,
            probability: if uniform { 1.0 / count } else { w / total },
        })
        .collect()
}

/// A `k`-step walk over the tree starting at `leaf`.
pub fn sample_walk<R: Rng>(tree: &PartitionTree, leaf: TreeNodeId, cfg: &WalkConfig, rng: &mut R) -> WalkPath {
    let mut steps = Vec::with_capacity(cfg.k);
    let (mut at, mut prev) = (leaf, None);
    for _ in 0..cfg.k {
        let options = transitions(tree, at, prev, cfg);
        let Some(last) = options.last() else { break };
        let mut r: f64 = rng.random();
        let mut next = last.to;
        for t in &options {
            if r < t.probability {
                next = t.to;
                break;
            }
            r -= t.probability;
        }
        steps.push(next);
        prev = Some(at);
        at = next;
    }
    WalkPath { leaf, steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DiGraph;
    use crate::rng::stream_rng;

    fn tree() -> PartitionTree {
        let g = DiGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let mut t = PartitionTree::flat(&g).unwrap();
        t.combine(&g, 0, 1).unwrap();
        t
    }

    #[test]
    fn parent_and_two_siblings() {
        let t = tree();
        let cfg = WalkConfig {
            p_rw: 1.0,
            s_rw: 2.0,
            c_rw: 1.0,
            k: 3,
        };
        // leaf 2 sits under the root next to leaf 3 and the merged node
        let tr = transitions(&t, 2, None, &cfg);
        let parent: f64 = tr.iter().filter(|x| x.kind == MoveKind::Parent).map(|x| x.probability).sum();
        assert!((parent - 0.5).abs() < 1e-15);
        assert!(tr
            .iter()
            .filter(|x| x.kind == MoveKind::Sibling)
            .all(|x| (x.probability - 0.25).abs() < 1e-15));
    }

    #[test]
    fn root_moves_are_children_only() {
        let t = tree();
        let tr = transitions(&t, t.root(), None, &WalkConfig::default());
        assert!(tr.iter().all(|x| x.kind == MoveKind::Child));
        assert!((tr.iter().map(|x| x.probability).sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn climbs_when_only_parents_weigh() {
        let t = tree();
        let cfg = WalkConfig {
            p_rw: 1.0,
            s_rw: f64::INFINITY,
            c_rw: f64::INFINITY,
            k: 3,
        };
        let merged = t.parent(0).unwrap();
        let w = sample_walk(&t, 0, &cfg, &mut stream_rng(3, 0));
        assert_eq!(w.steps[0], merged);
        assert_eq!(w.steps[1], t.root());
        assert_ne!(w.steps[2], merged);
        assert_eq!(w.steps.len(), 3);
    }
}
