//! Knowledge generation over the partition tree: children are weighted by
//! critic affinity to form each parent's class distribution, and children
//! are pulled toward their parent by an uncertainty-scaled distance.

use indexmap::IndexMap;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EdenError, Result};
use crate::hierarchy::{Hierarchy, NeighborhoodCache};
use crate::mi::{Critic, HeadKind, Role, SampleSet};
use crate::nn::{Activation, Mlp, ParamStore, Tape, Var};
use crate::tree::{NodeKind, TreeNodeId};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryScore {
    pub node: TreeNodeId,
    #[serde(flatten)]
    pub role: Role,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s21: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s22: Option<f64>,
    /// Score used for weighting.
    pub score: f64,
    /// Softmax of `score` over the sampled set.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityScores {
    pub partition: TreeNodeId,
    pub entries: Vec<EntryScore>,
}

impl AffinityScores {
    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Scores every entry of `omega`. Intra nodes are scored against `N_p`;
/// inter nodes from `q` against `N_{p∪q}` (inter head) and against `N_q`
/// (intra head). With `diverse` off an inter node's score ignores the latter.
pub fn affinity_scores(
    critic: &Critic,
    store: &ParamStore,
    hier: &Hierarchy,
    cache: &mut NeighborhoodCache,
    omega: &SampleSet,
    diverse: bool,
) -> Result<AffinityScores> {
    if omega.entries.is_empty() {
        return Err(EdenError::Contract(format!("partition {} has no samples", omega.partition)));
    }
    let ids: Vec<TreeNodeId> = omega.entries.iter().map(|e| e.node).collect();
    let x = hier.embeddings_of(&ids)?;
    let p = omega.partition;
    let mut intra_rows = Vec::new();
    let mut intra_neigh = Vec::new();
    let mut inter_rows = Vec::new();
    let mut inter_neigh = Vec::new();
    for (i, e) in omega.entries.iter().enumerate() {
        match e.role {
            Role::Intra => {
                intra_rows.push(i);
                intra_neigh.push(cache.get(hier, p, None)?);
            }
            Role::Inter { source } => {
                inter_rows.push(i);
                inter_neigh.push(cache.get(hier, p, Some(source))?);
                intra_rows.push(i);
                intra_neigh.push(cache.get(hier, source, None)?);
            }
        }
    }
    let stack = |rows: &[Array1<f64>]| -> Array2<f64> {
        let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
        ndarray::concatenate(Axis(0), &views).unwrap()
    };
    let intra = critic.scores(store, HeadKind::Intra, &x.select(Axis(0), &intra_rows), &stack(&intra_neigh))?;
    let inter = if inter_rows.is_empty() {
        Array1::zeros(0)
    } else {
        critic.scores(store, HeadKind::Inter, &x.select(Axis(0), &inter_rows), &stack(&inter_neigh))?
    };
    let (mut ia, mut ie) = (0, 0);
    let mut entries = Vec::with_capacity(ids.len());
    for e in &omega.entries {
        let mut s = EntryScore {
            node: e.node,
            role: e.role,
            s1: None,
            s21: None,
            s22: None,
            score: 0.0,
            weight: 0.0,
        };
        match e.role {
            Role::Intra => {
                let v = sigmoid(intra[ia]);
                ia += 1;
                s.s1 = Some(v);
                s.score = v;
            }
            Role::Inter { .. } => {
                let s21 = sigmoid(inter[ie]);
                let s22 = sigmoid(intra[ia]);
                ie += 1;
                ia += 1;
                s.s21 = Some(s21);
                s.s22 = Some(s22);
                s.score = if diverse { s21.max(s22) } else { s21 };
            }
        }
        entries.push(s);
    }
    let w = softmax(&entries.iter().map(|e| e.score).collect::<Vec<_>>());
    for (e, w) in entries.iter_mut().zip(w) {
        e.weight = w;
    }
    Ok(AffinityScores { partition: p, entries })
}

/// `weights · rows`, for probability rows and weights summing to one.
pub fn generate_parent(weights: &[f64], rows: &Array2<f64>) -> Result<Array1<f64>> {
    if weights.len() != rows.nrows() {
        return Err(EdenError::Dimension(format!("{} weights for {} rows", weights.len(), rows.nrows())));
    }
    for (i, row) in rows.rows().into_iter().enumerate() {
        if row.iter().any(|&x| x < 0.0) || (row.sum() - 1.0).abs() > 1e-9 {
            return Err(EdenError::Contract(format!("row {i} is not a probability vector")));
        }
    }
    if weights.iter().any(|&w| w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(EdenError::Contract("weights must be a probability vector".into()));
    }
    Ok(Array1::from(weights.to_vec()).dot(rows))
}

/// The parent-uncertainty and child-projection networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdNets {
    pub q_parent: Mlp,
    pub q_child: Mlp,
}

impl KdNets {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, classes: usize, hidden: usize) -> Result<Self> {
        Ok(KdNets {
            q_parent: Mlp::new(store, rng, "kd.parent", &[1, hidden, 1], Activation::Tanh, Activation::Identity)?,
            q_child: Mlp::new(
                store,
                rng,
                "kd.child",
                &[classes, hidden, classes],
                Activation::Tanh,
                Activation::Identity,
            )?,
        })
    }
}

pub struct KdTerm {
    pub loss: Var,
    pub uncertainty: Var,
}

pub const MIN_UNCERTAINTY: f64 = 1e-6;

/// Mean over children of `‖X_p / U_p − Q_child(x)‖₂` with
/// `U_p = max(σ(Q_parent(H(X_p))), 1e-6)`. Without `nets` the transfer is
/// not personalised: `U_p = 1` and children are compared as they are.
pub fn kd_loss(tape: &mut Tape, store: &ParamStore, nets: Option<&KdNets>, parent: Var, children: Var) -> Result<KdTerm> {
    let (pr, c) = tape.shape(parent);
    let (k, cc) = tape.shape(children);
    if pr != 1 || c != cc {
        return Err(EdenError::Dimension(format!(
            "parent {:?} does not match children {:?}",
            (pr, c),
            (k, cc)
        )));
    }
    let (target, projected, uncertainty) = match nets {
        Some(nets) => {
            let h = tape.row_entropy(parent);
            let u = nets.q_parent.forward(tape, store, h)?;
            let u = tape.sigmoid(u);
            let u = tape.clamp_min(u, MIN_UNCERTAINTY);
            let target = tape.div_col(parent, u)?;
            let projected = nets.q_child.forward(tape, store, children)?;
            (target, projected, u)
        }
        None => (parent, children, tape.input(Array2::ones((1, 1)))),
    };
    let spread = tape.gather_rows(target, &vec![0; k])?;
    let diff = tape.sub(spread, projected)?;
    let norms = tape.row_l2_norm(diff);
    let loss = tape.mean(norms);
    Ok(KdTerm { loss, uncertainty })
}

/// Generated parent knowledge, for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionKnowledge {
    pub partition: TreeNodeId,
    pub depth: usize,
    pub parent_rep: Vec<f64>,
    pub uncertainty: f64,
    pub children: Vec<TreeNodeId>,
}

/// Result of a bottom-up distillation pass recorded on a tape.
pub struct DistillPass {
    /// One representation row per live tree node.
    pub table: Var,
    /// Row of `table` for each tree id.
    pub row_of: Vec<usize>,
    /// Mean distillation loss over all scored partitions.
    pub loss: Option<Var>,
    knowledge: Vec<(TreeNodeId, usize, Var, Option<Var>)>,
}

impl DistillPass {
    pub fn knowledge(&self, tape: &Tape, hier: &Hierarchy) -> Vec<PartitionKnowledge> {
        self.knowledge
            .iter()
            .map(|&(p, depth, x, u)| PartitionKnowledge {
                partition: p,
                depth,
                parent_rep: tape.value(x).row(0).to_vec(),
                uncertainty: u.map_or(1.0, |u| tape.scalar(u)),
                children: hier.children(p).to_vec(),
            })
            .collect()
    }
}

/// Builds parent representations level by level from `leaf_reps` (one
/// probability row per graph node). Fillers copy their child's row.
/// With `with_loss` off no distillation terms are recorded.
pub fn distill_tree(
    tape: &mut Tape,
    store: &ParamStore,
    nets: Option<&KdNets>,
    hier: &Hierarchy,
    leaf_reps: Var,
    scores: &IndexMap<TreeNodeId, AffinityScores>,
    with_loss: bool,
) -> Result<DistillPass> {
    let h = hier.height();
    let leaf_level = hier.level(h);
    let graph_rows: Vec<usize> = leaf_level
        .nodes
        .iter()
        .map(|&t| {
            hier.graph_node(t)
                .ok_or_else(|| EdenError::Contract(format!("tree node {t} is not a leaf")))
        })
        .collect::<Result<_>>()?;
    let mut below = tape.gather_rows(leaf_reps, &graph_rows)?;
    let mut tables = vec![below];
    let mut losses = Vec::new();
    let mut knowledge = Vec::new();
    for depth in (0..h).rev() {
        let mut rows = Vec::with_capacity(hier.level(depth).nodes.len());
        for &t in &hier.level(depth).nodes {
            match hier.kind(t) {
                Some(NodeKind::Filler) => {
                    let (_, i) = hier.position(hier.children(t)[0])?;
                    rows.push(tape.gather_rows(below, &[i])?);
                }
                _ => {
                    let s = scores
                        .get(&t)
                        .ok_or_else(|| EdenError::Contract(format!("no affinity scores for partition {t}")))?;
                    let idx: Vec<usize> = s
                        .entries
                        .iter()
                        .map(|e| hier.position(e.node).map(|(_, i)| i))
                        .collect::<Result<_>>()?;
                    let kids = tape.gather_rows(below, &idx)?;
                    let w = tape.input(Array2::from_shape_vec((1, idx.len()), s.weights()).unwrap());
                    let x = tape.matmul(w, kids)?;
                    let mut u = None;
                    if with_loss {
                        let term = kd_loss(tape, store, nets, x, kids)?;
                        losses.push(term.loss);
                        u = nets.map(|_| term.uncertainty);
                    }
                    knowledge.push((t, depth, x, u));
                    rows.push(x);
                }
            }
        }
        below = tape.vstack(&rows)?;
        tables.push(below);
    }
    tables.reverse();
    let table = tape.vstack(&tables)?;
    let mut row_of = vec![usize::MAX; hier.levels().iter().flat_map(|l| l.nodes.iter()).max().map_or(0, |&m| m + 1)];
    let mut offset = 0;
    for level in hier.levels() {
        for (i, &t) in level.nodes.iter().enumerate() {
            row_of[t] = offset + i;
        }
        offset += level.nodes.len();
    }
    let loss = if losses.is_empty() {
        None
    } else {
        let stacked = tape.vstack(&losses)?;
        Some(tape.mean(stacked))
    };
    Ok(DistillPass {
        table,
        row_of,
        loss,
        knowledge,
    })
}
