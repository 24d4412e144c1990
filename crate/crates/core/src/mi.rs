//! Partition-level mutual-information estimation and the leaf re-affiliation
//! step that corrects the partition tree.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distill::AffinityScores;
use crate::error::{EdenError, Result};
use crate::graph::DiGraph;
use crate::hierarchy::{Hierarchy, NeighborhoodCache};
use crate::nn::{Activation, Adam, Mlp, ParamStore, Tape, Var};
use crate::rng::salted_rng;
use crate::tree::{NodeKind, PartitionTree, TreeNodeId};

/// How a sampled node relates to the partition it was sampled for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role")]
pub enum Role {
    Intra,
    Inter { source: TreeNodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub node: TreeNodeId,
    #[serde(flatten)]
    pub role: Role,
}

/// The sampled context `Ω_p` of partition `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub partition: TreeNodeId,
    pub kappa: f64,
    pub entries: Vec<SampleEntry>,
    pub target: usize,
    /// How many nodes short of `target` the siblings left us.
    pub shortfall: usize,
}

/// All children of `p`, topped up round-robin from the children of `p`'s
/// siblings until `ceil(kappa * |children(p)|)` nodes are present.
pub fn sample_omega(tree: &PartitionTree, p: TreeNodeId, kappa: f64, seed: u64) -> Result<SampleSet> {
    if !(1.0..=2.0).contains(&kappa) {
        return Err(EdenError::Parameter(format!("kappa must lie in [1, 2], got {kappa}")));
    }
    let own = tree.children(p);
    if own.is_empty() {
        return Err(EdenError::Structure(format!("tree node {p} has no children")));
    }
    let target = (kappa * own.len() as f64 - 1e-9).ceil() as usize;
    let mut entries: Vec<SampleEntry> = own.iter().map(|&node| SampleEntry { node, role: Role::Intra }).collect();
    let mut rng = salted_rng(seed, &[p as u64]);
    let mut pools: Vec<(TreeNodeId, Vec<TreeNodeId>)> = match tree.parent(p) {
        Some(parent) => tree
            .children(parent)
            .iter()
            .filter(|&&q| q != p)
            .map(|&q| {
                let mut pool = tree.children(q).to_vec();
                pool.shuffle(&mut rng);
                pool.reverse();
                (q, pool)
            })
            .collect(),
        None => Vec::new(),
    };
    while entries.len() < target && pools.iter().any(|(_, pool)| !pool.is_empty()) {
        for (q, pool) in pools.iter_mut() {
            if entries.len() >= target {
                break;
            }
            if let Some(node) = pool.pop() {
                entries.push(SampleEntry {
                    node,
                    role: Role::Inter { source: *q },
                });
            }
        }
    }
    Ok(SampleSet {
        partition: p,
        kappa,
        target,
        shortfall: target - entries.len(),
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Intra,
    Inter,
}

impl From<Role> for HeadKind {
    fn from(r: Role) -> Self {
        match r {
            Role::Intra => HeadKind::Intra,
            Role::Inter { .. } => HeadKind::Inter,
        }
    }
}

/// Scalar head over an encoded (node, neighbourhood) pair. The first layer
/// acts on the concatenation of the two encodings, stored as two blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairHead {
    prefix: String,
    out: Mlp,
}

impl PairHead {
    fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, enc: usize, hidden: usize) -> Result<Self> {
        let bound = (6.0 / (2 * enc + hidden) as f64).sqrt();
        let mut init = |rows, cols| Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound));
        store.insert(&format!("{prefix}.wn"), init(enc, hidden))?;
        store.insert(&format!("{prefix}.wm"), init(enc, hidden))?;
        store.zeros(&format!("{prefix}.b"), 1, hidden)?;
        let out = Mlp::new(
            store,
            rng,
            &format!("{prefix}.out"),
            &[hidden, 1],
            Activation::Tanh,
            Activation::Identity,
        )?;
        Ok(PairHead {
            prefix: prefix.to_string(),
            out,
        })
    }

    fn halves(&self, tape: &mut Tape, store: &ParamStore, en: Var, em: Var) -> Result<(Var, Var)> {
        let wn = tape.param(store, &format!("{}.wn", self.prefix))?;
        let wm = tape.param(store, &format!("{}.wm", self.prefix))?;
        let b = tape.param(store, &format!("{}.b", self.prefix))?;
        let a = tape.matmul(en, wn)?;
        let m = tape.matmul(em, wm)?;
        let m = tape.add_row(m, b)?;
        Ok((a, m))
    }

    /// Scores row `i` of `en` against row `i` of `em`.
    fn rowwise(&self, tape: &mut Tape, store: &ParamStore, en: Var, em: Var) -> Result<Var> {
        let (a, m) = self.halves(tape, store, en, em)?;
        let h = tape.add(a, m)?;
        let h = tape.tanh(h);
        self.out.forward(tape, store, h)
    }

    /// Scores every row of `en` against every row of `em`; row `i * |em| + j`.
    fn pairwise(&self, tape: &mut Tape, store: &ParamStore, en: Var, em: Var) -> Result<Var> {
        let (a, m) = self.halves(tape, store, en, em)?;
        let h = tape.pair_sum(a, m)?;
        let h = tape.tanh(h);
        self.out.forward(tape, store, h)
    }
}

/// Critic `F(x, N)`: shared linear encoders for nodes and neighbourhoods
/// followed by an intra or inter head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    w1: Mlp,
    w2: Mlp,
    intra: PairHead,
    inter: PairHead,
}

impl Critic {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, in_dim: usize, enc_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Critic {
            w1: Mlp::new(
                store,
                rng,
                "critic.w1",
                &[in_dim, enc_dim],
                Activation::Identity,
                Activation::Identity,
            )?,
            w2: Mlp::new(
                store,
                rng,
                "critic.w2",
                &[in_dim, enc_dim],
                Activation::Identity,
                Activation::Identity,
            )?,
            intra: PairHead::new(store, rng, "critic.intra", enc_dim, hidden)?,
            inter: PairHead::new(store, rng, "critic.inter", enc_dim, hidden)?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.w1.in_dim()
    }

    /// Makes both heads output 0 for every input.
    pub fn zero_heads(&self, store: &mut ParamStore) {
        self.intra.out.zero_output_layer(store);
        self.inter.out.zero_output_layer(store);
    }

    fn head(&self, kind: HeadKind) -> &PairHead {
        match kind {
            HeadKind::Intra => &self.intra,
            HeadKind::Inter => &self.inter,
        }
    }

    /// Raw critic values `F(x_i, n_i)` for aligned rows, as a column.
    pub fn score_rows(&self, tape: &mut Tape, store: &ParamStore, kind: HeadKind, nodes: Var, neighs: Var) -> Result<Var> {
        let en = self.w1.forward(tape, store, nodes)?;
        let em = self.w2.forward(tape, store, neighs)?;
        self.head(kind).rowwise(tape, store, en, em)
    }

    /// Convenience wrapper returning plain logits for aligned rows.
    pub fn scores(&self, store: &ParamStore, kind: HeadKind, nodes: &Array2<f64>, neighs: &Array2<f64>) -> Result<Array1<f64>> {
        if nodes.dim() != neighs.dim() {
            return Err(EdenError::Dimension(format!(
                "{:?} node rows against {:?} neighbourhood rows",
                nodes.dim(),
                neighs.dim()
            )));
        }
        let mut tape = Tape::new();
        let n = tape.input(nodes.clone());
        let m = tape.input(neighs.clone());
        let s = self.score_rows(&mut tape, store, kind, n, m)?;
        Ok(tape.value(s).column(0).to_owned())
    }
}

/// GAN-style lower bound for one sampled set.
///
/// `nodes` holds one row per sample, `neighs` the distinct neighbourhood
/// summaries, and `neigh_of[i]` the row of `neighs` that belongs to sample `i`.
/// The positive term averages `ln σ(F(x_i, N_i))`; the negative term averages
/// `ln(1 − σ(F(x_i, N_j)))` over all ordered pairs `j ≠ i`, using the head
/// of sample `i`.
pub fn gan_objective(
    tape: &mut Tape,
    store: &ParamStore,
    critic: &Critic,
    nodes: Var,
    neighs: Var,
    neigh_of: &[usize],
    heads: &[HeadKind],
) -> Result<Var> {
    let k = tape.shape(nodes).0;
    let d = tape.shape(neighs).0;
    if k < 2 {
        return Err(EdenError::Contract(format!("need at least two samples, got {k}")));
    }
    if neigh_of.len() != k || heads.len() != k || neigh_of.iter().any(|&j| j >= d) {
        return Err(EdenError::Dimension("sample bookkeeping does not match the inputs".into()));
    }
    let en = critic.w1.forward(tape, store, nodes)?;
    let em = critic.w2.forward(tape, store, neighs)?;
    let uses = |kind| heads.contains(&kind);
    let scores = match (uses(HeadKind::Intra), uses(HeadKind::Inter)) {
        (true, true) => {
            let si = critic.intra.pairwise(tape, store, en, em)?;
            let so = critic.inter.pairwise(tape, store, en, em)?;
            let mask = Array2::from_shape_fn((k * d, 1), |(r, _)| f64::from(heads[r / d] == HeadKind::Intra));
            let inv = mask.mapv(|x| 1.0 - x);
            let mi = tape.input(mask);
            let mo = tape.input(inv);
            let a = tape.mul(si, mi)?;
            let b = tape.mul(so, mo)?;
            tape.add(a, b)?
        }
        (true, false) => critic.intra.pairwise(tape, store, en, em)?,
        _ => critic.inter.pairwise(tape, store, en, em)?,
    };
    let pos_rows: Vec<usize> = neigh_of.iter().enumerate().map(|(i, &j)| i * d + j).collect();
    let pos = tape.gather_rows(scores, &pos_rows)?;
    let pos = tape.log_sigmoid(pos);
    let pos = tape.mean(pos);
    let mut counts = vec![0.0; d];
    for &j in neigh_of {
        counts[j] += 1.0;
    }
    let norm = (k * (k - 1)) as f64;
    let weights = Array2::from_shape_fn((k * d, 1), |(r, _)| {
        let (i, j) = (r / d, r % d);
        (counts[j] - f64::from(neigh_of[i] == j)) / norm
    });
    let neg = tape.scale(scores, -1.0);
    let neg = tape.log_sigmoid(neg);
    let w = tape.input(weights);
    let neg = tape.mul(neg, w)?;
    let neg = tape.sum(neg);
    tape.add(pos, neg)
}

/// Inputs of [`gan_objective`] for one sampled partition.
pub struct OmegaBatch {
    pub nodes: Array2<f64>,
    pub neighs: Array2<f64>,
    pub neigh_of: Vec<usize>,
    pub heads: Vec<HeadKind>,
}

impl OmegaBatch {
    pub fn build(hier: &Hierarchy, cache: &mut NeighborhoodCache, omega: &SampleSet) -> Result<Self> {
        let ids: Vec<TreeNodeId> = omega.entries.iter().map(|e| e.node).collect();
        let nodes = hier.embeddings_of(&ids)?;
        let mut keys: Vec<Option<TreeNodeId>> = Vec::new();
        let mut neigh_of = Vec::with_capacity(ids.len());
        let mut heads = Vec::with_capacity(ids.len());
        for e in &omega.entries {
            let key = match e.role {
                Role::Intra => None,
                Role::Inter { source } => Some(source),
            };
            let j = keys.iter().position(|&k| k == key).unwrap_or_else(|| {
                keys.push(key);
                keys.len() - 1
            });
            neigh_of.push(j);
            heads.push(e.role.into());
        }
        let rows: Vec<Array1<f64>> = keys.iter().map(|&q| cache.get(hier, omega.partition, q)).collect::<Result<_>>()?;
        let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
        let neighs = ndarray::concatenate(Axis(0), &views).map_err(|e| EdenError::Dimension(e.to_string()))?;
        Ok(OmegaBatch {
            nodes,
            neighs,
            neigh_of,
            heads,
        })
    }

    pub fn objective(&self, tape: &mut Tape, store: &ParamStore, critic: &Critic) -> Result<Var> {
        let n = tape.input(self.nodes.clone());
        let m = tape.input(self.neighs.clone());
        gan_objective(tape, store, critic, n, m, &self.neigh_of, &self.heads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticTraining {
    pub epochs: usize,
    pub lr: f64,
    pub kappa: f64,
    pub seed: u64,
}

/// Samples `Ω_p` for every partition at the given depths.
pub fn sample_level_sets(tree: &PartitionTree, hier: &Hierarchy, depths: &[usize], kappa: f64, seed: u64) -> Result<Vec<SampleSet>> {
    let mut out = Vec::new();
    for &d in depths {
        for p in hier.partitions(d) {
            out.push(sample_omega(tree, p, kappa, seed)?);
        }
    }
    Ok(out)
}

/// One ascent step on the summed objective over `sets`; returns the mean
/// objective before the step. Sets with fewer than two samples are skipped.
pub fn critic_step(
    critic: &Critic,
    store: &mut ParamStore,
    adam: &mut Adam,
    hier: &Hierarchy,
    cache: &mut NeighborhoodCache,
    sets: &[SampleSet],
) -> Result<Option<f64>> {
    let mut tape = Tape::new();
    let mut terms = Vec::new();
    for omega in sets.iter().filter(|s| s.entries.len() >= 2) {
        let batch = OmegaBatch::build(hier, cache, omega)?;
        let obj = batch.objective(&mut tape, store, critic)?;
        if !tape.scalar(obj).is_finite() {
            return Err(EdenError::Divergence(format!(
                "critic objective is not finite on partition {}",
                omega.partition
            )));
        }
        terms.push(obj);
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let stacked = tape.vstack(&terms)?;
    let mean = tape.mean(stacked);
    let value = tape.scalar(mean);
    let loss = tape.scale(stacked, -1.0);
    let loss = tape.sum(loss);
    let grads = tape.backward(loss, store)?;
    adam.step(store, &grads)?;
    Ok(Some(value))
}

/// Trains the critic on the partitions at `depths`, resampling every epoch.
/// Returns the per-epoch mean objective.
pub fn train_critic(
    critic: &Critic,
    store: &mut ParamStore,
    tree: &PartitionTree,
    hier: &Hierarchy,
    cache: &mut NeighborhoodCache,
    depths: &[usize],
    cfg: &CriticTraining,
) -> Result<Vec<f64>> {
    let mut adam = Adam::new(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let seed = crate::rng::derive_seed(cfg.seed, &[epoch as u64]);
        let sets = sample_level_sets(tree, hier, depths, cfg.kappa, seed)?;
        if let Some(v) = critic_step(critic, store, &mut adam, hier, cache, &sets)? {
            trace.push(v);
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub graph_node: usize,
    pub from: TreeNodeId,
    pub to: TreeNodeId,
    pub s21: f64,
    pub s22: f64,
    pub applied: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

/// Moves leaves sampled into a sibling partition when the critic prefers the
/// sibling by more than `delta`. Every qualifying leaf moves to the partition
/// with the largest margin; moves that would empty their source are skipped.
pub fn refine_tree(g: &DiGraph, tree: &PartitionTree, scores: &[AffinityScores], delta: f64) -> Result<(PartitionTree, Vec<MoveRecord>)> {
    if delta.is_nan() || delta < 0.0 {
        return Err(EdenError::Parameter(format!("delta must be non-negative, got {delta}")));
    }
    let mut best: indexmap::IndexMap<TreeNodeId, (TreeNodeId, TreeNodeId, f64, f64)> = indexmap::IndexMap::new();
    for set in scores {
        for e in &set.entries {
            let (Role::Inter { source }, Some(s21), Some(s22)) = (e.role, e.s21, e.s22) else {
                continue;
            };
            let leaf = tree.node(e.node)?;
            if leaf.kind != NodeKind::Leaf || s21.partial_cmp(&(s22 + delta)) != Some(Ordering::Greater) {
                continue;
            }
            let margin = s21 - s22;
            match best.get(&e.node) {
                Some(&(_, _, a, b)) if a - b >= margin => {}
                _ => {
                    best.insert(e.node, (source, set.partition, s21, s22));
                }
            }
        }
    }
    best.sort_keys();
    let mut remaining: indexmap::IndexMap<TreeNodeId, usize> = indexmap::IndexMap::new();
    let mut log = Vec::new();
    let mut moves = Vec::new();
    for (&leaf, &(from, to, s21, s22)) in &best {
        let left = remaining.entry(from).or_insert_with(|| tree.children(from).len());
        let graph_node = tree.node(leaf)?.graph_node.unwrap();
        let mut rec = MoveRecord {
            graph_node,
            from,
            to,
            s21,
            s22,
            applied: false,
            skipped: None,
        };
        if *left <= 1 {
            rec.skipped = Some(format!("moving would empty partition {from}"));
        } else {
            *left -= 1;
            rec.applied = true;
            moves.push((graph_node, to));
        }
        log.push(rec);
    }
    let mut refined = tree.clone();
    refined.move_leaves(g, &moves)?;
    Ok((refined, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::tree::{build_hkt, MergeStrategy};

    fn sample_tree() -> (DiGraph, PartitionTree) {
        let g = DiGraph::from_edges(8, &[(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (3, 4)]).unwrap();
        let t = build_hkt(&g, 2, MergeStrategy::Exhaustive).unwrap().tree;
        (g, t)
    }

    #[test]
    fn kappa_one_is_the_partition() {
        let (_, t) = sample_tree();
        let p = t.children(t.root())[0];
        let s = sample_omega(&t, p, 1.0, 0).unwrap();
        assert_eq!(s.entries.len(), t.children(p).len());
        assert!(s.entries.iter().all(|e| e.role == Role::Intra));
    }

    #[test]
    fn kappa_two_takes_the_sibling() {
        let (_, t) = sample_tree();
        let kids = t.children(t.root()).to_vec();
        assert_eq!(t.children(kids[0]).len(), t.children(kids[1]).len());
        let s = sample_omega(&t, kids[0], 2.0, 5).unwrap();
        let mut nodes: Vec<_> = s.entries.iter().map(|e| e.node).collect();
        nodes.sort();
        let mut all: Vec<_> = kids.iter().flat_map(|&k| t.children(k).to_vec()).collect();
        all.sort();
        assert_eq!(nodes, all);
        assert_eq!(s.shortfall, 0);
    }

    #[test]
    fn ceiling_and_shortfall() {
        let (_, t) = sample_tree();
        let p = t.children(t.root())[0];
        assert_eq!(sample_omega(&t, p, 1.5, 1).unwrap().entries.len(), 6);
        let root = sample_omega(&t, t.root(), 2.0, 1).unwrap();
        assert_eq!((root.target, root.shortfall), (4, 2));
        assert!(sample_omega(&t, p, 2.5, 1).is_err());
        assert_eq!(sample_omega(&t, p, 1.5, 9).unwrap(), sample_omega(&t, p, 1.5, 9).unwrap());
    }

    #[test]
    fn zero_critic_gives_minus_two_ln_two() {
        let mut store = ParamStore::new();
        let critic = Critic::new(&mut store, &mut stream_rng(0, 0), 3, 4, 5).unwrap();
        critic.zero_heads(&mut store);
        let mut tape = Tape::new();
        let x = tape.input(Array2::from_shape_fn((4, 3), |(i, j)| (i + 2 * j) as f64));
        let y = tape.input(Array2::from_shape_fn((2, 3), |(i, j)| (i * j) as f64));
        let heads = [HeadKind::Intra, HeadKind::Inter, HeadKind::Intra, HeadKind::Inter];
        let obj = gan_objective(&mut tape, &store, &critic, x, y, &[0, 1, 0, 1], &heads).unwrap();
        assert!((tape.scalar(obj) + 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_sample_is_rejected() {
        let mut store = ParamStore::new();
        let critic = Critic::new(&mut store, &mut stream_rng(0, 0), 2, 2, 2).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Array2::zeros((1, 2)));
        let r = gan_objective(&mut tape, &store, &critic, x, x, &[0], &[HeadKind::Intra]);
        assert!(matches!(r, Err(EdenError::Contract(_))));
    }

    #[test]
    fn encoders_are_shared_between_heads() {
        let mut store = ParamStore::new();
        let critic = Critic::new(&mut store, &mut stream_rng(2, 0), 3, 3, 4).unwrap();
        let x = Array2::from_elem((1, 3), 0.5);
        let before = (
            critic.scores(&store, HeadKind::Intra, &x, &x).unwrap()[0],
            critic.scores(&store, HeadKind::Inter, &x, &x).unwrap()[0],
        );
        store.get_mut("critic.w1.w0").unwrap().mapv_inplace(|w| w + 0.3);
        let after = (
            critic.scores(&store, HeadKind::Intra, &x, &x).unwrap()[0],
            critic.scores(&store, HeadKind::Inter, &x, &x).unwrap()[0],
        );
        assert!(before.0 != after.0 && before.1 != after.1);
    }
}
