//! Build, refine and train in sequence.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::distill::affinity_scores;
use crate::entropy::tree_entropy;
use crate::error::{EdenError, Result};
use crate::graph::{DiGraph, SplitMasks};
use crate::hierarchy::{Hierarchy, NeighborhoodCache};
use crate::mi::{refine_tree, sample_level_sets, train_critic, Critic, CriticTraining, MoveRecord};
use crate::nn::ParamStore;
use crate::predict::{make_link_split, EdenModel, EpochRecord, LinkSplit, Session, SplitMetrics, SplitRatios, Targets, Task, TrainConfig};
use crate::propagation::propagate_global;
use crate::rng::{derive_seed, salted_rng};
use crate::tree::{build_hkt, BuildOutcome, MergeStrategy, PartitionTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSettings {
    pub height: usize,
    pub strategy: MergeStrategy,
}

impl Default for TreeSettings {
    fn default() -> Self {
        TreeSettings {
            height: 3,
            strategy: MergeStrategy::Exhaustive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSettings {
    /// Margin by which the sibling partition must win before a leaf moves.
    pub delta: f64,
    /// Rounds of critic training followed by leaf moves.
    pub alternations: usize,
    pub critic_epochs: usize,
}

impl Default for RefineSettings {
    fn default() -> Self {
        RefineSettings {
            delta: 0.1,
            alternations: 1,
            critic_epochs: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub tree: TreeSettings,
    pub refine: RefineSettings,
    pub train: TrainConfig,
    pub seed: u64,
}

/// Log-degree features for graphs that come without any.
pub fn structural_features(g: &DiGraph) -> Array2<f64> {
    Array2::from_shape_fn((g.n(), 3), |(v, j)| match j {
        0 => (1.0 + g.in_degree(v) as f64).ln(),
        1 => (1.0 + g.out_degree(v) as f64).ln(),
        _ => 1.0,
    })
}

/// `g` itself when it has features, otherwise a copy with structural ones.
pub fn ensure_features(g: &DiGraph) -> Result<DiGraph> {
    if g.features().ncols() > 0 {
        return Ok(g.clone());
    }
    g.clone().with_features(structural_features(g))
}

/// Builds the tree on `g` with a self-loop on every sink.
pub fn build_stage(g: &DiGraph, settings: &TreeSettings) -> Result<BuildOutcome> {
    build_hkt(&g.add_sink_loops(), settings.height, settings.strategy)
}

pub struct RefineOutcome {
    pub tree: PartitionTree,
    pub moves: Vec<MoveRecord>,
    /// Mean critic objective per epoch, concatenated over rounds.
    pub critic_trace: Vec<f64>,
    pub critic: Critic,
    pub critic_params: ParamStore,
}

/// Trains the critic on the partitions directly above the leaves and moves
/// the leaves it prefers elsewhere, `alternations` times.
pub fn refine_stage(g: &DiGraph, tree: PartitionTree, cfg: &PipelineConfig) -> Result<RefineOutcome> {
    cfg.train.validate()?;
    let looped = g.add_sink_loops();
    let prop = &cfg.train.propagation;
    let z = propagate_global(g, g.features(), prop.mode, prop.hops)?;
    let mut rng = salted_rng(cfg.seed, &[0x637269]);
    let mut critic_params = ParamStore::new();
    let critic = Critic::new(
        &mut critic_params,
        &mut rng,
        z.ncols(),
        cfg.train.critic_enc,
        cfg.train.critic_hidden,
    )?;
    let mut tree = tree;
    let mut moves = Vec::new();
    let mut critic_trace = Vec::new();
    for round in 0..cfg.refine.alternations {
        let hier = Hierarchy::new(g, &tree, &z)?;
        let depth = hier
            .height()
            .checked_sub(1)
            .ok_or_else(|| EdenError::Structure("tree has no internal level".into()))?;
        let mut cache = NeighborhoodCache::new(prop.tau, prop.steps);
        let training = CriticTraining {
            epochs: cfg.refine.critic_epochs,
            lr: cfg.train.critic_lr,
            kappa: cfg.train.kappa,
            seed: derive_seed(cfg.seed, &[0x726566, round as u64]),
        };
        critic_trace.extend(train_critic(
            &critic,
            &mut critic_params,
            &tree,
            &hier,
            &mut cache,
            &[depth],
            &training,
        )?);
        let sets = sample_level_sets(&tree, &hier, &[depth], cfg.train.kappa, derive_seed(training.seed, &[u64::MAX]))?;
        let scores = sets
            .iter()
            .map(|s| affinity_scores(&critic, &critic_params, &hier, &mut cache, s, true))
            .collect::<Result<Vec<_>>>()?;
        let (next, log) = refine_tree(&looped, &tree, &scores, cfg.refine.delta)?;
        let applied = log.iter().filter(|m| m.applied).count();
        moves.extend(log);
        tree = next;
        if applied == 0 {
            break;
        }
    }
    Ok(RefineOutcome {
        tree,
        moves,
        critic_trace,
        critic,
        critic_params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub build_entropy: f64,
    pub refined_entropy: f64,
    pub moves: Vec<MoveRecord>,
    pub critic_trace: Vec<f64>,
    pub history: Vec<EpochRecord>,
    pub metrics: SplitMetrics,
    pub best_epoch: usize,
}

pub struct PipelineOutcome {
    pub tree: PartitionTree,
    pub model: EdenModel,
    pub report: PipelineReport,
}

/// The graph a task trains on together with its labelled examples.
pub enum TaskData {
    Nodes {
        graph: DiGraph,
        labels: Vec<Option<usize>>,
        classes: usize,
        masks: SplitMasks,
    },
    Links(LinkSplit),
}

impl TaskData {
    /// Node tasks need labels and masks on `g`; link tasks split the edges
    /// and train on what remains. Graphs without features get structural ones.
    pub fn prepare(g: &DiGraph, task: Task, ratios: SplitRatios, seed: u64) -> Result<Self> {
        let g = &ensure_features(g)?;
        if task.is_link() {
            return Ok(TaskData::Links(make_link_split(g, task, ratios, seed)?));
        }
        let labels = g
            .labels()
            .ok_or_else(|| EdenError::Config("node classification needs a label file".into()))?;
        let masks = g
            .masks()
            .ok_or_else(|| EdenError::Config("node classification needs a split".into()))?;
        Ok(TaskData::Nodes {
            graph: g.clone(),
            labels: labels.as_slice().to_vec(),
            classes: labels.num_classes(),
            masks: masks.clone(),
        })
    }

    pub fn graph(&self) -> &DiGraph {
        match self {
            TaskData::Nodes { graph, .. } => graph,
            TaskData::Links(s) => &s.train_graph,
        }
    }

    pub fn targets(&self) -> Targets<'_> {
        match self {
            TaskData::Nodes {
                labels, classes, masks, ..
            } => Targets::Nodes {
                labels,
                classes: *classes,
                masks,
            },
            TaskData::Links(s) => Targets::Links(s),
        }
    }
}

/// Seed of the training session inside [`run_pipeline`].
pub fn session_seed(seed: u64) -> u64 {
    derive_seed(seed, &[0x747261696e])
}

/// A session over a stored tree with parameters loaded from a checkpoint.
pub fn restore_session<'a>(
    g: &'a DiGraph,
    tree: &'a PartitionTree,
    targets: &Targets,
    cfg: &PipelineConfig,
    checkpoint: &ParamStore,
) -> Result<Session<'a>> {
    let mut session = Session::new(g, tree, targets, &cfg.train, session_seed(cfg.seed), None)?;
    session.model.restore(checkpoint)?;
    Ok(session)
}

/// Runs build, refinement and training on `g`, which must already exclude
/// any held-out edges.
pub fn run_pipeline(g: &DiGraph, targets: &Targets, cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.train.validate()?;
    let g = ensure_features(g)?;
    let built = build_stage(&g, &cfg.tree)?;
    let refined = refine_stage(&g, built.tree, cfg)?;
    let refined_entropy = tree_entropy(&g.add_sink_loops(), &refined.tree)?.value;
    let mut session = Session::new(
        &g,
        &refined.tree,
        targets,
        &cfg.train,
        session_seed(cfg.seed),
        Some((refined.critic, refined.critic_params)),
    )?;
    let outcome = session.fit(targets)?;
    let model = session.model.clone();
    Ok(PipelineOutcome {
        tree: refined.tree,
        model,
        report: PipelineReport {
            build_entropy: built.entropy,
            refined_entropy,
            moves: refined.moves,
            critic_trace: refined.critic_trace,
            history: outcome.history,
            metrics: outcome.metrics,
            best_epoch: outcome.best_epoch,
        },
    })
}
