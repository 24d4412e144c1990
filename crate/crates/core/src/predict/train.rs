use indexmap::IndexMap;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, auc, average_precision, Metrics};
use super::split::{LinkExample, LinkSplit, Task};
use super::walk::{sample_walk, WalkConfig, WalkPath};
use crate::distill::{affinity_scores, distill_tree, AffinityScores, DistillPass, KdNets, PartitionKnowledge};
use crate::error::{EdenError, Result};
use crate::graph::{DiGraph, SplitMasks};
use crate::hierarchy::{Hierarchy, NeighborhoodCache};
use crate::mi::{critic_step, sample_level_sets, Critic, SampleSet};
use crate::nn::{grad_check, Activation, Adam, GradCheck, Mlp, ParamStore, Tape, Var};
use crate::propagation::{propagate_global, PropagationConfig};
use crate::rng::{derive_seed, salted_rng, stream_rng};
use crate::tree::PartitionTree;

/// Switches for the four ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub diverse_knowledge: bool,
    pub personalized_transfer: bool,
    pub tree_walk: bool,
    pub kd_loss: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            diverse_knowledge: true,
            personalized_transfer: true,
            tree_walk: true,
            kd_loss: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    /// Weight of the distillation loss.
    pub alpha: f64,
    pub kappa: f64,
    pub hidden: usize,
    pub kd_hidden: usize,
    pub critic_enc: usize,
    pub critic_hidden: usize,
    pub critic_lr: f64,
    /// Critic updates per training epoch.
    pub critic_steps: usize,
    /// Width of the leaf distributions in link tasks.
    pub link_dim: usize,
    /// Walks averaged per node at evaluation time.
    pub eval_walks: usize,
    pub walk: WalkConfig,
    pub propagation: PropagationConfig,
    pub ablation: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            patience: 50,
            lr: 0.01,
            alpha: 0.5,
            kappa: 1.5,
            hidden: 32,
            kd_hidden: 16,
            critic_enc: 16,
            critic_hidden: 16,
            critic_lr: 0.01,
            critic_steps: 1,
            link_dim: 8,
            eval_walks: 4,
            walk: WalkConfig::default(),
            propagation: PropagationConfig::default(),
            ablation: AblationFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(EdenError::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(1.0..=2.0).contains(&self.kappa) {
            return Err(EdenError::Config(format!("kappa must lie in [1, 2], got {}", self.kappa)));
        }
        if self.lr.is_nan() || self.lr < 0.0 || self.critic_lr.is_nan() || self.critic_lr < 0.0 {
            return Err(EdenError::Config("learning rates must be non-negative".into()));
        }
        if self.hidden == 0 || self.kd_hidden == 0 || self.critic_enc == 0 || self.critic_hidden == 0 || self.link_dim == 0 {
            return Err(EdenError::Config("layer widths must be positive".into()));
        }
        if self.eval_walks == 0 {
            return Err(EdenError::Config("eval_walks must be at least 1".into()));
        }
        self.walk.validate()?;
        self.propagation.validate()
    }

    fn walk_len(&self) -> usize {
        if self.ablation.tree_walk {
            self.walk.k
        } else {
            0
        }
    }
}

/// What the model is trained to predict.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Nodes {
        labels: &'a [Option<usize>],
        classes: usize,
        masks: &'a SplitMasks,
    },
    Links(&'a LinkSplit),
}

impl Targets<'_> {
    pub fn task(&self) -> Task {
        match self {
            Targets::Nodes { .. } => Task::NodeC,
            Targets::Links(s) => s.task,
        }
    }
}

/// Trainable parts of the model plus the critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdenModel {
    pub encoder: Mlp,
    pub kd: KdNets,
    pub head: Mlp,
    pub critic: Critic,
    pub task: Task,
    #[serde(skip)]
    pub params: ParamStore,
    #[serde(skip)]
    pub critic_params: ParamStore,
}

impl EdenModel {
    /// Model and critic parameters in one store.
    pub fn checkpoint(&self) -> ParamStore {
        let mut all = self.params.clone();
        for (name, value) in self.critic_params.iter() {
            all.insert(name, value.clone()).expect("disjoint parameter names");
        }
        all
    }

    pub fn restore(&mut self, checkpoint: &ParamStore) -> Result<()> {
        for (name, value) in checkpoint.iter() {
            let target = if name.starts_with("critic.") {
                &mut self.critic_params
            } else {
                &mut self.params
            };
            let slot = target
                .get_mut(name)
                .ok_or_else(|| EdenError::Parameter(format!("checkpoint has unknown parameter {name}")))?;
            if slot.dim() != value.dim() {
                return Err(EdenError::Dimension(format!(
                    "checkpoint parameter {name} is {:?} but the configured model expects {:?}; \
                     was the checkpoint trained under a different configuration?",
                    value.dim(),
                    slot.dim()
                )));
            }
            slot.assign(value);
        }
        Ok(())
    }
}

/// Everything fixed for the duration of a run.
pub struct Session<'a> {
    pub graph: &'a DiGraph,
    pub tree: &'a PartitionTree,
    pub hier: Hierarchy,
    pub z: Array2<f64>,
    pub cache: NeighborhoodCache,
    pub cfg: TrainConfig,
    pub seed: u64,
    pub model: EdenModel,
    depths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub kd: f64,
    pub critic_objective: Option<f64>,
    pub val: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub train: Metrics,
    pub val: Metrics,
    pub test: Metrics,
}

pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub metrics: SplitMetrics,
    pub best_epoch: usize,
}

/// Class probabilities for the examples of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub probabilities: Array2<f64>,
    pub truth: Vec<usize>,
}

const TRAIN_SALT: u64 = 0x7472;
const EVAL_SALT: u64 = 0x6576;

impl<'a> Session<'a> {
    /// `graph` supplies the features and the propagation structure; `critic`
    /// may carry a critic trained earlier (e.g. while refining the tree).
    pub fn new(
        graph: &'a DiGraph,
        tree: &'a PartitionTree,
        targets: &Targets,
        cfg: &TrainConfig,
        seed: u64,
        critic: Option<(Critic, ParamStore)>,
    ) -> Result<Self> {
        cfg.validate()?;
        let features = graph.features();
        if features.ncols() == 0 {
            return Err(EdenError::Config("the graph carries no node features".into()));
        }
        let z = propagate_global(graph, features, cfg.propagation.mode, cfg.propagation.hops)?;
        let hier = Hierarchy::new(graph, tree, &z)?;
        let cache = NeighborhoodCache::new(cfg.propagation.tau, cfg.propagation.steps);
        let task = targets.task();
        let (rep, out, pair) = match targets {
            Targets::Nodes { classes, .. } => {
                if *classes < 2 {
                    return Err(EdenError::Config("node classification needs at least two classes".into()));
                }
                (*classes, *classes, 1)
            }
            Targets::Links(s) => (cfg.link_dim, s.task.link_classes(), 2),
        };
        let mut rng = salted_rng(seed, &[0x696e6974]);
        let mut params = ParamStore::new();
        let encoder = Mlp::new(
            &mut params,
            &mut rng,
            "encoder",
            &[z.ncols(), rep],
            Activation::Identity,
            Activation::Identity,
        )?;
        let kd = KdNets::new(&mut params, &mut rng, rep, cfg.kd_hidden)?;
        let head_in = pair * (cfg.walk_len() + 1) * rep;
        let head = Mlp::new(
            &mut params,
            &mut rng,
            "head",
            &[head_in, cfg.hidden, out],
            Activation::Tanh,
            Activation::Identity,
        )?;
        let (critic, critic_params) = match critic {
            Some(c) => c,
            None => {
                let mut cp = ParamStore::new();
                let c = Critic::new(&mut cp, &mut rng, z.ncols(), cfg.critic_enc, cfg.critic_hidden)?;
                (c, cp)
            }
        };
        if critic.in_dim() != z.ncols() {
            return Err(EdenError::Dimension("critic input width differs from the embeddings".into()));
        }
        let depths = (0..hier.height()).collect();
        Ok(Session {
            graph,
            tree,
            hier,
            z,
            cache,
            cfg: cfg.clone(),
            seed,
            model: EdenModel {
                encoder,
                kd,
                head,
                critic,
                task,
                params,
                critic_params,
            },
            depths,
        })
    }

    fn sample_sets(&self, seed: u64) -> Result<Vec<SampleSet>> {
        sample_level_sets(self.tree, &self.hier, &self.depths, self.cfg.kappa, seed)
    }

    fn scores(&mut self, sets: &[SampleSet]) -> Result<IndexMap<usize, AffinityScores>> {
        let mut out = IndexMap::with_capacity(sets.len());
        for set in sets {
            let s = affinity_scores(
                &self.model.critic,
                &self.model.critic_params,
                &self.hier,
                &mut self.cache,
                set,
                self.cfg.ablation.diverse_knowledge,
            )?;
            out.insert(set.partition, s);
        }
        Ok(out)
    }

    fn walks(&self, seed: u64) -> Vec<WalkPath> {
        let walk = WalkConfig {
            k: self.cfg.walk_len(),
            ..self.cfg.walk
        };
        (0..self.graph.n())
            .map(|v| sample_walk(self.tree, self.tree.leaf_of(v), &walk, &mut stream_rng(seed, v as u64)))
            .collect()
    }

    /// Leaf distributions, tree representations and the distillation loss.
    fn represent(&self, tape: &mut Tape, store: &ParamStore, scores: &IndexMap<usize, AffinityScores>) -> Result<DistillPass> {
        let z = tape.input(self.z.clone());
        let logits = self.model.encoder.forward(tape, store, z)?;
        let reps = tape.softmax_rows(logits);
        let nets = self.cfg.ablation.personalized_transfer.then_some(&self.model.kd);
        distill_tree(tape, store, nets, &self.hier, reps, scores, self.cfg.ablation.kd_loss)
    }

    fn head_logits(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        pass: &DistillPass,
        walks: &[WalkPath],
        anchors: &[Vec<usize>],
    ) -> Result<Var> {
        let mut cols = Vec::new();
        for side in anchors {
            let len = walks[side[0]].steps.len() + 1;
            for t in 0..len {
                let rows: Vec<usize> = side.iter().map(|&v| pass.row_of[walks[v].nodes().nth(t).unwrap()]).collect();
                cols.push(tape.gather_rows(pass.table, &rows)?);
            }
        }
        let x = tape.concat_cols(&cols)?;
        self.model.head.forward(tape, store, x)
    }

    /// Total loss, cross-entropy and distillation term for `examples`.
    fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        scores: &IndexMap<usize, AffinityScores>,
        walks: &[WalkPath],
        examples: &Examples,
    ) -> Result<(Var, Var, Option<Var>)> {
        let pass = self.represent(tape, store, scores)?;
        let logits = self.head_logits(tape, store, &pass, walks, &Self::anchors(examples))?;
        let ce = tape.cross_entropy(logits, &examples.truth())?;
        let loss = match pass.loss {
            Some(kd) if self.cfg.ablation.kd_loss && self.cfg.alpha > 0.0 => {
                let scaled = tape.scale(kd, self.cfg.alpha);
                tape.add(ce, scaled)?
            }
            _ => ce,
        };
        Ok((loss, ce, pass.loss))
    }

    /// Compares backprop with central differences on the training loss of
    /// `epoch`, holding the critic scores and walks of that epoch fixed.
    pub fn check_gradients(&mut self, examples: &Examples, epoch: usize, eps: f64, max_coords: usize) -> Result<GradCheck> {
        let seed = derive_seed(self.seed, &[TRAIN_SALT, epoch as u64]);
        let sets = self.sample_sets(seed)?;
        let scores = self.scores(&sets)?;
        let walks = self.walks(seed);
        let mut store = self.model.params.clone();
        let this = &*self;
        grad_check(
            &mut store,
            |tape, store| Ok(this.loss(tape, store, &scores, &walks, examples)?.0),
            eps,
            max_coords,
            seed,
        )
    }

    fn anchors(examples: &Examples) -> Vec<Vec<usize>> {
        match examples {
            Examples::Nodes(nodes, _) => vec![nodes.clone()],
            Examples::Links(ex) => vec![ex.iter().map(|e| e.u).collect(), ex.iter().map(|e| e.v).collect()],
        }
    }

    /// Class probabilities for `examples`, averaged over the fixed evaluation walks.
    pub fn predict(&mut self, examples: &Examples) -> Result<Predictions> {
        let seed = derive_seed(self.seed, &[EVAL_SALT]);
        let sets = self.sample_sets(seed)?;
        let scores = self.scores(&sets)?;
        let mut tape = Tape::new();
        let pass = self.represent(&mut tape, &self.model.params, &scores)?;
        let anchors = Self::anchors(examples);
        let mut probs: Option<Array2<f64>> = None;
        for w in 0..self.cfg.eval_walks {
            let walks = self.walks(derive_seed(seed, &[w as u64]));
            let logits = self.head_logits(&mut tape, &self.model.params, &pass, &walks, &anchors)?;
            let p = tape.softmax_rows(logits);
            let p = tape.value(p).clone();
            probs = Some(match probs {
                Some(acc) => acc + p,
                None => p,
            });
        }
        let probabilities = probs.unwrap() / self.cfg.eval_walks as f64;
        Ok(Predictions {
            probabilities,
            truth: examples.truth(),
        })
    }

    /// Parent knowledge generated with the evaluation samples.
    pub fn knowledge(&mut self) -> Result<Vec<PartitionKnowledge>> {
        let seed = derive_seed(self.seed, &[EVAL_SALT]);
        let sets = self.sample_sets(seed)?;
        let scores = self.scores(&sets)?;
        let mut tape = Tape::new();
        let pass = self.represent(&mut tape, &self.model.params, &scores)?;
        Ok(pass.knowledge(&tape, &self.hier))
    }

    pub fn evaluate(&mut self, examples: &Examples) -> Result<Metrics> {
        if examples.is_empty() {
            return Ok(Metrics::default());
        }
        let p = self.predict(examples)?;
        evaluate(&p, self.model.task)
    }

    fn train_step(
        &mut self,
        epoch: usize,
        adam: &mut Adam,
        critic_adam: &mut Adam,
        train: &Examples,
    ) -> Result<(f64, f64, f64, Option<f64>)> {
        let seed = derive_seed(self.seed, &[TRAIN_SALT, epoch as u64]);
        let sets = self.sample_sets(seed)?;
        let mut critic_obj = None;
        for _ in 0..self.cfg.critic_steps {
            critic_obj = critic_step(
                &self.model.critic,
                &mut self.model.critic_params,
                critic_adam,
                &self.hier,
                &mut self.cache,
                &sets,
            )?;
        }
        let scores = self.scores(&sets)?;
        let walks = self.walks(seed);
        let mut tape = Tape::new();
        let (loss, ce, kd) = self.loss(&mut tape, &self.model.params, &scores, &walks, train)?;
        let ce_value = tape.scalar(ce);
        let kd_value = kd.map_or(0.0, |kd| tape.scalar(kd));
        let loss_value = tape.scalar(loss);
        if !loss_value.is_finite() {
            return Err(EdenError::Divergence(format!("loss became {loss_value} at epoch {epoch}")));
        }
        let grads = tape.backward(loss, &self.model.params)?;
        adam.step(&mut self.model.params, &grads)?;
        Ok((loss_value, ce_value, kd_value, critic_obj))
    }

    /// Trains with early stopping on the validation metric and restores the
    /// best parameters seen.
    pub fn fit(&mut self, targets: &Targets) -> Result<TrainOutcome> {
        let (train, val, test) = Examples::from_targets(targets)?;
        if train.is_empty() {
            return Err(EdenError::Count("no training examples".into()));
        }
        let mut adam = Adam::new(self.cfg.lr);
        let mut critic_adam = Adam::new(self.cfg.critic_lr);
        let mut history = Vec::new();
        let mut best = (self.selection_key(&val)?, 0usize);
        let mut best_params = (self.model.params.clone(), self.model.critic_params.clone());
        let mut since_best = 0;
        for epoch in 1..=self.cfg.epochs {
            let (loss, ce, kd, critic_objective) = self.train_step(epoch, &mut adam, &mut critic_adam, &train)?;
            let val_metrics = self.evaluate(&val)?;
            let key = self.selection_key(&val)?;
            history.push(EpochRecord {
                epoch,
                loss,
                ce,
                kd,
                critic_objective,
                val: val_metrics,
            });
            if key.0 > best.0 .0 || (key.0 == best.0 .0 && key.1 < best.0 .1) {
                best = (key, epoch);
                best_params = (self.model.params.clone(), self.model.critic_params.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= self.cfg.patience {
                    break;
                }
            }
        }
        (self.model.params, self.model.critic_params) = best_params;
        let metrics = SplitMetrics {
            train: self.evaluate(&train)?,
            val: self.evaluate(&val)?,
            test: self.evaluate(&test)?,
        };
        Ok(TrainOutcome {
            history,
            metrics,
            best_epoch: best.1,
        })
    }

    /// (primary validation metric, validation cross-entropy).
    fn selection_key(&mut self, val: &Examples) -> Result<(f64, f64)> {
        if val.is_empty() {
            return Ok((0.0, 0.0));
        }
        let p = self.predict(val)?;
        let m = evaluate(&p, self.model.task)?;
        let primary = match self.model.task {
            Task::Existence | Task::Direction => m.auc.unwrap_or(0.0),
            _ => m.acc.unwrap_or(0.0),
        };
        let ce = p
            .truth
            .iter()
            .enumerate()
            .map(|(i, &t)| -p.probabilities[[i, t]].max(1e-300).ln())
            .sum::<f64>()
            / p.truth.len() as f64;
        Ok((primary, ce))
    }
}

/// Labelled examples of one split.
#[derive(Debug, Clone, PartialEq)]
pub enum Examples {
    Nodes(Vec<usize>, Vec<usize>),
    Links(Vec<LinkExample>),
}

impl Examples {
    pub fn is_empty(&self) -> bool {
        match self {
            Examples::Nodes(n, _) => n.is_empty(),
            Examples::Links(l) => l.is_empty(),
        }
    }

    pub fn truth(&self) -> Vec<usize> {
        match self {
            Examples::Nodes(_, y) => y.clone(),
            Examples::Links(l) => l.iter().map(|e| e.label).collect(),
        }
    }

    /// Train, validation and test examples.
    pub fn from_targets(targets: &Targets) -> Result<(Self, Self, Self)> {
        match targets {
            Targets::Nodes { labels, masks, .. } => {
                let pick = |mask: &[bool]| -> Self {
                    let nodes: Vec<usize> = SplitMasks::indices(mask)
                        .into_iter()
                        .filter(|&v| labels.get(v).copied().flatten().is_some())
                        .collect();
                    let y = nodes.iter().map(|&v| labels[v].unwrap()).collect();
                    Examples::Nodes(nodes, y)
                };
                Ok((pick(&masks.train), pick(&masks.val), pick(&masks.test)))
            }
            Targets::Links(s) => Ok((
                Examples::Links(s.train.clone()),
                Examples::Links(s.val.clone()),
                Examples::Links(s.test.clone()),
            )),
        }
    }
}

/// ACC for every task, plus AUC and AP (positive class 1) for binary link tasks.
pub fn evaluate(p: &Predictions, task: Task) -> Result<Metrics> {
    let predicted: Vec<usize> = p
        .probabilities
        .axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                .0
        })
        .collect();
    let mut m = Metrics {
        acc: Some(accuracy(&predicted, &p.truth)?),
        ..Metrics::default()
    };
    if matches!(task, Task::Existence | Task::Direction) {
        let scores: Vec<f64> = p.probabilities.column(1).to_vec();
        let positive: Vec<bool> = p.truth.iter().map(|&t| t == 1).collect();
        m.auc = auc(&scores, &positive).ok();
        m.ap = average_precision(&scores, &positive).ok();
    }
    Ok(m)
}
