//! Run configuration read from TOML.
//!
//! A file has a mandatory top-level `seed` and optional sections
//! `[data]`, `[tree]`, `[refine]`, `[distill]`, `[walk]`, `[propagation]`,
//! `[train]` and `[ablation]`. Unknown keys are rejected. Relative paths in
//! `[data]` are resolved against the directory holding the file.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! edges = "edges.txt"
//! features = "features.csv"
//! labels = "labels.csv"
//! split = "frac:0.5,0.25,0.25@1"
//! task = "node-c"
//!
//! [tree]
//! height = 3
//! strategy = { kind = "monte-carlo", seed = 3 }
//!
//! [propagation]
//! mode = { kind = "magnetic", q = 0.05 }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EdenError, Result};
use crate::graph::{GraphSources, SplitSpec};
use crate::pipeline::{PipelineConfig, RefineSettings, TreeSettings};
use crate::predict::{AblationFlags, SplitRatios, Task, TrainConfig, WalkConfig};
use crate::propagation::PropagationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// A split file or `frac:TRAIN,VAL,TEST@SEED`.
    pub split: Option<String>,
    pub num_classes: Option<usize>,
    pub task: Task,
    /// Edge split used by the link tasks.
    pub link_split: SplitRatios,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            edges: None,
            features: None,
            labels: None,
            split: None,
            num_classes: None,
            task: Task::NodeC,
            link_split: SplitRatios::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSection {
    pub kappa: f64,
    pub delta: f64,
    pub alternations: usize,
    pub critic_epochs: usize,
    pub critic_lr: f64,
    pub critic_enc: usize,
    pub critic_hidden: usize,
}

impl Default for RefineSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let r = RefineSettings::default();
        RefineSection {
            kappa: t.kappa,
            delta: r.delta,
            alternations: r.alternations,
            critic_epochs: r.critic_epochs,
            critic_lr: t.critic_lr,
            critic_enc: t.critic_enc,
            critic_hidden: t.critic_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub alpha: f64,
    pub kd_hidden: usize,
}

impl Default for DistillSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        DistillSection {
            alpha: t.alpha,
            kd_hidden: t.kd_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub hidden: usize,
    pub critic_steps: usize,
    pub link_dim: usize,
    pub eval_walks: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            patience: t.patience,
            lr: t.lr,
            hidden: t.hidden,
            critic_steps: t.critic_steps,
            link_dim: t.link_dim,
            eval_walks: t.eval_walks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub tree: TreeSettings,
    #[serde(default)]
    pub refine: RefineSection,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub walk: WalkConfig,
    #[serde(default)]
    pub propagation: PropagationConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub ablation: AblationFlags,
}

impl RunConfig {
    /// Defaults everywhere except the seed.
    pub fn with_seed(seed: u64) -> Self {
        RunConfig {
            seed,
            data: DataSection::default(),
            tree: TreeSettings::default(),
            refine: RefineSection::default(),
            distill: DistillSection::default(),
            walk: WalkConfig::default(),
            propagation: PropagationConfig::default(),
            train: TrainSection::default(),
            ablation: AblationFlags::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| EdenError::Config(e.to_string()))
    }

    /// Reads and validates a file, resolving data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EdenError::file(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = dir.join(&*q);
                }
            }
        };
        fix(&mut self.data.edges);
        fix(&mut self.data.features);
        fix(&mut self.data.labels);
        if let Some(s) = self.data.split.as_mut() {
            if !s.starts_with("frac:") && Path::new(s.as_str()).is_relative() {
                *s = dir.join(s.as_str()).to_string_lossy().into_owned();
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| EdenError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(3..=10).contains(&self.tree.height) {
            return Err(EdenError::Config(format!(
                "tree height must lie in [3, 10], got {}",
                self.tree.height
            )));
        }
        if self.refine.delta.is_nan() || self.refine.delta < 0.0 {
            return Err(EdenError::Config(format!("delta must be non-negative, got {}", self.refine.delta)));
        }
        self.data.link_split.validate().map_err(|e| EdenError::Config(e.to_string()))?;
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            patience: self.train.patience,
            lr: self.train.lr,
            alpha: self.distill.alpha,
            kappa: self.refine.kappa,
            hidden: self.train.hidden,
            kd_hidden: self.distill.kd_hidden,
            critic_enc: self.refine.critic_enc,
            critic_hidden: self.refine.critic_hidden,
            critic_lr: self.refine.critic_lr,
            critic_steps: self.train.critic_steps,
            link_dim: self.train.link_dim,
            eval_walks: self.train.eval_walks,
            walk: self.walk,
            propagation: self.propagation,
            ablation: self.ablation,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            tree: self.tree.clone(),
            refine: RefineSettings {
                delta: self.refine.delta,
                alternations: self.refine.alternations,
                critic_epochs: self.refine.critic_epochs,
            },
            train: self.train_config(),
            seed: self.seed,
        }
    }

    pub fn sources(&self) -> Result<GraphSources> {
        let edges = self
            .data
            .edges
            .clone()
            .ok_or_else(|| EdenError::Config("no edge file given".into()))?;
        Ok(GraphSources {
            edges,
            features: self.data.features.clone(),
            labels: self.data.labels.clone(),
            split: self.data.split.as_deref().map(SplitSpec::parse).transpose()?,
            num_classes: self.data.num_classes,
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
