//! Hierarchical directed stochastic block model with noisy class features.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EdenError, Result};
use crate::graph::{DiGraph, Labels, SplitMasks};
use crate::rng::salted_rng;

/// Communities are grouped into equally sized super-communities; labels are
/// the community ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsbmConfig {
    pub n: usize,
    pub communities: usize,
    pub super_communities: usize,
    pub features: usize,
    /// Edge probability inside a community.
    pub p_in: f64,
    /// Between communities of the same super-community.
    pub p_mid: f64,
    /// Between super-communities.
    pub p_out: f64,
    /// Probability that a cross-community edge points from the lower to the
    /// higher community id.
    pub forward_bias: f64,
    /// Probability that an edge is also present in the opposite direction.
    pub reciprocity: f64,
    /// Scale of the class means relative to unit feature noise.
    pub signal: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for DsbmConfig {
    fn default() -> Self {
        DsbmConfig {
            n: 200,
            communities: 4,
            super_communities: 2,
            features: 16,
            p_in: 0.12,
            p_mid: 0.03,
            p_out: 0.008,
            forward_bias: 0.8,
            reciprocity: 0.1,
            signal: 0.35,
            train_fraction: 0.1,
            val_fraction: 0.1,
        }
    }
}

impl DsbmConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if self.communities < 2 || self.super_communities == 0 || !self.communities.is_multiple_of(self.super_communities) {
            return Err(EdenError::Parameter(
                "communities must be at least 2 and divisible by super_communities".into(),
            ));
        }
        if self.n < self.communities || self.features == 0 {
            return Err(EdenError::Parameter("need at least one node per community and one feature".into()));
        }
        if ![self.p_in, self.p_mid, self.p_out, self.forward_bias, self.reciprocity]
            .into_iter()
            .all(prob)
        {
            return Err(EdenError::Parameter("probabilities must lie in [0, 1]".into()));
        }
        if self.signal.is_nan() || self.signal < 0.0 {
            return Err(EdenError::Parameter("signal must be non-negative".into()));
        }
        if !prob(self.train_fraction) || !prob(self.val_fraction) || self.train_fraction + self.val_fraction > 1.0 {
            return Err(EdenError::Parameter(
                "split fractions must lie in [0, 1] and sum to at most 1".into(),
            ));
        }
        Ok(())
    }

    fn community_of(&self, v: usize) -> usize {
        v * self.communities / self.n
    }
}

/// Samples a graph with features, labels and a class-stratified split.
pub fn hierarchical_dsbm(cfg: &DsbmConfig, seed: u64) -> Result<DiGraph> {
    cfg.validate()?;
    let mut rng = salted_rng(seed, &[0x6473626d]);
    let per_super = cfg.communities / cfg.super_communities;
    let mut edges = Vec::new();
    for u in 0..cfg.n {
        for v in u + 1..cfg.n {
            let (cu, cv) = (cfg.community_of(u), cfg.community_of(v));
            let p = if cu == cv {
                cfg.p_in
            } else if cu / per_super == cv / per_super {
                cfg.p_mid
            } else {
                cfg.p_out
            };
            if !rng.random_bool(p) {
                continue;
            }
            let forward = if cu == cv {
                rng.random_bool(0.5)
            } else {
                rng.random_bool(cfg.forward_bias)
            };
            let (a, b) = if forward { (u, v) } else { (v, u) };
            edges.push((a, b));
            if rng.random_bool(cfg.reciprocity) {
                edges.push((b, a));
            }
        }
    }
    let means: Vec<Vec<f64>> = (0..cfg.communities)
        .map(|_| {
            (0..cfg.features)
                .map(|_| cfg.signal * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect()
        })
        .collect();
    let classes: Vec<usize> = (0..cfg.n).map(|v| cfg.community_of(v)).collect();
    let features = Array2::from_shape_fn((cfg.n, cfg.features), |(v, j)| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        means[classes[v]][j] + noise
    });
    let (mut train, mut val, mut test) = (vec![false; cfg.n], vec![false; cfg.n], vec![false; cfg.n]);
    for c in 0..cfg.communities {
        let mut members: Vec<usize> = (0..cfg.n).filter(|&v| classes[v] == c).collect();
        members.shuffle(&mut rng);
        let n_train = ((members.len() as f64 * cfg.train_fraction).round() as usize).max(1);
        let n_val = (members.len() as f64 * cfg.val_fraction).round() as usize;
        for (i, &v) in members.iter().enumerate() {
            if i < n_train {
                train[v] = true;
            } else if i < n_train + n_val {
                val[v] = true;
            } else {
                test[v] = true;
            }
        }
    }
    DiGraph::from_edges(cfg.n, &edges)?
        .with_features(features)?
        .with_labels(Labels::dense(&classes))?
        .with_masks(SplitMasks::new(train, val, test)?)
}
