//! Forward-only random-walk interruption statistics.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DiGraph;
use crate::error::{EdenError, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleMode {
    /// Walks may revisit nodes.
    WithCycles,
    /// A step may not land on a node already on the current path.
    CycleFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkStats {
    pub max_len: usize,
    /// `completion[l]` is the fraction of walks that made at least `l` steps.
    pub completion: Vec<f64>,
    pub cycle_mode: CycleMode,
}

/// Runs `trials_per_node` forward walks from every node and records how many
/// survive each length. A walk stops when its current node has no admissible
/// successor. Node `v` draws from ChaCha stream `v` of `seed`, so the result
/// is independent of thread count. Every trial consumes `max_len` draws
/// whatever its length, so trial `k` sees the same numbers in both modes.
pub fn walk_interruption(g: &DiGraph, max_len: usize, trials_per_node: usize, cycle_mode: CycleMode, seed: u64) -> Result<WalkStats> {
    if max_len == 0 {
        return Err(EdenError::Parameter("max_len must be at least 1".into()));
    }
    if trials_per_node == 0 || g.n() == 0 {
        return Err(EdenError::Parameter("walk analysis needs at least one node and one trial".into()));
    }
    let per_node: Vec<Vec<u64>> = (0..g.n())
        .into_par_iter()
        .map(|start| {
            let mut rng = stream_rng(seed, start as u64);
            let mut survived = vec![0u64; max_len + 1];
            let mut path = Vec::with_capacity(max_len + 1);
            let mut admissible = Vec::new();
            let mut draws = vec![0.0f64; max_len];
            for _ in 0..trials_per_node {
                draws.iter_mut().for_each(|d| *d = rng.random());
                path.clear();
                path.push(start as u32);
                let mut steps = 0;
                while steps < max_len {
                    let cur = *path.last().unwrap() as usize;
                    let succ = g.out_neighbors(cur);
                    let next = match cycle_mode {
                        CycleMode::WithCycles => {
                            if succ.is_empty() {
                                break;
                            }
                            let u = draws[steps];
                            succ[((u * succ.len() as f64) as usize).min(succ.len() - 1)]
                        }
                        CycleMode::CycleFree => {
                            admissible.clear();
                            admissible.extend(succ.iter().filter(|s| !path.contains(s)));
                            if admissible.is_empty() {
                                break;
                            }
                            let u = draws[steps];
                            admissible[((u * admissible.len() as f64) as usize).min(admissible.len() - 1)]
                        }
                    };
                    path.push(next);
                    steps += 1;
                }
                for s in survived.iter_mut().take(steps + 1) {
                    *s += 1;
                }
            }
            survived
        })
        .collect();
    let total = (g.n() * trials_per_node) as f64;
    let completion = (0..=max_len)
        .map(|l| per_node.iter().map(|s| s[l]).sum::<u64>() as f64 / total)
        .collect();
    Ok(WalkStats {
        max_len,
        completion,
        cycle_mode,
    })
}
