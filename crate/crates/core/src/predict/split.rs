use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EdenError, Result};
use crate::graph::DiGraph;
use crate::rng::salted_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    NodeC,
    Existence,
    Direction,
    LinkC,
}

impl Task {
    pub fn is_link(self) -> bool {
        self != Task::NodeC
    }

    /// Output classes of a link task.
    pub fn link_classes(self) -> usize {
        match self {
            Task::LinkC => 3,
            _ => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "node-c" => Ok(Task::NodeC),
            "existence" => Ok(Task::Existence),
            "direction" => Ok(Task::Direction),
            "link-c" => Ok(Task::LinkC),
            other => Err(EdenError::Config(format!("unknown task {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkExample {
    pub u: usize,
    pub v: usize,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct LinkSplit {
    pub task: Task,
    pub train: Vec<LinkExample>,
    pub val: Vec<LinkExample>,
    pub test: Vec<LinkExample>,
    /// The input graph minus every edge behind a validation or test example.
    pub train_graph: DiGraph,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.15,
            test: 0.05,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(EdenError::Parameter(format!(
                "split ratios must be in [0, 1] and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    fn cut(&self, len: usize) -> (usize, usize) {
        let train = (self.train * len as f64).round() as usize;
        let val = ((self.val * len as f64).round() as usize).min(len - train.min(len));
        (train.min(len), val)
    }
}

/// `count` distinct ordered pairs `u != v` with no edge in either direction.
fn non_edges<R: Rng>(g: &DiGraph, count: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let n = g.n();
    let adjacent = |u: usize, v: usize| g.has_edge(u, v) || g.has_edge(v, u);
    let insufficient = || EdenError::Count(format!("graph has fewer than {count} non-adjacent pairs"));
    if n < 2 {
        return Err(insufficient());
    }
    if n <= 2000 {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (0..n).map(move |v| (u, v)))
            .filter(|&(u, v)| u != v && !adjacent(u, v))
            .collect();
        if all.len() < count {
            return Err(insufficient());
        }
        let (chosen, _) = all.partial_shuffle(rng, count);
        return Ok(chosen.to_vec());
    }
    let mut picked = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 100 * count + 1000 {
            return Err(insufficient());
        }
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        if u != v && !adjacent(u, v) && picked.insert((u, v)) {
            out.push((u, v));
        }
    }
    Ok(out)
}

/// Examples for a link task, split class by class with the given ratios.
pub fn make_link_split(g: &DiGraph, task: Task, ratios: SplitRatios, seed: u64) -> Result<LinkSplit> {
    ratios.validate()?;
    let mut rng = salted_rng(seed, &[0x5011]);
    let one_way: Vec<(usize, usize)> = g.edges().filter(|&(u, v)| u != v && !g.has_edge(v, u)).collect();
    let mut classes: Vec<Vec<LinkExample>> = match task {
        Task::NodeC => return Err(EdenError::Config("node classification has no link split".into())),
        Task::Existence => {
            let pos: Vec<(usize, usize)> = g.edges().filter(|&(u, v)| u != v).collect();
            if pos.is_empty() {
                return Err(EdenError::Count("graph has no edges to predict".into()));
            }
            let neg = non_edges(g, pos.len(), &mut rng)?;
            vec![
                neg.into_iter().map(|(u, v)| LinkExample { u, v, label: 0 }).collect(),
                pos.into_iter().map(|(u, v)| LinkExample { u, v, label: 1 }).collect(),
            ]
        }
        Task::Direction => {
            if one_way.len() < 2 {
                return Err(EdenError::Count("no pairs with a single orientation".into()));
            }
            let mut pairs = one_way;
            pairs.shuffle(&mut rng);
            let half = pairs.len() / 2;
            vec![
                pairs[..half].iter().map(|&(u, v)| LinkExample { u: v, v: u, label: 0 }).collect(),
                pairs[half..].iter().map(|&(u, v)| LinkExample { u, v, label: 1 }).collect(),
            ]
        }
        Task::LinkC => {
            if one_way.len() < 2 {
                return Err(EdenError::Count("no pairs with a single orientation".into()));
            }
            let mut pairs = one_way;
            pairs.shuffle(&mut rng);
            let half = pairs.len() / 2;
            let neg = non_edges(g, half.max(1), &mut rng)?;
            vec![
                pairs[half..].iter().map(|&(u, v)| LinkExample { u, v, label: 0 }).collect(),
                pairs[..half].iter().map(|&(u, v)| LinkExample { u: v, v: u, label: 1 }).collect(),
                neg.into_iter().map(|(u, v)| LinkExample { u, v, label: 2 }).collect(),
            ]
        }
    };
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for class in classes.iter_mut() {
        class.shuffle(&mut rng);
        let (a, b) = ratios.cut(class.len());
        train.extend_from_slice(&class[..a]);
        val.extend_from_slice(&class[a..a + b]);
        test.extend_from_slice(&class[a + b..]);
    }
    let mut held_out = BTreeSet::new();
    for ex in val.iter().chain(&test) {
        for (a, b) in [(ex.u, ex.v), (ex.v, ex.u)] {
            if g.has_edge(a, b) {
                held_out.insert((a, b));
            }
        }
    }
    let train_graph = g.with_edge_subset(|u, v| !held_out.contains(&(u, v)));
    for part in [&mut train, &mut val, &mut test] {
        part.sort_by_key(|e| (e.u, e.v, e.label));
    }
    Ok(LinkSplit {
        task,
        train,
        val,
        test,
        train_graph,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> DiGraph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        DiGraph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn two_cycle_has_no_direction_task() {
        let g = DiGraph::from_edges(2, &[(0, 1), (1, 0)]).unwrap();
        assert!(matches!(
            make_link_split(&g, Task::Direction, SplitRatios::default(), 0),
            Err(EdenError::Count(_))
        ));
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let r = SplitRatios {
            train: 0.5,
            val: 0.3,
            test: 0.3,
        };
        assert!(matches!(
            make_link_split(&ring(10), Task::Existence, r, 0),
            Err(EdenError::Parameter(_))
        ));
    }

    #[test]
    fn held_out_edges_leave_the_training_graph() {
        let g = ring(40);
        for task in [Task::Existence, Task::Direction, Task::LinkC] {
            let s = make_link_split(&g, task, SplitRatios::default(), 3).unwrap();
            for ex in s.val.iter().chain(&s.test) {
                assert!(!s.train_graph.has_edge(ex.u, ex.v) && !s.train_graph.has_edge(ex.v, ex.u));
            }
            let again = make_link_split(&g, task, SplitRatios::default(), 3).unwrap();
            assert_eq!(s.test, again.test);
        }
    }

    #[test]
    fn direction_labels_follow_orientation() {
        let g = ring(30);
        let s = make_link_split(&g, Task::Direction, SplitRatios::default(), 1).unwrap();
        for ex in s.train.iter().chain(&s.val).chain(&s.test) {
            assert_eq!(g.has_edge(ex.u, ex.v), ex.label == 1);
            assert!(g.has_edge(ex.u, ex.v) ^ g.has_edge(ex.v, ex.u));
        }
    }
}
