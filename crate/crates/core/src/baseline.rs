//! Linear softmax classifier on raw node features.

use serde::{Deserialize, Serialize};

use crate::error::{EdenError, Result};
use crate::graph::{DiGraph, SplitMasks};
use crate::nn::{Activation, Adam, Mlp, ParamStore, Tape};
use crate::predict::{accuracy, Metrics, SplitMetrics};
use crate::rng::salted_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            lr: 0.01,
            epochs: 500,
            patience: 50,
        }
    }
}

struct Split {
    nodes: Vec<usize>,
    labels: Vec<usize>,
}

fn split(g: &DiGraph, mask: &[bool]) -> Split {
    let labels = g.labels().expect("checked by caller");
    let nodes: Vec<usize> = SplitMasks::indices(mask).into_iter().filter(|&v| labels.get(v).is_some()).collect();
    let labels = nodes.iter().map(|&v| labels.get(v).unwrap()).collect();
    Split { nodes, labels }
}

/// Trains `softmax(XW + b)` with early stopping on validation accuracy and
/// reports accuracy on every split for the best parameters.
pub fn linear_baseline(g: &DiGraph, cfg: &BaselineConfig, seed: u64) -> Result<SplitMetrics> {
    let labels = g
        .labels()
        .ok_or_else(|| EdenError::Config("the baseline needs node labels".into()))?;
    let masks = g
        .masks()
        .ok_or_else(|| EdenError::Config("the baseline needs split masks".into()))?;
    let x = g.features();
    let (train, val, test) = (split(g, &masks.train), split(g, &masks.val), split(g, &masks.test));
    if train.nodes.is_empty() {
        return Err(EdenError::Count("no labelled training nodes".into()));
    }
    let mut store = ParamStore::new();
    let mut rng = salted_rng(seed, &[0x6c696e]);
    let net = Mlp::new(
        &mut store,
        &mut rng,
        "linear",
        &[x.ncols(), labels.num_classes()],
        Activation::Identity,
        Activation::Identity,
    )?;

    let run = |store: &ParamStore, s: &Split| -> Result<(f64, f64, Option<Vec<usize>>)> {
        if s.nodes.is_empty() {
            return Ok((0.0, 0.0, None));
        }
        let mut tape = Tape::new();
        let input = tape.input(x.select(ndarray::Axis(0), &s.nodes));
        let logits = net.forward(&mut tape, store, input)?;
        let loss = tape.cross_entropy(logits, &s.labels)?;
        let pred = tape
            .value(logits)
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0
            })
            .collect::<Vec<_>>();
        Ok((accuracy(&pred, &s.labels)?, tape.scalar(loss), Some(pred)))
    };

    let mut adam = Adam::new(cfg.lr);
    let (acc, loss, _) = run(&store, &val)?;
    let mut best = (acc, loss, store.clone());
    let mut since = 0;
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let input = tape.input(x.select(ndarray::Axis(0), &train.nodes));
        let logits = net.forward(&mut tape, &store, input)?;
        let loss = tape.cross_entropy(logits, &train.labels)?;
        let grads = tape.backward(loss, &store)?;
        adam.step(&mut store, &grads)?;
        let (acc, loss, _) = run(&store, &val)?;
        if acc > best.0 || (acc == best.0 && loss < best.1) {
            best = (acc, loss, store.clone());
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    let store = best.2;
    let metric = |s: &Split| -> Result<Metrics> {
        let (acc, _, pred) = run(&store, s)?;
        Ok(Metrics {
            acc: pred.map(|_| acc),
            ..Metrics::default()
        })
    };
    Ok(SplitMetrics {
        train: metric(&train)?,
        val: metric(&val)?,
        test: metric(&test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{hierarchical_dsbm, DsbmConfig};

    #[test]
    fn separable_features_are_learned() {
        let cfg = DsbmConfig {
            signal: 3.0,
            ..DsbmConfig::default()
        };
        let g = hierarchical_dsbm(&cfg, 1).unwrap();
        let m = linear_baseline(&g, &BaselineConfig::default(), 1).unwrap();
        assert!(m.test.acc.unwrap() > 0.9);
    }

    #[test]
    fn needs_labels() {
        let g = DiGraph::from_edges(2, &[(0, 1)]).unwrap();
        assert!(matches!(
            linear_baseline(&g, &BaselineConfig::default(), 0),
            Err(EdenError::Config(_))
        ));
    }
}
