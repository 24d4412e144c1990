//! Weight-free feature propagation: within a node subset (for neighbourhood
//! summaries) and over the whole digraph (the fixed part of the leaf encoder).

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{EdenError, Result};
use crate::graph::DiGraph;
use crate::nn::{Mlp, ParamStore, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PropagationMode {
    Symmetric,
    Magnetic { q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    /// Teleport weight of the within-partition iteration.
    pub tau: f64,
    /// Iterations of the within-partition propagation.
    pub steps: usize,
    pub mode: PropagationMode,
    /// Hops of the global propagation.
    pub hops: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            tau: 0.5,
            steps: 5,
            mode: PropagationMode::Magnetic { q: 0.25 },
            hops: 2,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(EdenError::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.steps == 0 {
            return Err(EdenError::Config("propagation steps must be at least 1".into()));
        }
        if let PropagationMode::Magnetic { q } = self.mode {
            if !(0.0..=0.5).contains(&q) {
                return Err(EdenError::Config(format!("q must lie in [0, 0.5], got {q}")));
            }
        }
        Ok(())
    }
}

/// Personalised-PageRank style smoothing restricted to `members`.
///
/// Runs on the undirected version of the induced subgraph; row `i` of the
/// result belongs to `members[i]`. `x0` holds one row per graph node.
pub fn partition_propagate(g: &DiGraph, members: &[usize], x0: &Array2<f64>, tau: f64, steps: usize) -> Result<Array2<f64>> {
    if members.is_empty() {
        return Err(EdenError::Partition("cannot propagate over an empty member set".into()));
    }
    if x0.nrows() != g.n() {
        return Err(EdenError::Dimension(format!(
            "feature matrix has {} rows, graph has {} nodes",
            x0.nrows(),
            g.n()
        )));
    }
    let mut pos = vec![usize::MAX; g.n()];
    for (i, &v) in members.iter().enumerate() {
        if v >= g.n() {
            return Err(EdenError::Partition(format!("member {v} is not a graph node")));
        }
        pos[v] = i;
    }
    let neigh: Vec<Vec<usize>> = members
        .iter()
        .map(|&v| {
            let mut ns: Vec<usize> = g
                .out_neighbors(v)
                .iter()
                .chain(g.in_neighbors(v))
                .map(|&u| pos[u as usize])
                .filter(|&j| j != usize::MAX && members[j] != v)
                .collect();
            ns.sort_unstable();
            ns.dedup();
            ns
        })
        .collect();
    let deg: Vec<f64> = neigh.iter().map(|ns| ns.len() as f64).collect();
    let start = x0.select(Axis(0), members);
    let mut cur = start.clone();
    for _ in 0..steps {
        let mut next = start.clone();
        for (i, ns) in neigh.iter().enumerate() {
            if ns.is_empty() {
                continue;
            }
            let mut row = next.row_mut(i);
            row *= tau;
            for &j in ns {
                row.scaled_add((1.0 - tau) / (deg[i] * deg[j]).sqrt(), &cur.row(j));
            }
        }
        cur = next;
    }
    Ok(cur)
}

/// Arithmetic mean of the rows.
pub fn aggregate_neighborhood(rows: &Array2<f64>) -> Result<Array1<f64>> {
    rows.mean_axis(Axis(0))
        .ok_or_else(|| EdenError::Contract("cannot aggregate zero rows".into()))
}

/// Sparse complex matrix stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexCsr {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexCsr {
    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn entry(&self, i: usize, j: usize) -> (f64, f64) {
        let range = self.offsets[i]..self.offsets[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(k) => (self.re[range.start + k], self.im[range.start + k]),
            Err(_) => (0.0, 0.0),
        }
    }

    /// Returns `(re, im)` of `self * (xr + i xi)`.
    pub fn apply(&self, xr: &Array2<f64>, xi: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut yr = Array2::zeros(xr.dim());
        let mut yi = Array2::zeros(xr.dim());
        for i in 0..self.n() {
            for k in self.offsets[i]..self.offsets[i + 1] {
                let (j, a, b) = (self.cols[k], self.re[k], self.im[k]);
                let (rj, ij) = (xr.row(j), xi.row(j));
                yr.row_mut(i).scaled_add(a, &rj);
                yr.row_mut(i).scaled_add(-b, &ij);
                yi.row_mut(i).scaled_add(a, &ij);
                yi.row_mut(i).scaled_add(b, &rj);
            }
        }
        (yr, yi)
    }
}

/// `A_s = (A + Aᵀ)/2 + I` with phases `exp(i 2πq (A - Aᵀ))`, optionally
/// normalised by the degrees of `A_s` on both sides. `q = 0` gives the plain
/// symmetric operator.
pub fn magnetic_operator(g: &DiGraph, q: f64, normalize: bool) -> ComplexCsr {
    let n = g.n();
    let mut offsets = Vec::with_capacity(n + 1);
    let (mut cols, mut re, mut im) = (Vec::new(), Vec::new(), Vec::new());
    offsets.push(0);
    let mut degree = vec![0.0; n];
    for i in 0..n {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for &j in g.out_neighbors(i) {
            row.push((j as usize, 1.0));
        }
        for &j in g.in_neighbors(i) {
            row.push((j as usize, -1.0));
        }
        row.sort_by_key(|e| e.0);
        let mut k = 0;
        let mut seen_diag = false;
        while k < row.len() {
            let j = row[k].0;
            let (mut a_ij, mut a_ji) = (0.0, 0.0);
            while k < row.len() && row[k].0 == j {
                if row[k].1 > 0.0 {
                    a_ij = 1.0;
                } else {
                    a_ji = 1.0;
                }
                k += 1;
            }
            if j == i {
                seen_diag = true;
                cols.push(i);
                re.push(1.0);
                im.push(0.0);
                continue;
            }
            if !seen_diag && j > i {
                seen_diag = true;
                cols.push(i);
                re.push(1.0);
                im.push(0.0);
            }
            let weight = 0.5 * (a_ij + a_ji);
            let theta = 2.0 * PI * q * (a_ij - a_ji);
            cols.push(j);
            re.push(weight * theta.cos());
            im.push(weight * theta.sin());
        }
        if !seen_diag {
            cols.push(i);
            re.push(1.0);
            im.push(0.0);
        }
        offsets.push(cols.len());
    }
    for i in 0..n {
        for k in offsets[i]..offsets[i + 1] {
            degree[i] += re[k].hypot(im[k]);
        }
    }
    if normalize {
        for i in 0..n {
            for k in offsets[i]..offsets[i + 1] {
                let s = 1.0 / (degree[i] * degree[cols[k]]).sqrt();
                re[k] *= s;
                im[k] *= s;
            }
        }
    }
    ComplexCsr { offsets, cols, re, im }
}

/// Precomputes `hops` rounds of global propagation. Symmetric mode returns
/// `n × f`; magnetic mode returns the real and imaginary parts side by side.
pub fn propagate_global(g: &DiGraph, x: &Array2<f64>, mode: PropagationMode, hops: usize) -> Result<Array2<f64>> {
    if x.nrows() != g.n() {
        return Err(EdenError::Dimension(format!(
            "feature matrix has {} rows, graph has {} nodes",
            x.nrows(),
            g.n()
        )));
    }
    let q = match mode {
        PropagationMode::Symmetric => 0.0,
        PropagationMode::Magnetic { q } => q,
    };
    let op = magnetic_operator(g, q, true);
    let mut xr = x.clone();
    let mut xi = Array2::zeros(x.dim());
    for _ in 0..hops {
        (xr, xi) = op.apply(&xr, &xi);
    }
    Ok(match mode {
        PropagationMode::Symmetric => xr,
        PropagationMode::Magnetic { .. } => ndarray::concatenate![Axis(1), xr, xi],
    })
}

/// Leaf logits: global propagation followed by the trainable linear map.
pub fn digraph_encode(g: &DiGraph, x: &Array2<f64>, cfg: &PropagationConfig, linear: &Mlp, store: &ParamStore) -> Result<Array2<f64>> {
    let z = propagate_global(g, x, cfg.mode, cfg.hops)?;
    let mut tape = Tape::new();
    let zv = tape.input(z);
    let out = linear.forward(&mut tape, store, zv)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn singleton_keeps_its_row() {
        let g = DiGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let out = partition_propagate(&g, &[1], &x, 0.5, 5).unwrap();
        assert_eq!(out, array![[3.0, 4.0]]);
    }

    #[test]
    fn linked_pair_with_equal_rows_is_fixed() {
        let g = DiGraph::from_edges(2, &[(0, 1), (1, 0)]).unwrap();
        let x = array![[0.3, -1.0], [0.3, -1.0]];
        for steps in [1, 2] {
            let out = partition_propagate(&g, &[0, 1], &x, 0.5, steps).unwrap();
            assert!((&out - &x).iter().all(|d| d.abs() < 1e-15));
        }
    }

    #[test]
    fn full_teleport_returns_input() {
        let g = DiGraph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let x = array![[1.0], [2.0], [7.0]];
        assert_eq!(
            partition_propagate(&g, &[2, 0, 1], &x, 1.0, 3).unwrap(),
            array![[7.0], [1.0], [2.0]]
        );
    }

    #[test]
    fn empty_members_rejected() {
        let g = DiGraph::from_edges(1, &[]).unwrap();
        assert!(partition_propagate(&g, &[], &Array2::zeros((1, 1)), 0.5, 1).is_err());
    }

    #[test]
    fn mean_aggregation() {
        let rows = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert_eq!(aggregate_neighborhood(&rows).unwrap(), array![0.5, 0.5, 0.0]);
    }

    #[test]
    fn two_node_magnetic_operator() {
        let g = DiGraph::from_edges(2, &[(0, 1)]).unwrap();
        let op = magnetic_operator(&g, 0.25, true);
        let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() < 1e-15 && (a.1 - b.1).abs() < 1e-15;
        assert!(close(op.entry(0, 0), (2.0 / 3.0, 0.0)));
        assert!(close(op.entry(0, 1), (0.0, 1.0 / 3.0)));
        assert!(close(op.entry(1, 0), (0.0, -1.0 / 3.0)));
        let x = array![[1.0], [2.0]];
        let z = propagate_global(&g, &x, PropagationMode::Magnetic { q: 0.25 }, 1).unwrap();
        let expect = array![[2.0 / 3.0, 2.0 / 3.0], [4.0 / 3.0, -1.0 / 3.0]];
        assert!((&z - &expect).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn zero_phase_matches_symmetric() {
        let g = DiGraph::from_edges(4, &[(0, 1), (1, 2), (2, 0), (3, 1)]).unwrap();
        let x = array![[1.0, 0.5], [0.0, 2.0], [3.0, -1.0], [1.0, 1.0]];
        let sym = propagate_global(&g, &x, PropagationMode::Symmetric, 2).unwrap();
        let mag = propagate_global(&g, &x, PropagationMode::Magnetic { q: 0.0 }, 2).unwrap();
        assert_eq!(mag.slice(ndarray::s![.., ..2]), sym);
        assert!(mag.slice(ndarray::s![.., 2..]).iter().all(|&v| v == 0.0));
        assert_eq!(propagate_global(&g, &x, PropagationMode::Symmetric, 0).unwrap(), x);
    }
}
