//! Python module `eden_py`: graphs, trees, entropy and the training pipeline.

use eden::config::RunConfig;
use eden::entropy::{self, Partition};
use eden::graph::{self, CycleMode, Labels, SplitMasks};
use eden::pipeline::{build_stage, ensure_features, refine_stage, run_pipeline, TaskData};
use eden::predict::Task;
use eden::rng::derive_seed;
use eden::synthetic::{hierarchical_dsbm, DsbmConfig};
use eden::tree::MergeStrategy;
use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

create_exception!(eden_py, EdenError, PyException, "Raised for every error reported by the toolkit.");

fn py_err(e: eden::EdenError) -> PyErr {
    EdenError::new_err(format!("{}: {e}", e.kind()))
}

fn json_to_py<'py>(py: Python<'py>, value: &impl ::serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| py_err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A directed graph with optional features, labels and train/val/test masks.
#[pyclass(name = "DiGraph", module = "eden_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDiGraph {
    inner: graph::DiGraph,
}

#[pymethods]
impl PyDiGraph {
    #[new]
    #[pyo3(signature = (n, edges, features=None, labels=None))]
    fn new(n: usize, edges: Vec<(usize, usize)>, features: Option<Vec<Vec<f64>>>, labels: Option<Vec<Option<usize>>>) -> PyResult<Self> {
        let mut g = graph::DiGraph::from_edges(n, &edges).map_err(py_err)?;
        if let Some(rows) = features {
            let cols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != cols) {
                return Err(EdenError::new_err("dimension: feature rows differ in length"));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            let x = Array2::from_shape_vec((flat.len() / cols.max(1), cols), flat)
                .map_err(|e| EdenError::new_err(format!("dimension: {e}")))?;
            g = g.with_features(x).map_err(py_err)?;
        }
        if let Some(l) = labels {
            let c = l.iter().flatten().max().map_or(0, |&m| m + 1);
            g = g.with_labels(Labels::new(l, c).map_err(py_err)?).map_err(py_err)?;
        }
        Ok(PyDiGraph { inner: g })
    }

    /// Loads an edge list plus optional feature, label and split files.
    #[staticmethod]
    #[pyo3(signature = (edges, features=None, labels=None, split=None))]
    fn load(edges: String, features: Option<String>, labels: Option<String>, split: Option<String>) -> PyResult<Self> {
        let sources = graph::GraphSources {
            edges: edges.into(),
            features: features.map(Into::into),
            labels: labels.map(Into::into),
            split: split.as_deref().map(graph::SplitSpec::parse).transpose().map_err(py_err)?,
            num_classes: None,
        };
        Ok(PyDiGraph {
            inner: graph::load_digraph(&sources).map_err(py_err)?.graph,
        })
    }

    /// Copy with the given node masks.
    fn with_split(&self, train: Vec<bool>, val: Vec<bool>, test: Vec<bool>) -> PyResult<Self> {
        let masks = SplitMasks::new(train, val, test).map_err(py_err)?;
        Ok(PyDiGraph {
            inner: self.inner.clone().with_masks(masks).map_err(py_err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().collect()
    }

    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features().rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn labels(&self) -> Option<Vec<Option<usize>>> {
        self.inner.labels().map(|l| l.as_slice().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("DiGraph(n={}, m={})", self.inner.n(), self.inner.m())
    }
}

/// A partition tree over the nodes of a graph.
#[pyclass(name = "PartitionTree", module = "eden_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyTree {
    inner: eden::tree::PartitionTree,
}

#[pymethods]
impl PyTree {
    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn num_leaves(&self) -> usize {
        self.inner.num_leaves()
    }

    /// Graph nodes grouped by the tree nodes at `depth`.
    fn level(&self, depth: usize) -> Vec<Vec<usize>> {
        let depths = self.inner.depths();
        depths
            .iter()
            .enumerate()
            .filter(|(_, d)| **d == Some(depth))
            .map(|(id, _)| {
                let mut leaves = self.inner.leaves_under(id);
                leaves.sort_unstable();
                leaves
            })
            .collect()
    }

    /// Checks structure and caches against `g` (sink self-loops added).
    fn validate(&self, g: &PyDiGraph) -> PyResult<()> {
        self.inner.validate(&g.inner.add_sink_loops()).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn to_dot(&self) -> String {
        self.inner.to_dot()
    }

    #[staticmethod]
    fn from_json(text: &str, g: &PyDiGraph) -> PyResult<Self> {
        Ok(PyTree {
            inner: eden::tree::PartitionTree::from_json(text, &g.inner.add_sink_loops()).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("PartitionTree(height={}, leaves={})", self.inner.height(), self.inner.num_leaves())
    }
}

/// Samples the hierarchical directed block model used by the benchmark.
#[pyfunction]
#[pyo3(signature = (seed, n=200, signal=None))]
fn synthetic_dsbm(seed: u64, n: usize, signal: Option<f64>) -> PyResult<PyDiGraph> {
    let mut cfg = DsbmConfig {
        n,
        ..DsbmConfig::default()
    };
    if let Some(s) = signal {
        cfg.signal = s;
    }
    Ok(PyDiGraph {
        inner: hierarchical_dsbm(&cfg, seed).map_err(py_err)?,
    })
}

/// One-dimensional structural entropy (sinks get self-loops first).
#[pyfunction]
fn one_dim_entropy(g: &PyDiGraph) -> PyResult<f64> {
    Ok(entropy::one_dim_entropy(&g.inner.add_sink_loops()).map_err(py_err)?.value)
}

/// Two-level entropy of the flat partition given by `assignment[v] = block`.
#[pyfunction]
fn two_dim_entropy(g: &PyDiGraph, assignment: Vec<usize>) -> PyResult<f64> {
    let p = Partition::new(assignment, g.inner.n()).map_err(py_err)?;
    Ok(entropy::two_dim_entropy(&g.inner.add_sink_loops(), &p).map_err(py_err)?.value)
}

#[pyfunction]
fn tree_entropy(g: &PyDiGraph, tree: &PyTree) -> PyResult<f64> {
    Ok(entropy::tree_entropy(&g.inner.add_sink_loops(), &tree.inner).map_err(py_err)?.value)
}

/// Builds a tree of exactly `height` levels; returns it with its entropy.
#[pyfunction]
#[pyo3(signature = (g, height=3, strategy="exhaustive", samples=None, seed=0))]
fn build_hkt(g: &PyDiGraph, height: usize, strategy: &str, samples: Option<usize>, seed: u64) -> PyResult<(PyTree, f64)> {
    let strategy = match strategy {
        "exhaustive" => MergeStrategy::Exhaustive,
        "monte-carlo" => MergeStrategy::MonteCarlo { samples, seed },
        other => return Err(EdenError::new_err(format!("config: unknown strategy {other}"))),
    };
    let settings = eden::pipeline::TreeSettings { height, strategy };
    let out = build_stage(&g.inner, &settings).map_err(py_err)?;
    Ok((PyTree { inner: out.tree }, out.entropy))
}

fn run_config(seed: u64, config: Option<&str>) -> PyResult<RunConfig> {
    let mut cfg = match config {
        Some(text) => RunConfig::from_toml(text).map_err(py_err)?,
        None => RunConfig::with_seed(seed),
    };
    cfg.seed = seed;
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Trains the critic and moves leaves; returns the new tree and the move log.
#[pyfunction]
#[pyo3(signature = (g, tree, seed, config=None))]
fn refine_hkt<'py>(
    py: Python<'py>,
    g: &PyDiGraph,
    tree: &PyTree,
    seed: u64,
    config: Option<&str>,
) -> PyResult<(PyTree, Bound<'py, PyAny>)> {
    let cfg = run_config(seed, config)?;
    let graph = ensure_features(&g.inner).map_err(py_err)?;
    let out = refine_stage(&graph, tree.inner.clone(), &cfg.pipeline()).map_err(py_err)?;
    Ok((PyTree { inner: out.tree }, json_to_py(py, &out.moves)?))
}

/// Result of [`train`].
#[pyclass(name = "TrainResult", module = "eden_py", frozen)]
pub struct PyTrainResult {
    #[pyo3(get)]
    tree: PyTree,
    report: String,
    checkpoint: Vec<u8>,
}

#[pymethods]
impl PyTrainResult {
    /// Metrics, history and refinement log as a dict.
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        py.import("json")?.call_method1("loads", (self.report.as_str(),))
    }

    /// Trained parameters in the binary checkpoint format.
    fn checkpoint<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.checkpoint)
    }
}

/// Runs build, refinement and training. `config` is optional TOML text in
/// the CLI's format; its `seed` is replaced by `seed`.
#[pyfunction]
#[pyo3(signature = (g, seed, task="node-c", config=None))]
fn train(py: Python<'_>, g: &PyDiGraph, seed: u64, task: &str, config: Option<&str>) -> PyResult<PyTrainResult> {
    let mut cfg = run_config(seed, config)?;
    cfg.data.task = Task::parse(task).map_err(py_err)?;
    let graph = g.inner.clone();
    let out = py
        .detach(move || -> eden::Result<_> {
            let data = TaskData::prepare(&graph, cfg.data.task, cfg.data.link_split, derive_seed(cfg.seed, &[0x73706c6974]))?;
            let run = run_pipeline(data.graph(), &data.targets(), &cfg.pipeline())?;
            Ok((run.tree, serde_json::to_string(&run.report)?, run.model.checkpoint().to_bytes()))
        })
        .map_err(py_err)?;
    Ok(PyTrainResult {
        tree: PyTree { inner: out.0 },
        report: out.1,
        checkpoint: out.2,
    })
}

/// Completion proportion of forward walks per length.
#[pyfunction]
#[pyo3(signature = (g, max_len, trials, cycle_free, seed))]
fn walk_interruption(g: &PyDiGraph, max_len: usize, trials: usize, cycle_free: bool, seed: u64) -> PyResult<Vec<f64>> {
    let mode = if cycle_free { CycleMode::CycleFree } else { CycleMode::WithCycles };
    Ok(graph::walk_interruption(&g.inner, max_len, trials, mode, seed)
        .map_err(py_err)?
        .completion)
}

#[pymodule]
fn eden_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EdenError", m.py().get_type::<EdenError>())?;
    m.add_class::<PyDiGraph>()?;
    m.add_class::<PyTree>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(synthetic_dsbm, m)?)?;
    m.add_function(wrap_pyfunction!(one_dim_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(two_dim_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(tree_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(build_hkt, m)?)?;
    m.add_function(wrap_pyfunction!(refine_hkt, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(walk_interruption, m)?)?;
    Ok(())
}
