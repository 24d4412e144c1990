//! Directed graphs with mirrored CSR adjacency.

mod io;
mod walk;

pub use io::{load_digraph, read_matrix, read_matrix_file, write_matrix, write_matrix_file, GraphSources, LoadedGraph, SplitSpec};
pub use walk::{walk_interruption, CycleMode, WalkStats};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{EdenError, Result};

/// Per-node class labels; `None` marks an unlabeled node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    classes: Vec<Option<usize>>,
    num_classes: usize,
}

impl Labels {
    pub fn new(classes: Vec<Option<usize>>, num_classes: usize) -> Result<Self> {
        if let Some((v, c)) = classes
            .iter()
            .enumerate()
            .find_map(|(v, c)| c.filter(|&c| c >= num_classes).map(|c| (v, c)))
        {
            return Err(EdenError::Value(format!("label {c} of node {v} is outside [0, {num_classes})")));
        }
        Ok(Labels { classes, num_classes })
    }

    /// Builds labels for every node, inferring the class count as `max + 1`.
    pub fn dense(classes: &[usize]) -> Self {
        let num_classes = classes.iter().max().map_or(0, |&c| c + 1);
        Labels {
            classes: classes.iter().map(|&c| Some(c)).collect(),
            num_classes,
        }
    }

    pub fn get(&self, v: usize) -> Option<usize> {
        self.classes.get(v).copied().flatten()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.classes
    }
}

/// Train/validation/test node masks. Pairwise disjoint by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn new(train: Vec<bool>, val: Vec<bool>, test: Vec<bool>) -> Result<Self> {
        if train.len() != val.len() || train.len() != test.len() {
            return Err(EdenError::Dimension("split masks have different lengths".into()));
        }
        for v in 0..train.len() {
            let hits = train[v] as u8 + val[v] as u8 + test[v] as u8;
            if hits > 1 {
                return Err(EdenError::Value(format!("node {v} is assigned to more than one split")));
            }
        }
        Ok(SplitMasks { train, val, test })
    }

    pub fn indices(mask: &[bool]) -> Vec<usize> {
        mask.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
    }
}

/// In- and out-degree of every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeProfile {
    pub d_in: Vec<u64>,
    pub d_out: Vec<u64>,
}

/// Counts reported while normalizing an edge list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub duplicates: usize,
    pub self_loops_dropped: usize,
}

/// Directed graph over dense ids `0..n`.
///
/// Out- and in-adjacency are stored as two CSR arrays mirroring each other;
/// neighbor lists are sorted and free of duplicates. Self-loops only appear
/// through [`DiGraph::add_sink_loops`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiGraph {
    n: usize,
    out_offsets: Vec<usize>,
    out_targets: Vec<u32>,
    in_offsets: Vec<usize>,
    in_sources: Vec<u32>,
    features: Array2<f64>,
    labels: Option<Labels>,
    masks: Option<SplitMasks>,
}

impl DiGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Ok(Self::from_edges_with_report(n, edges)?.0)
    }

    /// Builds the graph, dropping duplicate edges and self-loops.
    pub fn from_edges_with_report(n: usize, edges: &[(usize, usize)]) -> Result<(Self, EdgeReport)> {
        if n > u32::MAX as usize {
            return Err(EdenError::Value(format!("{n} nodes exceed the u32 id range")));
        }
        let mut report = EdgeReport::default();
        let mut list = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(EdenError::Value(format!("edge ({u}, {v}) references a node outside [0, {n})")));
            }
            if u == v {
                report.self_loops_dropped += 1;
            } else {
                list.push((u as u32, v as u32));
            }
        }
        list.sort_unstable();
        let before = list.len();
        list.dedup();
        report.duplicates = before - list.len();
        Ok((Self::from_sorted_unique(n, &list), report))
    }

    fn from_sorted_unique(n: usize, edges: &[(u32, u32)]) -> Self {
        let mut out_offsets = vec![0usize; n + 1];
        let mut in_offsets = vec![0usize; n + 1];
        for &(u, v) in edges {
            out_offsets[u as usize + 1] += 1;
            in_offsets[v as usize + 1] += 1;
        }
        for i in 0..n {
            out_offsets[i + 1] += out_offsets[i];
            in_offsets[i + 1] += in_offsets[i];
        }
        let out_targets = edges.iter().map(|&(_, v)| v).collect();
        let mut in_sources = vec![0u32; edges.len()];
        let mut cursor = in_offsets.clone();
        // edges are sorted by source, so each in-list comes out sorted too
        for &(u, v) in edges {
            in_sources[cursor[v as usize]] = u;
            cursor[v as usize] += 1;
        }
        DiGraph {
            n,
            out_offsets,
            out_targets,
            in_offsets,
            in_sources,
            features: Array2::zeros((n, 0)),
            labels: None,
            masks: None,
        }
    }

    pub fn with_features(mut self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.n {
            return Err(EdenError::Dimension(format!(
                "feature matrix has {} rows, graph has {} nodes",
                features.nrows(),
                self.n
            )));
        }
        self.features = features;
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Labels) -> Result<Self> {
        if labels.len() != self.n {
            return Err(EdenError::Dimension(format!("{} labels for {} nodes", labels.len(), self.n)));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_masks(mut self, masks: SplitMasks) -> Result<Self> {
        if masks.train.len() != self.n {
            return Err(EdenError::Dimension(format!(
                "split masks cover {} nodes, graph has {}",
                masks.train.len(),
                self.n
            )));
        }
        self.masks = Some(masks);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.out_targets.len()
    }

    pub fn out_neighbors(&self, v: usize) -> &[u32] {
        &self.out_targets[self.out_offsets[v]..self.out_offsets[v + 1]]
    }

    pub fn in_neighbors(&self, v: usize) -> &[u32] {
        &self.in_sources[self.in_offsets[v]..self.in_offsets[v + 1]]
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.out_offsets[v + 1] - self.out_offsets[v]
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_offsets[v + 1] - self.in_offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.out_neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    pub fn has_self_loop(&self, v: usize) -> bool {
        self.has_edge(v, v)
    }

    /// All edges in (source, target) lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |u| self.out_neighbors(u).iter().map(move |&v| (u, v as usize)))
    }

    pub fn degree_profile(&self) -> DegreeProfile {
        DegreeProfile {
            d_in: (0..self.n).map(|v| self.in_degree(v) as u64).collect(),
            d_out: (0..self.n).map(|v| self.out_degree(v) as u64).collect(),
        }
    }

    pub fn sinks(&self) -> Vec<usize> {
        (0..self.n).filter(|&v| self.out_degree(v) == 0).collect()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn masks(&self) -> Option<&SplitMasks> {
        self.masks.as_ref()
    }

    /// Gives every sink a self-loop. Graphs without sinks come back unchanged.
    pub fn add_sink_loops(&self) -> DiGraph {
        let sinks = self.sinks();
        if sinks.is_empty() {
            return self.clone();
        }
        let mut edges: Vec<(u32, u32)> = self
            .edges()
            .map(|(u, v)| (u as u32, v as u32))
            .chain(sinks.iter().map(|&s| (s as u32, s as u32)))
            .collect();
        edges.sort_unstable();
        let mut g = Self::from_sorted_unique(self.n, &edges);
        g.features = self.features.clone();
        g.labels = self.labels.clone();
        g.masks = self.masks.clone();
        g
    }

    /// Same nodes and attributes with a different edge set.
    pub fn with_edge_subset(&self, keep: impl Fn(usize, usize) -> bool) -> DiGraph {
        let edges: Vec<(u32, u32)> = self
            .edges()
            .filter(|&(u, v)| keep(u, v))
            .map(|(u, v)| (u as u32, v as u32))
            .collect();
        let mut g = Self::from_sorted_unique(self.n, &edges);
        g.features = self.features.clone();
        g.labels = self.labels.clone();
        g.masks = self.masks.clone();
        g
    }

    /// Undirected neighbor lists (u ~ v iff u→v or v→u), without self-loops.
    pub fn undirected(&self) -> UndirectedAdjacency {
        let lists = (0..self.n).map(|v| {
            let mut nb: Vec<u32> = self
                .out_neighbors(v)
                .iter()
                .chain(self.in_neighbors(v))
                .copied()
                .filter(|&u| u as usize != v)
                .collect();
            nb.sort_unstable();
            nb.dedup();
            nb
        });
        UndirectedAdjacency::from_lists(lists)
    }

    /// Rebuilds the in-adjacency from the out-adjacency; used to check the mirror invariant.
    pub fn rebuilt_in_adjacency(&self) -> (Vec<usize>, Vec<u32>) {
        let edges: Vec<(u32, u32)> = self.edges().map(|(u, v)| (u as u32, v as u32)).collect();
        let g = Self::from_sorted_unique(self.n, &edges);
        (g.in_offsets, g.in_sources)
    }

    pub fn in_adjacency(&self) -> (&[usize], &[u32]) {
        (&self.in_offsets, &self.in_sources)
    }
}

/// Symmetric neighbor lists in CSR form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedAdjacency {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl UndirectedAdjacency {
    /// Lists must be sorted, deduplicated and symmetric.
    pub fn from_lists(lists: impl IntoIterator<Item = Vec<u32>>) -> Self {
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        for list in lists {
            targets.extend_from_slice(&list);
            offsets.push(targets.len());
        }
        UndirectedAdjacency { offsets, targets }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }
}
