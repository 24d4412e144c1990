//! Text and binary loaders.
//!
//! Edge lists are `src dst` pairs separated by whitespace, one per line, with
//! `#` starting a comment. Feature and label files are CSV (comma or
//! whitespace separated, optional header line) or, for matrices, the binary
//! `EDN1` layout: the 4-byte magic, `u64` rows, `u64` cols, then `f64`
//! values in row-major order, all little-endian.
//!
//! When the edge file uses sparse ids they are compacted in increasing order;
//! feature rows and positional labels follow the compacted order.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DiGraph, EdgeReport, Labels, SplitMasks};
use crate::error::{EdenError, Result};
use crate::rng::salted_rng;

const MATRIX_MAGIC: &[u8; 4] = b"EDN1";

/// How nodes are assigned to train/val/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitSpec {
    /// Per-node file: `node,split` lines or one positional `split` per line.
    File(PathBuf),
    /// Random fractions over the labeled nodes.
    Fractions { train: f64, val: f64, test: f64, seed: u64 },
}

impl SplitSpec {
    /// Parses `frac:TRAIN,VAL,TEST@SEED` or a file path.
    pub fn parse(spec: &str) -> Result<Self> {
        let Some(rest) = spec.strip_prefix("frac:") else {
            return Ok(SplitSpec::File(PathBuf::from(spec)));
        };
        let bad = || EdenError::Parameter(format!("malformed split spec {spec:?}"));
        let (fracs, seed) = rest.split_once('@').ok_or_else(bad)?;
        let seed = seed.trim().parse().map_err(|_| bad())?;
        let parts: Vec<f64> = fracs
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let [train, val, test] = parts[..] else {
            return Err(bad());
        };
        if parts.iter().any(|&f| !(0.0..=1.0).contains(&f)) || train + val + test > 1.0 + 1e-9 {
            return Err(EdenError::Parameter(format!(
                "split fractions in {spec:?} must be in [0, 1] and sum to at most 1"
            )));
        }
        Ok(SplitSpec::Fractions { train, val, test, seed })
    }
}

/// Paths for [`load_digraph`].
#[derive(Debug, Clone, Default)]
pub struct GraphSources {
    pub edges: PathBuf,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub split: Option<SplitSpec>,
    /// Class count; inferred as `max label + 1` when absent.
    pub num_classes: Option<usize>,
}

/// A loaded graph plus the bookkeeping of the load.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: DiGraph,
    /// `id_map[compact] = original id`.
    pub id_map: Vec<u64>,
    pub report: EdgeReport,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| EdenError::file(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_edges(path: &Path, text: &str) -> Result<Vec<(u64, u64)>> {
    data_lines(text)
        .map(|(line, content)| {
            let toks: Vec<&str> = content.split_whitespace().collect();
            let err = |msg: String| EdenError::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            };
            if toks.len() != 2 {
                return Err(err(format!("expected `src dst`, found {content:?}")));
            }
            let u = toks[0].parse().map_err(|_| err(format!("bad node id {:?}", toks[0])))?;
            let v = toks[1].parse().map_err(|_| err(format!("bad node id {:?}", toks[1])))?;
            Ok((u, v))
        })
        .collect()
}

/// Loads and validates a graph with optional features, labels and split.
pub fn load_digraph(sources: &GraphSources) -> Result<LoadedGraph> {
    let raw = parse_edges(&sources.edges, &read_text(&sources.edges)?)?;
    let mut ids: Vec<u64> = raw.iter().flat_map(|&(u, v)| [u, v]).collect();
    ids.sort_unstable();
    ids.dedup();
    let dense = ids.last().is_none_or(|&max| max + 1 == ids.len() as u64);
    let index: HashMap<u64, usize> = if dense {
        HashMap::new()
    } else {
        ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    };
    let compact = |id: u64| if dense { id as usize } else { index[&id] };
    let edges: Vec<(usize, usize)> = raw.iter().map(|&(u, v)| (compact(u), compact(v))).collect();
    let n = ids.len();
    let (mut graph, report) = DiGraph::from_edges_with_report(n, &edges)?;
    if report.duplicates > 0 {
        log::warn!("{}: dropped {} duplicate edges", sources.edges.display(), report.duplicates);
    }
    if report.self_loops_dropped > 0 {
        log::warn!("{}: dropped {} self-loops", sources.edges.display(), report.self_loops_dropped);
    }

    if let Some(path) = &sources.features {
        graph = graph.with_features(read_matrix_file(path)?)?;
    }
    let lookup = |id: u64| -> Option<usize> {
        if dense {
            ((id as usize) < n).then_some(id as usize)
        } else {
            index.get(&id).copied()
        }
    };
    if let Some(path) = &sources.labels {
        let labels = read_labels(path, n, sources.num_classes, &lookup)?;
        graph = graph.with_labels(labels)?;
    }
    if let Some(spec) = &sources.split {
        let masks = match spec {
            SplitSpec::File(path) => read_split_file(path, n, &lookup)?,
            SplitSpec::Fractions { train, val, test, seed } => fractional_masks(&graph, *train, *val, *test, *seed)?,
        };
        graph = graph.with_masks(masks)?;
    }
    let id_map = if dense { (0..n as u64).collect() } else { ids };
    Ok(LoadedGraph { graph, id_map, report })
}

fn read_labels(path: &Path, n: usize, num_classes: Option<usize>, lookup: &dyn Fn(u64) -> Option<usize>) -> Result<Labels> {
    let text = read_text(path)?;
    let mut classes = vec![None; n];
    let mut positional = 0usize;
    for (k, (line, content)) in data_lines(&text).enumerate() {
        let f = fields(content);
        let err = |msg: String| EdenError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if k == 0 && f.iter().any(|t| t.parse::<f64>().is_err()) {
            continue; // header
        }
        let (node, label) = match f[..] {
            [label] => {
                positional += 1;
                if positional > n {
                    return Err(EdenError::Dimension(format!(
                        "{}: more label rows than the {n} nodes",
                        path.display()
                    )));
                }
                (positional - 1, label)
            }
            [node, label] => {
                let id: u64 = node.parse().map_err(|_| err(format!("bad node id {node:?}")))?;
                let v = lookup(id).ok_or_else(|| EdenError::Value(format!("{}: label for unknown node {id}", path.display())))?;
                (v, label)
            }
            _ => return Err(err(format!("expected `label` or `node,label`, found {content:?}"))),
        };
        let value: i64 = label.parse().map_err(|_| err(format!("label {label:?} is not an integer")))?;
        if value < 0 {
            return Err(EdenError::Value(format!("{}: line {line}: negative label {value}", path.display())));
        }
        classes[node] = Some(value as usize);
    }
    let c = num_classes.unwrap_or_else(|| classes.iter().flatten().max().map_or(0, |&m| m + 1));
    Labels::new(classes, c)
}

fn read_split_file(path: &Path, n: usize, lookup: &dyn Fn(u64) -> Option<usize>) -> Result<SplitMasks> {
    let text = read_text(path)?;
    let (mut train, mut val, mut test) = (vec![false; n], vec![false; n], vec![false; n]);
    let mut positional = 0usize;
    for (k, (line, content)) in data_lines(&text).enumerate() {
        let f = fields(content);
        let err = |msg: String| EdenError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let is_split = |s: &str| matches!(s, "train" | "val" | "test");
        if k == 0 && !f.last().is_some_and(|s| is_split(s)) {
            continue; // header
        }
        let (v, which) = match f[..] {
            [which] => {
                positional += 1;
                (positional - 1, which)
            }
            [node, which] => {
                let id: u64 = node.parse().map_err(|_| err(format!("bad node id {node:?}")))?;
                let v = lookup(id).ok_or_else(|| err(format!("unknown node {id}")))?;
                (v, which)
            }
            _ => return Err(err(format!("expected `node,split`, found {content:?}"))),
        };
        if v >= n {
            return Err(EdenError::Dimension(format!(
                "{}: more split rows than the {n} nodes",
                path.display()
            )));
        }
        match which {
            "train" => train[v] = true,
            "val" => val[v] = true,
            "test" => test[v] = true,
            other => return Err(err(format!("unknown split {other:?}"))),
        }
    }
    SplitMasks::new(train, val, test)
}

/// Random node split over the labeled nodes (all nodes when unlabeled).
pub fn fractional_masks(g: &DiGraph, train: f64, val: f64, test: f64, seed: u64) -> Result<SplitMasks> {
    if train + val + test > 1.0 + 1e-9 {
        return Err(EdenError::Parameter("split fractions sum above 1".into()));
    }
    let n = g.n();
    let mut pool: Vec<usize> = match g.labels() {
        Some(l) => (0..n).filter(|&v| l.get(v).is_some()).collect(),
        None => (0..n).collect(),
    };
    pool.shuffle(&mut salted_rng(seed, &[0x5911]));
    let total = pool.len() as f64;
    let n_train = (train * total).round() as usize;
    let n_val = ((val * total).round() as usize).min(pool.len() - n_train);
    let n_test = ((test * total).round() as usize).min(pool.len() - n_train - n_val);
    let (mut tr, mut va, mut te) = (vec![false; n], vec![false; n], vec![false; n]);
    for (i, &v) in pool.iter().enumerate() {
        if i < n_train {
            tr[v] = true;
        } else if i < n_train + n_val {
            va[v] = true;
        } else if i < n_train + n_val + n_test {
            te[v] = true;
        }
    }
    SplitMasks::new(tr, va, te)
}

/// Reads a matrix from the binary `EDN1` layout or from CSV text.
pub fn read_matrix_file(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| EdenError::file(path, e))?;
    if bytes.starts_with(MATRIX_MAGIC) {
        return read_matrix(&mut &bytes[..]);
    }
    let text = String::from_utf8(bytes).map_err(|_| EdenError::Value(format!("{}: neither EDN1 nor UTF-8 text", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, (line, content)) in data_lines(&text).enumerate() {
        let f = fields(content);
        let parsed: std::result::Result<Vec<f64>, _> = f.iter().map(|t| t.parse::<f64>()).collect();
        match parsed {
            Ok(row) => {
                if let Some(first) = rows.first() {
                    if first.len() != row.len() {
                        return Err(EdenError::Parse {
                            path: path.to_path_buf(),
                            line,
                            msg: format!("expected {} columns, found {}", first.len(), row.len()),
                        });
                    }
                }
                rows.push(row);
            }
            Err(_) if k == 0 => continue, // header
            Err(e) => {
                return Err(EdenError::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: e.to_string(),
                })
            }
        }
    }
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| EdenError::Dimension(e.to_string()))
}

pub fn read_matrix(reader: &mut impl Read) -> Result<Array2<f64>> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(EdenError::Value("missing EDN1 magic".into()));
    }
    let mut word = [0u8; 8];
    reader.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    reader.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| EdenError::Dimension("matrix size overflows".into()))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        reader.read_exact(&mut word)?;
        data.push(f64::from_le_bytes(word));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| EdenError::Dimension(e.to_string()))
}

pub fn write_matrix(writer: &mut impl Write, m: &Array2<f64>) -> Result<()> {
    writer.write_all(MATRIX_MAGIC)?;
    writer.write_all(&(m.nrows() as u64).to_le_bytes())?;
    writer.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for x in m.iter() {
        writer.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_matrix_file(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + 8 * m.len());
    write_matrix(&mut buf, m)?;
    fs::write(path, buf).map_err(|e| EdenError::file(path, e))
}
