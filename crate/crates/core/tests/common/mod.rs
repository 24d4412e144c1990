//! Independent reference implementations shared by the integration tests and
//! the acceptance harness. Everything here recomputes quantities from the raw
//! edge list and never reads the library's cached volumes or crossing counts.

#![allow(dead_code)]

use eden::graph::DiGraph;
use eden::tree::{PartitionTree, TreeNodeId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Erdos-Renyi style digraph with edge probability `p`; sinks get self-loops
/// when `loops` is set so that every node has out-degree at least one.
pub fn random_digraph(rng: &mut ChaCha8Rng, n: usize, p: f64, loops: bool) -> DiGraph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let g = DiGraph::from_edges(n, &edges).unwrap();
    if loops {
        g.add_sink_loops()
    } else {
        g
    }
}

/// Random digraph with exactly `m` distinct non-loop edges.
pub fn random_digraph_m(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DiGraph {
    let mut seen = std::collections::HashSet::with_capacity(m * 2);
    let mut edges = Vec::with_capacity(m);
    while edges.len() < m {
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        if u != v && seen.insert((u, v)) {
            edges.push((u, v));
        }
    }
    DiGraph::from_edges(n, &edges).unwrap()
}

fn edge_list(g: &DiGraph) -> Vec<(usize, usize)> {
    g.edges().collect()
}

fn degrees(n: usize, edges: &[(usize, usize)]) -> (Vec<f64>, Vec<f64>) {
    let (mut din, mut dout) = (vec![0.0; n], vec![0.0; n]);
    for &(u, v) in edges {
        dout[u] += 1.0;
        din[v] += 1.0;
    }
    (din, dout)
}

fn xlogx_ratio(num: f64, den: f64, weight: f64) -> f64 {
    if weight == 0.0 || num == 0.0 {
        0.0
    } else {
        -weight * (num / den).ln()
    }
}

pub fn naive_one_dim(g: &DiGraph) -> f64 {
    let edges = edge_list(g);
    let m = edges.len() as f64;
    let (din, dout) = degrees(g.n(), &edges);
    din.iter().chain(dout.iter()).map(|&d| xlogx_ratio(d, m, d / m)).sum()
}

/// Entropy of the tree whose non-root nodes are the given member sets, each
/// paired with the member set of its parent.
fn naive_blocks(g: &DiGraph, blocks: &[(Vec<usize>, Vec<usize>)]) -> f64 {
    let edges = edge_list(g);
    let m = edges.len() as f64;
    let (din, dout) = degrees(g.n(), &edges);
    let mut total = 0.0;
    for (members, parent) in blocks {
        let mut inside = vec![false; g.n()];
        for &v in members {
            inside[v] = true;
        }
        let g_in = edges.iter().filter(|&&(u, v)| !inside[u] && inside[v]).count() as f64;
        let g_out = edges.iter().filter(|&&(u, v)| inside[u] && !inside[v]).count() as f64;
        let vol = |d: &[f64], set: &[usize]| set.iter().map(|&v| d[v]).sum::<f64>();
        total += xlogx_ratio(vol(&din, members), vol(&din, parent), g_in / m);
        total += xlogx_ratio(vol(&dout, members), vol(&dout, parent), g_out / m);
    }
    total
}

/// Two-level entropy evaluated block by block. Node terms are weighted by the
/// node's degree without its self-loop, block terms by boundary crossings.
pub fn naive_two_dim(g: &DiGraph, assignment: &[usize]) -> f64 {
    let edges = edge_list(g);
    let m = edges.len() as f64;
    let (din, dout) = degrees(g.n(), &edges);
    let k = assignment.iter().max().map_or(0, |&b| b + 1);
    let mut total = 0.0;
    for b in 0..k {
        let members: Vec<usize> = (0..g.n()).filter(|&v| assignment[v] == b).collect();
        for d in [&din, &dout] {
            let vol: f64 = members.iter().map(|&v| d[v]).sum();
            for &v in &members {
                let looped = edges.iter().filter(|&&e| e == (v, v)).count() as f64;
                total += xlogx_ratio(d[v], vol, (d[v] - looped) / m);
            }
        }
        let g_in = edges.iter().filter(|&&(u, v)| assignment[u] != b && assignment[v] == b).count() as f64;
        let g_out = edges.iter().filter(|&&(u, v)| assignment[u] == b && assignment[v] != b).count() as f64;
        let vol_in: f64 = members.iter().map(|&v| din[v]).sum();
        let vol_out: f64 = members.iter().map(|&v| dout[v]).sum();
        total += xlogx_ratio(vol_in, m, g_in / m) + xlogx_ratio(vol_out, m, g_out / m);
    }
    total
}

fn collect_leaves(t: &PartitionTree, id: TreeNodeId, out: &mut Vec<usize>) {
    let node = t.node(id).unwrap();
    match node.graph_node {
        Some(v) => out.push(v),
        None => {
            for &c in &node.children {
                collect_leaves(t, c, out);
            }
        }
    }
}

pub fn members(t: &PartitionTree, id: TreeNodeId) -> Vec<usize> {
    let mut out = Vec::new();
    collect_leaves(t, id, &mut out);
    out
}

pub fn naive_tree(g: &DiGraph, t: &PartitionTree) -> f64 {
    let blocks: Vec<_> = t
        .nodes()
        .filter_map(|node| node.parent.map(|p| (members(t, node.id), members(t, p))))
        .collect();
    naive_blocks(g, &blocks)
}

/// A random tree reached through combine, detach and filler operations.
pub fn random_tree(rng: &mut ChaCha8Rng, g: &DiGraph) -> PartitionTree {
    let mut t = PartitionTree::flat(g).unwrap();
    let merges = rng.random_range(0..g.n().saturating_sub(1).max(1));
    for _ in 0..merges {
        let tops = t.children(t.root()).to_vec();
        if tops.len() < 3 {
            break;
        }
        let a = tops[rng.random_range(0..tops.len())];
        let b = loop {
            let b = tops[rng.random_range(0..tops.len())];
            if b != a {
                break b;
            }
        };
        t.combine(g, a, b).unwrap();
    }
    let internal: Vec<TreeNodeId> = t.nodes().filter(|n| n.parent.is_some() && !n.is_leaf()).map(|n| n.id).collect();
    for v in internal {
        if rng.random::<f64>() < 0.25 {
            t.detach(v).unwrap();
        }
    }
    let live: Vec<TreeNodeId> = t.nodes().filter(|n| n.parent.is_some()).map(|n| n.id).collect();
    for v in live {
        if rng.random::<f64>() < 0.2 {
            t.insert_filler(v).unwrap();
        }
    }
    t
}

/// Every set partition of `0..n`, as restricted-growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(i: usize, n: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for b in 0..=max + 1 {
            cur.push(b);
            rec(i + 1, n, max.max(b), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut cur = vec![0];
    rec(1, n, 0, &mut cur, &mut out);
    out
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(a.abs()) + 1e-14
}
