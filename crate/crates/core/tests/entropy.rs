mod common;

use common::{naive_one_dim, naive_tree, naive_two_dim, random_digraph, random_tree, rel_close};
use eden::entropy::{delta_combine, delta_detach, one_dim_entropy, tree_entropy, two_dim_entropy, Partition};
use eden::graph::DiGraph;
use eden::tree::{NodeKind, PartitionTree};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph(seed: u64, n: usize, p: f64, loops: bool) -> Option<DiGraph> {
    let g = random_digraph(&mut ChaCha8Rng::seed_from_u64(seed), n, p, loops);
    (g.m() > 0).then_some(g)
}

fn assignment(rng: &mut ChaCha8Rng, n: usize, blocks: usize) -> Vec<usize> {
    let raw: Vec<usize> = (0..n).map(|_| rng.random_range(0..blocks)).collect();
    let mut relabel = vec![usize::MAX; blocks];
    let mut next = 0;
    raw.iter()
        .map(|&b| {
            if relabel[b] == usize::MAX {
                relabel[b] = next;
                next += 1;
            }
            relabel[b]
        })
        .collect()
}

/// Root over one internal node per block of size two or more; singleton
/// blocks hang from the root directly.
fn two_level_tree(g: &DiGraph, assignment: &[usize]) -> PartitionTree {
    let mut t = PartitionTree::flat(g).unwrap();
    let blocks = assignment.iter().max().unwrap() + 1;
    for b in 0..blocks {
        let members: Vec<usize> = (0..g.n()).filter(|&v| assignment[v] == b).collect();
        if members.len() < 2 {
            continue;
        }
        let node = t.combine(g, t.leaf_of(members[0]), t.leaf_of(members[1])).unwrap();
        let rest: Vec<_> = members[2..].iter().map(|&v| (v, node)).collect();
        t.move_leaves(g, &rest).unwrap();
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn one_dim_agrees_with_direct_sum(seed in any::<u64>(), n in 2usize..14, p in 0.05f64..0.7, loops in any::<bool>()) {
        let Some(g) = graph(seed, n, p, loops) else { return Ok(()) };
        let r = one_dim_entropy(&g).unwrap();
        prop_assert!(rel_close(r.value, naive_one_dim(&g), 1e-12));
        prop_assert!(rel_close(r.in_part + r.out_part, r.value, 1e-12));
    }

    #[test]
    fn two_dim_agrees_with_direct_sum(seed in any::<u64>(), n in 2usize..14, p in 0.05f64..0.7, loops in any::<bool>(), k in 1usize..5) {
        let Some(g) = graph(seed, n, p, loops) else { return Ok(()) };
        let a = assignment(&mut ChaCha8Rng::seed_from_u64(seed ^ 1), n, k);
        let r = two_dim_entropy(&g, &Partition::new(a.clone(), n).unwrap()).unwrap();
        prop_assert!(rel_close(r.value, naive_two_dim(&g, &a), 1e-12));
        let blocks: f64 = r.per_block.as_ref().unwrap().iter().sum();
        prop_assert!(rel_close(blocks, r.value, 1e-12));
    }

    #[test]
    fn two_dim_is_the_entropy_of_the_two_level_tree(seed in any::<u64>(), n in 3usize..14, p in 0.05f64..0.7, loops in any::<bool>(), k in 1usize..5) {
        let Some(g) = graph(seed, n, p, loops) else { return Ok(()) };
        let a = assignment(&mut ChaCha8Rng::seed_from_u64(seed ^ 2), n, k);
        let flat = two_dim_entropy(&g, &Partition::new(a.clone(), n).unwrap()).unwrap().value;
        let tree = tree_entropy(&g, &two_level_tree(&g, &a)).unwrap().value;
        prop_assert!(rel_close(flat, tree, 1e-12), "{} vs {}", flat, tree);
    }

    #[test]
    fn tree_entropy_agrees_with_member_sets(seed in any::<u64>(), n in 2usize..16, p in 0.05f64..0.6, loops in any::<bool>()) {
        let Some(g) = graph(seed, n, p, loops) else { return Ok(()) };
        let t = random_tree(&mut ChaCha8Rng::seed_from_u64(seed ^ 3), &g);
        prop_assert!(rel_close(tree_entropy(&g, &t).unwrap().value, naive_tree(&g, &t), 1e-12));
    }

    #[test]
    fn combine_delta_is_the_entropy_difference(seed in any::<u64>(), n in 3usize..14, p in 0.05f64..0.7, loops in any::<bool>()) {
        let Some(g) = graph(seed, n, p, loops) else { return Ok(()) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
        let t = random_tree(&mut rng, &g);
        let tops = t.children(t.root()).to_vec();
        prop_assume!(tops.len() >= 2);
        let i = rng.random_range(0..tops.len());
        let j = (i + 1 + rng.random_range(0..tops.len() - 1)) % tops.len();
        let delta = delta_combine(&g, &t, tops[i], tops[j]).unwrap();
        let mut after = t.clone();
        after.combine(&g, tops[i], tops[j]).unwrap();
        let expected = naive_tree(&g, &after) - naive_tree(&g, &t);
        prop_assert!((delta - expected).abs() < 1e-10, "{} vs {}", delta, expected);
    }

    #[test]
    fn detach_delta_is_the_entropy_difference(seed in any::<u64>(), n in 3usize..14, p in 0.05f64..0.7, loops in any::<bool>()) {
        let Some(g) = graph(seed, n, p, loops) else { return Ok(()) };
        let t = random_tree(&mut ChaCha8Rng::seed_from_u64(seed ^ 5), &g);
        for node in t.nodes().filter(|x| matches!(x.kind, NodeKind::Internal | NodeKind::Filler)) {
            let delta = delta_detach(&g, &t, node.id).unwrap();
            let mut after = t.clone();
            after.detach(node.id).unwrap();
            let expected = naive_tree(&g, &after) - naive_tree(&g, &t);
            prop_assert!(delta >= -1e-12);
            prop_assert!((delta - expected).abs() < 1e-10, "{} vs {}", delta, expected);
        }
    }
}

#[test]
fn flat_tree_matches_one_dim_without_loops() {
    let g = DiGraph::from_edges(5, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 3), (0, 3)]).unwrap();
    let t = PartitionTree::flat(&g).unwrap();
    let flat = tree_entropy(&g, &t).unwrap().value;
    assert!(rel_close(flat, one_dim_entropy(&g).unwrap().value, 1e-14));
}

#[test]
fn two_dim_is_non_negative() {
    let g = DiGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
    for p in [Partition::singletons(4), Partition::single_block(4)] {
        assert!(two_dim_entropy(&g, &p).unwrap().value >= 0.0);
    }
}

#[test]
fn empty_graph_is_rejected() {
    let g = DiGraph::from_edges(3, &[]).unwrap();
    assert!(one_dim_entropy(&g).is_err());
}
