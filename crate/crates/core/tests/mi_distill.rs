use eden::distill::{affinity_scores, generate_parent, kd_loss, AffinityScores, KdNets};
use eden::graph::DiGraph;
use eden::hierarchy::{Hierarchy, NeighborhoodCache};
use eden::mi::{refine_tree, sample_level_sets, sample_omega, Critic, Role, SampleEntry};
use eden::nn::{ParamStore, Tape};
use eden::propagation::{propagate_global, PropagationMode};
use eden::synthetic::{hierarchical_dsbm, DsbmConfig};
use eden::tree::{build_hkt, MergeStrategy, NodeKind, PartitionTree};
use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Setup {
    g: DiGraph,
    tree: PartitionTree,
    z: Array2<f64>,
}

fn setup(seed: u64, h: usize) -> Setup {
    let cfg = DsbmConfig {
        n: 80,
        features: 6,
        ..DsbmConfig::default()
    };
    let g = hierarchical_dsbm(&cfg, seed).unwrap();
    let tree = build_hkt(&g.add_sink_loops(), h, MergeStrategy::Exhaustive).unwrap().tree;
    let z = propagate_global(&g, g.features(), PropagationMode::Magnetic { q: 0.1 }, 1).unwrap();
    Setup { g, tree, z }
}

fn leaf_scores(s: &Setup, seed: u64) -> Vec<AffinityScores> {
    let hier = Hierarchy::new(&s.g, &s.tree, &s.z).unwrap();
    let depth = hier.height() - 1;
    let mut store = ParamStore::new();
    let critic = Critic::new(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), s.z.ncols(), 4, 6).unwrap();
    let mut cache = NeighborhoodCache::new(0.5, 5);
    sample_level_sets(&s.tree, &hier, &[depth], 2.0, seed)
        .unwrap()
        .iter()
        .map(|set| affinity_scores(&critic, &store, &hier, &mut cache, set, true).unwrap())
        .collect()
}

#[test]
fn sampled_context_holds_own_children_then_sibling_children() {
    let s = setup(1, 3);
    for node in s.tree.nodes().filter(|n| !n.is_leaf()) {
        for kappa in [1.0, 1.3, 2.0] {
            let set = sample_omega(&s.tree, node.id, kappa, 4).unwrap();
            let own = s.tree.children(node.id);
            assert_eq!(set.target, (kappa * own.len() as f64 - 1e-9).ceil() as usize);
            assert_eq!(set.entries.len() + set.shortfall, set.target);
            let (intra, inter): (Vec<&SampleEntry>, Vec<&SampleEntry>) = set.entries.iter().partition(|e| e.role == Role::Intra);
            assert_eq!(intra.iter().map(|e| e.node).collect::<Vec<_>>(), own);
            for e in inter {
                let Role::Inter { source } = e.role else { unreachable!() };
                assert_ne!(source, node.id);
                assert_eq!(s.tree.parent(source), s.tree.parent(node.id));
                assert_eq!(s.tree.parent(e.node), Some(source));
            }
        }
    }
    assert!(sample_omega(&s.tree, s.tree.root(), 2.5, 0).is_err());
}

#[test]
fn affinity_weights_form_a_distribution_per_partition() {
    let s = setup(2, 3);
    for scores in leaf_scores(&s, 3) {
        let w = scores.weights();
        assert!(w.iter().all(|&x| x >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for e in &scores.entries {
            match e.role {
                Role::Intra => assert!(e.s1.is_some()),
                Role::Inter { .. } => assert!(e.s21.is_some() && e.s22.is_some()),
            }
        }
    }
}

#[test]
fn refinement_respects_the_margin_and_keeps_the_tree_valid() {
    let s = setup(3, 4);
    let looped = s.g.add_sink_loops();
    let scores = leaf_scores(&s, 5);
    let (same, log) = refine_tree(&looped, &s.tree, &scores, f64::MAX).unwrap();
    assert!(log.iter().all(|m| !m.applied));
    assert_eq!(same.to_json(), s.tree.to_json());

    let (moved, log) = refine_tree(&looped, &s.tree, &scores, 0.0).unwrap();
    moved.validate(&looped).unwrap();
    assert_eq!(moved.uniform_leaf_depth(), Some(4));
    for m in log.iter().filter(|m| m.applied) {
        assert!(m.s21 > m.s22);
        assert_eq!(moved.parent(moved.leaf_of(m.graph_node)), Some(m.to));
    }
    assert!(moved.nodes().filter(|n| n.kind != NodeKind::Leaf).all(|n| !n.children.is_empty()));
    assert!(refine_tree(&looped, &s.tree, &scores, -1.0).is_err());
}

#[test]
fn generated_parent_is_a_mixture_of_children() {
    let rows = array![[0.2, 0.8], [0.6, 0.4], [1.0, 0.0]];
    let p = generate_parent(&[0.5, 0.25, 0.25], &rows).unwrap();
    assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    assert!(generate_parent(&[0.5, 0.5], &rows).is_err());
    assert!(generate_parent(&[0.7, 0.7, -0.4], &rows).is_err());
    assert!(generate_parent(&[1.0, 0.0, 0.0], &array![[0.5, 0.6], [0.5, 0.5], [0.5, 0.5]]).is_err());
}

#[test]
fn plain_distillation_loss_is_the_mean_distance_to_the_parent() {
    let mut tape = Tape::new();
    let store = ParamStore::new();
    let parent = tape.input(array![[0.5, 0.5]]);
    let children = tape.input(array![[0.5, 0.5], [0.8, 0.1], [0.2, 0.9]]);
    let term = kd_loss(&mut tape, &store, None, parent, children).unwrap();
    let expected = (0.0 + (0.09f64 + 0.16).sqrt() + (0.09f64 + 0.16).sqrt()) / 3.0;
    assert!((tape.scalar(term.loss) - expected).abs() < 1e-15);
    assert_eq!(tape.scalar(term.uncertainty), 1.0);
}

#[test]
fn personalised_uncertainty_stays_in_range() {
    let mut store = ParamStore::new();
    let nets = KdNets::new(&mut store, &mut ChaCha8Rng::seed_from_u64(8), 3, 5).unwrap();
    let mut tape = Tape::new();
    let parent = tape.input(array![[0.2, 0.3, 0.5]]);
    let children = tape.input(array![[0.1, 0.1, 0.8], [0.3, 0.3, 0.4]]);
    let term = kd_loss(&mut tape, &store, Some(&nets), parent, children).unwrap();
    let u = tape.scalar(term.uncertainty);
    assert!((eden::distill::MIN_UNCERTAINTY..=1.0).contains(&u));
    assert!(tape.scalar(term.loss).is_finite());
    let wrong = tape.input(array![[0.5, 0.5]]);
    assert!(kd_loss(&mut tape, &store, Some(&nets), wrong, children).is_err());
}
