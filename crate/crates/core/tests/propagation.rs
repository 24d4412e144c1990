mod common;

use std::f64::consts::PI;

use common::random_digraph;
use eden::graph::DiGraph;
use eden::propagation::{magnetic_operator, partition_propagate, propagate_global, PropagationMode};
use ndarray::{concatenate, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense `(re, im)` matrices of the normalised magnetic operator.
fn dense_operator(g: &DiGraph, q: f64) -> (Array2<f64>, Array2<f64>) {
    let n = g.n();
    let a = |i: usize, j: usize| f64::from(u8::from(g.has_edge(i, j)));
    let mut re = Array2::zeros((n, n));
    let mut im = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                re[[i, j]] = 1.0;
            } else {
                let w = 0.5 * (a(i, j) + a(j, i));
                let theta = 2.0 * PI * q * (a(i, j) - a(j, i));
                re[[i, j]] = w * theta.cos();
                im[[i, j]] = w * theta.sin();
            }
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| re[[i, j]].hypot(im[[i, j]])).sum()).collect();
    for i in 0..n {
        for j in 0..n {
            let s = (deg[i] * deg[j]).sqrt();
            re[[i, j]] /= s;
            im[[i, j]] /= s;
        }
    }
    (re, im)
}

fn features(rng: &mut ChaCha8Rng, n: usize, f: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, f), |_| rng.random_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn operator_is_hermitian_and_matches_dense(seed in any::<u64>(), n in 1usize..12, p in 0.0f64..0.6, q in 0.0f64..0.5, loops in any::<bool>()) {
        let g = random_digraph(&mut ChaCha8Rng::seed_from_u64(seed), n, p, loops);
        let op = magnetic_operator(&g, q, true);
        let (re, im) = dense_operator(&g, q);
        for i in 0..n {
            for j in 0..n {
                let (a, b) = op.entry(i, j);
                let (c, d) = op.entry(j, i);
                prop_assert!((a - c).abs() < 1e-14 && (b + d).abs() < 1e-14);
                prop_assert!((a - re[[i, j]]).abs() < 1e-14 && (b - im[[i, j]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn global_propagation_matches_dense_powers(seed in any::<u64>(), n in 1usize..12, p in 0.0f64..0.6, q in 0.0f64..0.5, hops in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_digraph(&mut rng, n, p, false);
        let x = features(&mut rng, n, 3);
        let (re, im) = dense_operator(&g, q);
        let (mut xr, mut xi) = (x.clone(), Array2::zeros(x.dim()));
        for _ in 0..hops {
            (xr, xi) = (re.dot(&xr) - im.dot(&xi), re.dot(&xi) + im.dot(&xr));
        }
        let got = propagate_global(&g, &x, PropagationMode::Magnetic { q }, hops).unwrap();
        let want = concatenate![Axis(1), xr, xi];
        prop_assert!((&got - &want).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn partition_propagation_matches_dense_iteration(seed in any::<u64>(), n in 1usize..14, p in 0.0f64..0.6, tau in 0.0f64..1.0, steps in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_digraph(&mut rng, n, p, true);
        let x = features(&mut rng, n, 2);
        let members: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
        prop_assume!(!members.is_empty());
        let k = members.len();
        let adj = Array2::from_shape_fn((k, k), |(i, j)| {
            let (u, v) = (members[i], members[j]);
            f64::from(u8::from(u != v && (g.has_edge(u, v) || g.has_edge(v, u))))
        });
        let deg = adj.sum_axis(Axis(1));
        let op = Array2::from_shape_fn((k, k), |(i, j)| {
            if adj[[i, j]] > 0.0 { (1.0 - tau) * adj[[i, j]] / (deg[i] * deg[j]).sqrt() } else { 0.0 }
        });
        let keep = Array2::from_shape_fn((k, 1), |(i, _)| if deg[i] > 0.0 { tau } else { 1.0 });
        let start = x.select(Axis(0), &members);
        let mut cur = start.clone();
        for _ in 0..steps {
            cur = &start * &keep + op.dot(&cur);
        }
        let got = partition_propagate(&g, &members, &x, tau, steps).unwrap();
        prop_assert!((&got - &cur).iter().all(|d| d.abs() < 1e-12));
    }
}

#[test]
fn symmetric_mode_is_the_real_part_at_q_zero() {
    let g = DiGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 1)]).unwrap();
    let x = features(&mut ChaCha8Rng::seed_from_u64(1), 4, 3);
    let sym = propagate_global(&g, &x, PropagationMode::Symmetric, 2).unwrap();
    let mag = propagate_global(&g, &x, PropagationMode::Magnetic { q: 0.0 }, 2).unwrap();
    assert_eq!(sym, mag.slice(ndarray::s![.., ..3]).to_owned());
    assert!(mag.slice(ndarray::s![.., 3..]).iter().all(|&v| v == 0.0));
}

#[test]
fn one_way_edges_carry_phase_that_two_way_edges_do_not() {
    let g = DiGraph::from_edges(3, &[(0, 1), (1, 2), (2, 1)]).unwrap();
    let op = magnetic_operator(&g, 0.1, false);
    assert!(op.entry(0, 1).1 > 0.0);
    assert_eq!(op.entry(1, 2).1, 0.0);
}

#[test]
fn empty_member_set_is_rejected() {
    let g = DiGraph::from_edges(2, &[(0, 1)]).unwrap();
    assert!(partition_propagate(&g, &[], &Array2::zeros((2, 1)), 0.5, 3).is_err());
}
