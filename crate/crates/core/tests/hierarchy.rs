//! Intra-frame aggregation against a double-loop oracle.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thyme_core::hier::{aggregate_level, attention_weights, HierarchyConfig, HierarchyParams};
use thyme_core::{Graph, ParamStore, Tensor};

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `relu(Σ_j softmax_j(F_i·F_j) (W F_j + b))` with plain loops.
fn level_oracle(f: &Tensor, w: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    let n = f.rows();
    let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
    let affine: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            (0..d_out)
                .map(|o| b.data()[o] + (0..d_in).map(|c| w.at2(o, c) * f.at2(j, c)).sum::<f64>())
                .collect()
        })
        .collect();
    (0..n)
        .map(|i| {
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..d_in).map(|c| f.at2(i, c) * f.at2(j, c)).sum())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..d_out)
                .map(|o| (0..n).map(|j| e[j] / z * affine[j][o]).sum::<f64>().max(0.0))
                .collect()
        })
        .collect()
}

fn run_level(f: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let (fv, wv, bv) = (g.input(f.clone()), g.input(w.clone()), g.input(b.clone()));
    let out = aggregate_level(&mut g, fv, wv, bv).unwrap();
    g.value(out).clone()
}

#[test]
fn level_matches_loop_oracle() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..7);
        let (d_in, d_out) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let f = rand_tensor(&mut rng, n, d_in);
        let w = rand_tensor(&mut rng, d_out, d_in);
        let b = rand_tensor(&mut rng, 1, d_out).reshape(vec![d_out]).unwrap();
        let got = run_level(&f, &w, &b);
        for (i, row) in level_oracle(&f, &w, &b).iter().enumerate() {
            for (o, &x) in row.iter().enumerate() {
                assert!((got.at2(i, o) - x).abs() <= 1e-12, "seed {seed}");
            }
        }
    }
}

#[test]
fn two_levels_compose() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let d0 = 4;
    let cfg = HierarchyConfig::uniform(2, 3, 1.0);
    let mut store = ParamStore::new(8);
    let params = HierarchyParams::register(&mut store, &cfg, d0).unwrap();
    let f = rand_tensor(&mut rng, 5, d0);
    let mut g = Graph::new();
    let input = g.input(f.clone());
    let levels = thyme_core::hier::run_hierarchy_blocks(&mut g, &store, &params, input, &[0..5]).unwrap();
    assert_eq!(levels.len(), 3);

    let mut expected = f;
    for &(w, b) in &params.levels {
        let rows = level_oracle(&expected, &store.get(w).value, &store.get(b).value);
        expected = Tensor::from_rows(&rows).unwrap();
    }
    assert!(g.value(levels[2]).max_abs_diff(&expected) <= 1e-12);
}

proptest! {
    #[test]
    fn weights_are_row_stochastic(n in 1usize..8, d in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = attention_weights(&rand_tensor(&mut rng, n, d));
        for i in 0..n {
            let row = &a.data()[i * n..(i + 1) * n];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn permutation_equivariant(n in 2usize..7, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = rand_tensor(&mut rng, n, 3);
        let w = rand_tensor(&mut rng, 3, 3);
        let b = rand_tensor(&mut rng, 1, 3).reshape(vec![3]).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let permuted = Tensor::from_rows(&perm.iter().map(|&p| f.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
        let base = run_level(&f, &w, &b);
        let out = run_level(&permuted, &w, &b);
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..3 {
                prop_assert!((out.at2(i, c) - base.at2(p, c)).abs() <= 1e-12);
            }
        }
    }
}
