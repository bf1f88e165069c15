//! Scene graph head against direct compositions and a sort-everything oracle.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thyme_core::dataio::InteractivityType;
use thyme_core::gradcheck::{finite_diff_grad, max_relative_error};
use thyme_core::head::{
    assemble_graph, fuse_and_score, gate, node_attribute_scores, off_diagonal_pairs, pair_representation, Candidate, Mlp,
};
use thyme_core::ops::{linear, sigmoid_scalar};
use thyme_core::{Graph, ParamStore, Tensor};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

#[test]
fn pair_representation_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, d, m) = (3, 4, 2);
    let q = rand_tensor(&mut rng, &[n, d], -1.0, 1.0);
    let k = rand_tensor(&mut rng, &[n, d], -1.0, 1.0);
    let ws = rand_tensor(&mut rng, &[m, d], -1.0, 1.0);
    let wo = rand_tensor(&mut rng, &[m, d], -1.0, 1.0);
    let pairs = off_diagonal_pairs(n);
    let mut g = Graph::new();
    let vars = [q.clone(), k.clone(), ws.clone(), wo.clone()].map(|t| g.input(t));
    let p = pair_representation(&mut g, vars[0], vars[1], vars[2], vars[3], &pairs).unwrap();
    let got = g.value(p);
    for (row, &(i, j)) in pairs.iter().enumerate() {
        for c in 0..m {
            let s: f64 = (0..d).map(|x| ws.at2(c, x) * q.at2(i, x)).sum();
            let o: f64 = (0..d).map(|x| wo.at2(c, x) * k.at2(j, x)).sum();
            assert!((got.at2(row, c) - s).abs() <= 1e-12);
            assert!((got.at2(row, m + c) - o).abs() <= 1e-12);
        }
    }
}

#[test]
fn gate_matches_elementwise_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let r = rand_tensor(&mut rng, &[5, 4], -2.0, 2.0);
    let w = rand_tensor(&mut rng, &[4, 4], -1.0, 1.0);
    let mut g = Graph::new();
    let (rv, wv) = (g.input(r.clone()), g.input(w.clone()));
    let out = gate(&mut g, rv, wv).unwrap();
    let pre = linear(&r, &w, None).unwrap();
    for (a, b) in g.value(out).data().iter().zip(pre.data()) {
        assert_eq!(*a, sigmoid_scalar(*b));
        assert!(*a > 0.0 && *a < 1.0);
    }
}

fn head(store: &mut ParamStore, d_in: usize, classes: usize) -> Mlp {
    Mlp::register(store, "rel", d_in, 3, classes).unwrap()
}

#[test]
fn zero_final_layer_scores_one_half() {
    let mut store = ParamStore::new(3);
    let mlp = head(&mut store, 4, 5);
    store.get_mut(mlp.w2).value = Tensor::zeros(&[5, 3]);
    store.get_mut(mlp.b2).value = Tensor::zeros(&[5]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let r = g.input(rand_tensor(&mut rng, &[6, 4], -1.0, 1.0));
    let rz = g.input(rand_tensor(&mut rng, &[6, 4], -1.0, 1.0));
    let wg = g.input(rand_tensor(&mut rng, &[4, 4], -1.0, 1.0));
    let edge = fuse_and_score(&mut g, &store, &[r], rz, wg, &mlp).unwrap();
    assert!(g.value(edge).data().iter().all(|&s| s == 0.5));
    let node = node_attribute_scores(&mut g, &store, r, &mlp).unwrap();
    assert!(g.value(node).data().iter().all(|&s| s == 0.5));
}

#[test]
fn saturated_gates_reduce_to_plain_sum() {
    let mut store = ParamStore::new(4);
    let mlp = head(&mut store, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ra = rand_tensor(&mut rng, &[3, 4], 0.5, 1.0);
    let rz = rand_tensor(&mut rng, &[3, 4], 0.5, 1.0);

    let mut g = Graph::new();
    let (a, z) = (g.input(ra.clone()), g.input(rz.clone()));
    let wg = g.input(Tensor::filled(&[4, 4], 1e3));
    let gated = fuse_and_score(&mut g, &store, &[a], z, wg, &mlp).unwrap();

    let mut plain = Graph::new();
    let (a, z) = (plain.input(ra), plain.input(rz));
    let sum = plain.add(a, z).unwrap();
    let logits = mlp.logits(&mut plain, &store, sum).unwrap();
    let expected = plain.sigmoid(logits);
    assert_eq!(g.value(gated), plain.value(expected));
}

#[test]
fn gate_weight_gradient_matches_finite_differences() {
    let mut store = ParamStore::new(5);
    let mlp = head(&mut store, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ra = [rand_tensor(&mut rng, &[3, 4], -1.0, 1.0), rand_tensor(&mut rng, &[3, 4], -1.0, 1.0)];
    let rz = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let wg = rand_tensor(&mut rng, &[4, 4], -1.0, 1.0);
    let weights = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
    let objective = |w: &Tensor| -> (Graph, thyme_core::Var, thyme_core::Var) {
        let mut g = Graph::new();
        let layers: Vec<_> = ra.iter().map(|t| g.input(t.clone())).collect();
        let z = g.input(rz.clone());
        let wv = g.input(w.clone());
        let s = fuse_and_score(&mut g, &store, &layers, z, wv, &mlp).unwrap();
        let c = g.input(weights.clone());
        let prod = g.mul(s, c).unwrap();
        let root = g.sum(prod);
        (g, root, wv)
    };
    let (g, root, wv) = objective(&wg);
    let analytic = g.backward(root).unwrap().get(wv).unwrap().to_vec();
    let numeric = finite_diff_grad(
        |w| {
            let (g, root, _) = objective(w);
            Ok(g.value(root).data()[0])
        },
        &wg,
        1e-5,
    )
    .unwrap();
    assert!(max_relative_error(&analytic, numeric.data()) <= 1e-4);
}

#[test]
fn ranking_matches_full_sort_oracle() {
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..5u64);
        let classes = rng.gen_range(1..4);
        let k = rng.gen_range(1..30);
        // Coarse scores force ties.
        let mut cands = Vec::new();
        for s in 1..=n {
            for o in 1..=n {
                let scores = (0..classes).map(|_| rng.gen_range(0..4) as f64 / 4.0 + 0.1).collect();
                cands.push(Candidate { sub: s, obj: Some(o), scores });
            }
        }
        let mut oracle: Vec<(f64, u64, u64, usize)> = Vec::new();
        for c in &cands {
            if c.obj == Some(c.sub) {
                continue;
            }
            for (p, &sc) in c.scores.iter().enumerate() {
                oracle.push((sc, c.sub, c.obj.unwrap(), p));
            }
        }
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
        oracle.truncate(k);

        let mut map = BTreeMap::new();
        map.insert(InteractivityType::Relation, cands);
        let graph = assemble_graph(0, map, k);
        let got: Vec<(f64, u64, u64, usize)> = graph.ranked[&InteractivityType::Relation]
            .iter()
            .map(|t| (t.score, t.sub, t.obj.unwrap(), t.pred))
            .collect();
        assert_eq!(got, oracle, "seed {seed}");
    }
}
