//! Reverse-mode gradients of every tape operation against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thyme_core::gradcheck::{finite_diff_grad, max_relative_error};
use thyme_core::graph::FocalParams;
use thyme_core::{Graph, Result, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 100;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Contracts the op output against fixed random weights so every output
/// coordinate contributes to the scalar objective.
fn check_op<F>(name: &str, inputs: &[Tensor], weights_seed: u64, build: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let objective = |g: &mut Graph, vars: &[Var]| -> Result<Var> {
        let out = build(g, vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
        let w = rand_tensor(&mut rng, g.shape(out), 1.0);
        let w = g.input(w);
        let prod = g.mul(out, w)?;
        Ok(g.sum(prod))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let root = objective(&mut g, &vars).unwrap();
    let grads = g.backward(root).unwrap();

    for (k, x) in inputs.iter().enumerate() {
        let numeric = finite_diff_grad(
            |probe| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| g.input(if j == k { probe.clone() } else { t.clone() }))
                    .collect();
                let root = objective(&mut g, &vars)?;
                Ok(g.value(root).data()[0])
            },
            x,
            H,
        )
        .unwrap();
        let analytic = grads
            .get(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; x.len()]);
        let err = max_relative_error(&analytic, numeric.data());
        assert!(err <= TOL, "{name}: input {k} rel err {err:e}");
    }
}

fn for_seeds(mut f: impl FnMut(&mut ChaCha8Rng, u64)) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        f(&mut rng, seed + 1000);
    }
}

#[test]
fn linear_matches_finite_differences() {
    for_seeds(|rng, ws| {
        let n = rng.gen_range(1..4);
        let (di, dout) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let inputs = [
            rand_tensor(rng, &[n, di], 1.0),
            rand_tensor(rng, &[dout, di], 1.0),
            rand_tensor(rng, &[dout], 1.0),
        ];
        check_op("linear", &inputs, ws, |g, v| g.linear(v[0], v[1], Some(v[2])));
    });
}

#[test]
fn elementwise_ops_match_finite_differences() {
    for_seeds(|rng, ws| {
        let shape = [rng.gen_range(1..4), rng.gen_range(1..4)];
        let inputs = [rand_tensor(rng, &shape, 2.0), rand_tensor(rng, &shape, 2.0)];
        check_op("add", &inputs, ws, |g, v| g.add(v[0], v[1]));
        check_op("mul", &inputs, ws, |g, v| g.mul(v[0], v[1]));
        check_op("scale", &inputs[..1], ws, |g, v| Ok(g.scale(v[0], -1.7)));
        check_op("relu", &inputs[..1], ws, |g, v| Ok(g.relu(v[0])));
        check_op("sigmoid", &inputs[..1], ws, |g, v| Ok(g.sigmoid(v[0])));
    });
}

#[test]
fn softmax_and_layer_norm_match_finite_differences() {
    for_seeds(|rng, ws| {
        let (r, c) = (rng.gen_range(1..4), rng.gen_range(2..6));
        let x = rand_tensor(rng, &[r, c], 3.0);
        check_op("softmax_rows", &[x.clone()], ws, |g, v| g.softmax_rows(v[0]));
        let inputs = [
            x,
            rand_tensor(rng, &[c], 1.5),
            rand_tensor(rng, &[c], 1.0),
        ];
        check_op("layer_norm", &inputs, ws, |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-9)
        });
    });
}

#[test]
fn structural_ops_match_finite_differences() {
    for_seeds(|rng, ws| {
        let (r, c) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let a = rand_tensor(rng, &[r, c], 1.0);
        let b = rand_tensor(rng, &[r, c + 1], 1.0);
        let idx: Vec<usize> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..r)).collect();
        let groups: Vec<Vec<usize>> = (0..rng.gen_range(1..4))
            .map(|_| (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..r)).collect())
            .collect();
        check_op("gather_rows", &[a.clone()], ws, |g, v| g.gather_rows(v[0], idx.clone()));
        check_op("concat_cols", &[a.clone(), b], ws, |g, v| g.concat_cols(v[0], v[1]));
        check_op("concat_rows", &[a.clone(), a.clone()], ws, |g, v| {
            g.concat_rows(vec![v[0], v[1], v[0]], c)
        });
        check_op("group_mean", &[a], ws, |g, v| g.group_mean(v[0], groups.clone()));
    });
}

#[test]
fn sparse_attention_matches_finite_differences() {
    for_seeds(|rng, ws| {
        let (nq, nk, d, dv) = (
            rng.gen_range(1..5),
            rng.gen_range(1..5),
            rng.gen_range(1..4),
            rng.gen_range(1..4),
        );
        let index: Vec<Vec<usize>> = (0..nq)
            .map(|_| (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..nk)).collect())
            .collect();
        let scale = rng.gen_range(0.2..1.5);
        let inputs = [
            rand_tensor(rng, &[nq, d], 1.5),
            rand_tensor(rng, &[nk, d], 1.5),
            rand_tensor(rng, &[nk, dv], 1.5),
        ];
        check_op("attend", &inputs, ws, |g, v| {
            g.attend(v[0], v[1], v[2], index.clone(), scale)
        });
        // shared query/key input, as in intra-frame aggregation
        check_op("attend(q=k=v)", &inputs[1..2], ws, |g, v| {
            let idx = (0..nk).map(|_| (0..nk).collect()).collect();
            g.attend(v[0], v[0], v[0], idx, 1.0)
        });
    });
}

#[test]
fn focal_sum_matches_finite_differences() {
    for_seeds(|rng, ws| {
        let n = rng.gen_range(1..8);
        let p = Tensor::new(vec![n], (0..n).map(|_| rng.gen_range(0.02..0.98)).collect()).unwrap();
        let targets: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.8)).collect();
        let cfg = FocalParams {
            alpha: rng.gen_range(0.1..1.0),
            gamma: [0.0, 0.5, 1.0, 2.0, 3.0][rng.gen_range(0..5)],
        };
        check_op("focal_sum", &[p], ws, |g, v| {
            let s = g.focal_sum(v[0], targets.clone(), mask.clone(), cfg)?;
            g.sum_scalars(vec![s, s])
        });
    });
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new();
        let x = g.input(rand_tensor(&mut rng, &[4, 3], 1.0));
        let w = g.input(rand_tensor(&mut rng, &[3, 3], 1.0));
        let y = g.linear(x, w, None).unwrap();
        let idx = (0..4).map(|_| (0..4).collect()).collect();
        let a = g.attend(y, y, y, idx, 0.5).unwrap();
        g.value(a).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
