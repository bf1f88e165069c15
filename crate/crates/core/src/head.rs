//! Scene graph head: pairwise relation representations, sigmoid gating,
//! gated fusion and the relation MLP, plus per-node attribute heads and
//! top-K triplet assembly.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataio::InteractivityType;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::{Init, ParamId, ParamStore};

/// Ordered pairs `(i, j)` with `i ≠ j`, row-major.
pub fn off_diagonal_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

/// All `n²` ordered pairs including the diagonal, row-major.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect()
}

/// `P[(i,j)] = [W_S q_i ; W_O k_j]` for each listed pair; `[pairs × 2m]`.
pub fn pair_representation(
    g: &mut Graph,
    q: Var,
    k: Var,
    w_sub: Var,
    w_obj: Var,
    pairs: &[(usize, usize)],
) -> Result<Var> {
    let sub = g.linear(q, w_sub, None)?;
    let obj = g.linear(k, w_obj, None)?;
    let s = g.gather_rows(sub, pairs.iter().map(|p| p.0).collect())?;
    let o = g.gather_rows(obj, pairs.iter().map(|p| p.1).collect())?;
    g.concat_cols(s, o)
}

/// `σ(R · W_G)`, applied along the last axis.
pub fn gate(g: &mut Graph, r: Var, w_g: Var) -> Result<Var> {
    let pre = g.linear(r, w_g, None)?;
    Ok(g.sigmoid(pre))
}

/// Two-layer ReLU perceptron.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn register(store: &mut ParamStore, prefix: &str, d_in: usize, hidden: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            w1: store.add(format!("{prefix}.w1"), &[hidden, d_in], Init::Uniform { fan_in: d_in })?,
            b1: store.add(format!("{prefix}.b1"), &[hidden], Init::Uniform { fan_in: d_in })?,
            w2: store.add(format!("{prefix}.w2"), &[d_out, hidden], Init::Uniform { fan_in: hidden })?,
            b2: store.add(format!("{prefix}.b2"), &[d_out], Init::Uniform { fan_in: hidden })?,
        })
    }

    pub fn logits(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (w1, b1) = (g.param(store, self.w1), g.param(store, self.b1));
        let (w2, b2) = (g.param(store, self.w2), g.param(store, self.b2));
        let h = g.linear(x, w1, Some(b1))?;
        let h = g.relu(h);
        g.linear(h, w2, Some(b2))
    }

    pub fn output_width(&self, store: &ParamStore) -> usize {
        store.get(self.w2).value.shape()[0]
    }
}

/// `g ⊙ R` with `g = σ(R · W_G)`.
pub fn gated(g: &mut Graph, r: Var, w_g: Var) -> Result<Var> {
    let gr = gate(g, r, w_g)?;
    g.mul(gr, r)
}

/// `Σ_k g_k ⊙ R_k + g_z ⊙ R_z`. `gated_layers` holds each layer's already
/// gated term, so deeper supervision levels can reuse them.
pub fn fuse(g: &mut Graph, gated_layers: &[Var], r_z: Var, w_g: Var) -> Result<Var> {
    let mut fused = gated(g, r_z, w_g)?;
    for &term in gated_layers {
        fused = g.add(fused, term)?;
    }
    Ok(fused)
}

/// `σ(MLP(Σ_k g_k ⊙ R_k + g_z ⊙ R_z))` from pre-gated layer terms.
pub fn fuse_gated_and_score(
    g: &mut Graph,
    store: &ParamStore,
    gated_layers: &[Var],
    r_z: Var,
    w_g: Var,
    mlp: &Mlp,
) -> Result<Var> {
    let fused = fuse(g, gated_layers, r_z, w_g)?;
    let logits = mlp.logits(g, store, fused)?;
    Ok(g.sigmoid(logits))
}

/// Gated fusion from raw layer representations.
pub fn fuse_and_score(
    g: &mut Graph,
    store: &ParamStore,
    layer_reps: &[Var],
    r_z: Var,
    w_g: Var,
    mlp: &Mlp,
) -> Result<Var> {
    let terms = layer_reps
        .iter()
        .map(|&r| gated(g, r, w_g))
        .collect::<Result<Vec<_>>>()?;
    fuse_gated_and_score(g, store, &terms, r_z, w_g, mlp)
}

/// `σ(MLP_node(F̂))` for each row of `summary`.
pub fn node_attribute_scores(g: &mut Graph, store: &ParamStore, summary: Var, mlp: &Mlp) -> Result<Var> {
    let logits = mlp.logits(g, store, summary)?;
    Ok(g.sigmoid(logits))
}

/// One ranked prediction. `obj` is `None` for single-actor types.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Triplet {
    pub sub: u64,
    pub pred: usize,
    pub obj: Option<u64>,
    pub score: f64,
}

/// Scores of one candidate (node or ordered pair) over a type's predicates.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub sub: u64,
    pub obj: Option<u64>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SceneGraphPrediction {
    pub frame: usize,
    pub candidates: BTreeMap<InteractivityType, Vec<Candidate>>,
    /// Top-K triplets per type, best first.
    pub ranked: BTreeMap<InteractivityType, Vec<Triplet>>,
}

/// Total order: score descending, then subject, object and predicate ascending.
pub fn rank_order(a: &Triplet, b: &Triplet) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.sub.cmp(&b.sub))
        .then(a.obj.cmp(&b.obj))
        .then(a.pred.cmp(&b.pred))
}

/// Keeps the `k` best triplets of every type. Self-edges are dropped.
pub fn assemble_graph(
    frame: usize,
    candidates: BTreeMap<InteractivityType, Vec<Candidate>>,
    k: usize,
) -> SceneGraphPrediction {
    let ranked = candidates
        .iter()
        .map(|(&ty, cands)| {
            let mut all: Vec<Triplet> = cands
                .iter()
                .filter(|c| c.obj != Some(c.sub))
                .flat_map(|c| {
                    c.scores.iter().enumerate().map(move |(pred, &score)| Triplet {
                        sub: c.sub,
                        pred,
                        obj: c.obj,
                        score,
                    })
                })
                .collect();
            all.sort_by(rank_order);
            all.truncate(k);
            (ty, all)
        })
        .collect();
    SceneGraphPrediction {
        frame,
        candidates,
        ranked,
    }
}
