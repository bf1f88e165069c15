//! Intra-frame hierarchical aggregation.
//!
//! Each level attends over the full object set of a frame (the subject itself
//! included) with raw dot-product scores, aggregates affinely transformed
//! neighbours and applies ReLU:
//!
//! ```text
//! a_ij  = softmax_j( F_i · F_j )
//! F'_i  = relu( Σ_j a_ij (W F_j + b) )
//! ```
//!
//! Weights are shared across frames: one `(W, b)` pair per level.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::features::FrameSet;
use crate::graph::{Graph, Var};
use crate::ops::{dot, softmax_slice};
use crate::param::{Init, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Level `l` features of one frame, rows aligned with the frame's instance order.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelFeatures {
    pub level: usize,
    pub frame_index: usize,
    pub features: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyConfig {
    /// Total number of levels `L_h`.
    pub levels: usize,
    /// Output width of each level; `dims.len() == levels`.
    pub dims: Vec<usize>,
    /// Fraction of levels that are active.
    pub factor: f64,
}

impl HierarchyConfig {
    pub fn uniform(levels: usize, width: usize, factor: f64) -> Self {
        Self {
            levels,
            dims: vec![width; levels],
            factor,
        }
    }

    /// `max(1, round(factor × L_h))`.
    pub fn active_levels(&self) -> usize {
        ((self.factor * self.levels as f64).round() as usize).clamp(1, self.levels.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.dims.len() != self.levels || self.dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "hierarchy needs ≥1 level and one positive width per level, got {} levels, dims {:?}",
                self.levels, self.dims
            )));
        }
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "hierarchy factor {} outside (0, 1]",
                self.factor
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HierarchyParams {
    /// `(W_l, b_l)` for each active level `l = 1…`.
    pub levels: Vec<(ParamId, ParamId)>,
}

impl HierarchyParams {
    pub fn register(store: &mut ParamStore, cfg: &HierarchyConfig, d0: usize) -> Result<Self> {
        cfg.validate()?;
        let mut levels = Vec::new();
        let mut d_in = d0;
        for l in 1..=cfg.active_levels() {
            let d_out = cfg.dims[l - 1];
            let w = store.add(format!("hier.{l}.weight"), &[d_out, d_in], Init::Uniform { fan_in: d_in })?;
            let b = store.add(format!("hier.{l}.bias"), &[d_out], Init::Uniform { fan_in: d_in })?;
            levels.push((w, b));
            d_in = d_out;
        }
        Ok(Self { levels })
    }
}

/// Row-stochastic `[N × N]` relevance matrix over the full object set.
pub fn attention_weights(features: &Tensor) -> Tensor {
    let n = features.rows();
    if n == 0 {
        return Tensor::zeros(&[0, 0]);
    }
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let scores: Vec<f64> = (0..n).map(|j| dot(features.row(i), features.row(j))).collect();
        out.extend(softmax_slice(&scores));
    }
    Tensor::new(vec![n, n], out).expect("n×n")
}

/// One aggregation level over a stack of frames. `blocks` lists each frame's
/// row range in `prev`; attention never crosses a block boundary.
pub fn aggregate_level_blocks(
    g: &mut Graph,
    prev: Var,
    weight: Var,
    bias: Var,
    blocks: &[Range<usize>],
) -> Result<Var> {
    let values = g.linear(prev, weight, Some(bias))?;
    let mut index = vec![Vec::new(); g.value(prev).rows()];
    for b in blocks {
        for i in b.clone() {
            index[i] = b.clone().collect();
        }
    }
    let mixed = g.attend(prev, prev, values, index, 1.0)?;
    Ok(g.relu(mixed))
}

/// One aggregation level over a single frame's `[N × d]` features.
pub fn aggregate_level(g: &mut Graph, prev: Var, weight: Var, bias: Var) -> Result<Var> {
    let n = g.value(prev).rows();
    aggregate_level_blocks(g, prev, weight, bias, &[0..n])
}

/// Runs every active level; element 0 of the result is `input` itself.
pub fn run_hierarchy_blocks(
    g: &mut Graph,
    store: &ParamStore,
    params: &HierarchyParams,
    input: Var,
    blocks: &[Range<usize>],
) -> Result<Vec<Var>> {
    let mut levels = vec![input];
    for &(w, b) in &params.levels {
        let (w, b) = (g.param(store, w), g.param(store, b));
        let prev = *levels.last().expect("level 0 present");
        levels.push(aggregate_level_blocks(g, prev, w, b, blocks)?);
    }
    Ok(levels)
}

/// Value-level hierarchy for one frame, levels `0…active`.
pub fn run_hierarchy(
    frame: &FrameSet,
    d0: usize,
    store: &ParamStore,
    params: &HierarchyParams,
) -> Result<Vec<LevelFeatures>> {
    let mut g = Graph::new();
    let input = g.input(frame.embeddings(d0));
    let n = frame.len();
    let vars = run_hierarchy_blocks(&mut g, store, params, input, &[0..n])?;
    Ok(vars
        .into_iter()
        .enumerate()
        .map(|(level, v)| LevelFeatures {
            level,
            frame_index: frame.frame_index,
            features: g.value(v).clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn active_level_arithmetic() {
        let cfg = |f| HierarchyConfig::uniform(4, 8, f);
        assert_eq!(cfg(0.25).active_levels(), 1);
        assert_eq!(cfg(0.5).active_levels(), 2);
        assert_eq!(cfg(0.75).active_levels(), 3);
        assert_eq!(cfg(1.0).active_levels(), 4);
        assert_eq!(HierarchyConfig::uniform(2, 8, 0.1).active_levels(), 1);
        assert!(cfg(0.0).validate().is_err());
        assert!(cfg(1.5).validate().is_err());
    }

    #[test]
    fn single_object_weight_is_one() {
        let w = attention_weights(&Tensor::from_rows(&[vec![3.0, -2.0]]).unwrap());
        assert_eq!(w.data(), &[1.0]);
    }

    #[test]
    fn identical_rows_split_evenly() {
        let f = Tensor::from_rows(&[vec![0.4, 1.0], vec![0.4, 1.0]]).unwrap();
        assert!(attention_weights(&f).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn empty_frame_gives_empty_matrix() {
        let w = attention_weights(&Tensor::zeros(&[0, 4]));
        assert_eq!(w.shape(), &[0, 0]);
    }

    #[test]
    fn single_object_aggregate_is_relu_of_affine() {
        let mut g = Graph::new();
        let f = g.input(Tensor::from_rows(&[vec![-1.0, 2.0]]).unwrap());
        let w = g.input(Tensor::identity(2));
        let b = g.input(Tensor::zeros(&[2]));
        let out = aggregate_level(&mut g, f, w, b).unwrap();
        assert_eq!(g.value(out).data(), &[0.0, 2.0]);
    }

    #[test]
    fn identical_objects_give_identical_rows() {
        let mut g = Graph::new();
        let f = g.input(Tensor::from_rows(&[vec![0.3, -0.7, 1.1], vec![0.3, -0.7, 1.1]]).unwrap());
        let w = g.input(Tensor::from_rows(&[vec![1.0, 0.5, -0.2], vec![0.1, 0.9, 0.4]]).unwrap());
        let b = g.input(Tensor::vector(&[0.2, -0.1]));
        let out = aggregate_level(&mut g, f, w, b).unwrap();
        let t = g.value(out);
        assert_eq!(t.row(0), t.row(1));
    }

    #[test]
    fn blocks_do_not_mix() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![5.0, 5.0]];
        let mut g = Graph::new();
        let f = g.input(Tensor::from_rows(&rows).unwrap());
        let w = g.input(Tensor::identity(2));
        let b = g.input(Tensor::zeros(&[2]));
        let out = aggregate_level_blocks(&mut g, f, w, b, &[0..2, 2..3]).unwrap();
        assert_eq!(g.value(out).row(2), &[5.0, 5.0]);
    }
}
