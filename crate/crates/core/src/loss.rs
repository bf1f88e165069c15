//! Focal loss and its per-level aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{focal_term, FocalParams, Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!("focal alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("focal gamma {} must be ≥ 0", self.gamma)));
        }
        Ok(())
    }

    pub fn params(self) -> FocalParams {
        FocalParams {
            alpha: self.alpha,
            gamma: self.gamma,
        }
    }
}

/// `-α (1 - p̃)^γ log p̃` for the probability of the true class.
pub fn focal_loss(p_true: f64, cfg: FocalConfig) -> f64 {
    focal_term(p_true, cfg.params())
}

/// Summed focal loss over the masked slots of a probability tensor. Slots whose
/// target is `true` score `p`, the rest score `1 - p`.
pub fn masked_focal_sum(
    g: &mut Graph,
    probs: Var,
    targets: Vec<bool>,
    mask: Vec<bool>,
    cfg: FocalConfig,
) -> Result<Var> {
    g.focal_sum(probs, targets, mask, cfg.params())
}

/// `ℒ_total = Σ_l ℒ^(l)` over scalar per-level losses.
pub fn total_loss(g: &mut Graph, levels: Vec<Var>) -> Result<Var> {
    if levels.is_empty() {
        return Err(Error::EmptyInput("total loss needs at least one level".into()));
    }
    g.sum_scalars(levels)
}
