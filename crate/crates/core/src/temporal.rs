//! Per-track temporal refinement with windowed cyclic attention.
//!
//! A track's top-level features are mean-pooled into `T'` steps, projected to
//! queries, keys and values, and attended over a window of `w` steps. The
//! cyclic kind looks forward and wraps modulo `T'`:
//!
//! ```text
//! CA_t = Σ_{τ<w} α_{t,τ} V_{(t+τ) mod T'},  α_{t,·} = softmax_τ( Q_t · K_{(t+τ) mod T'} / √d_a )
//! ```
//!
//! The standard kind attends to `max(0, t-w+1) ..= t` without wraparound.
//! With `w = T'` both reduce to dense self-attention. The attention output goes
//! through one post-norm encoder block; the track summary is the mean of the
//! refined steps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{Init, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Standard,
    Cyclic,
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::Standard => "standard",
            AttentionKind::Cyclic => "cyclic",
        })
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "cyclic" => Ok(Self::Cyclic),
            _ => Err(Error::InvalidConfig(format!("unknown attention kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CyclicConfig {
    pub window_frac: f64,
    pub kind: AttentionKind,
    /// Attention width; defaults to the feature width.
    pub d_a: usize,
    /// Frames per pooled step.
    pub pool: usize,
    /// Number of encoder blocks.
    pub depth: usize,
    pub ln_eps: f64,
}

impl CyclicConfig {
    pub fn new(d: usize) -> Self {
        Self {
            window_frac: 1.0,
            kind: AttentionKind::Cyclic,
            d_a: d,
            pool: 1,
            depth: 1,
            ln_eps: crate::ops::DEFAULT_LN_EPS,
        }
    }

    /// `max(1, round(window_frac × T'))`, capped at `T'`.
    pub fn window(&self, steps: usize) -> usize {
        ((self.window_frac * steps as f64).round() as usize).clamp(1, steps.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_frac > 0.0 && self.window_frac <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "window fraction {} outside (0, 1]",
                self.window_frac
            )));
        }
        if self.pool == 0 || self.d_a == 0 || self.depth == 0 {
            return Err(Error::InvalidConfig(
                "pool length, attention width and depth must be ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Refined sequence of one track.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackSequence {
    pub track_id: u64,
    /// Pooled inputs `X`, `[T' × d]`.
    pub steps: Tensor,
    /// Encoder output per step, `[T' × d]`.
    pub refined: Tensor,
    /// Mean of `refined` over steps.
    pub summary: Vec<f64>,
}

/// Groups of consecutive rows that are averaged into one pooled step.
pub fn pool_groups(present: usize, pool: usize) -> Result<Vec<Vec<usize>>> {
    if pool == 0 {
        return Err(Error::InvalidConfig("pool length must be ≥ 1".into()));
    }
    Ok((0..present)
        .collect::<Vec<_>>()
        .chunks(pool)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Mean pooling over non-overlapping windows of `pool` rows; `T' = ceil(rows / pool)`.
pub fn temporal_pool(frames: &Tensor, pool: usize) -> Result<Tensor> {
    let groups = pool_groups(frames.rows(), pool)?;
    if groups.is_empty() {
        return Err(Error::EmptyInput("track has no frames to pool".into()));
    }
    let mut g = Graph::new();
    let x = g.input(frames.clone());
    let out = g.group_mean(x, groups)?;
    Ok(g.value(out).clone())
}

/// Positions each step attends to. Cyclic windows wrap modulo `steps`; standard
/// windows are the `window` positions ending at `t`, clamped to start at 0.
pub fn attention_index(kind: AttentionKind, steps: usize, window: usize) -> Result<Vec<Vec<usize>>> {
    if window == 0 || window > steps {
        return Err(Error::InvalidConfig(format!(
            "window {window} outside 1..={steps}"
        )));
    }
    Ok((0..steps)
        .map(|t| match kind {
            AttentionKind::Cyclic => (0..window).map(|tau| (t + tau) % steps).collect(),
            AttentionKind::Standard => {
                let start = (t + 1).saturating_sub(window);
                (start..start + window).collect()
            }
        })
        .collect())
}

pub fn project_qkv(g: &mut Graph, x: Var, wq: Var, wk: Var, wv: Var) -> Result<(Var, Var, Var)> {
    Ok((g.linear(x, wq, None)?, g.linear(x, wk, None)?, g.linear(x, wv, None)?))
}

/// Windowed attention over one `[T' × d_a]` sequence.
pub fn cyclic_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    window: usize,
    kind: AttentionKind,
) -> Result<Var> {
    let steps = g.value(q).rows();
    let index = attention_index(kind, steps, window)?;
    let scale = 1.0 / (g.value(q).cols() as f64).sqrt();
    g.attend(q, k, v, index, scale)
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct TemporalParams {
    pub blocks: Vec<EncoderParams>,
}

impl TemporalParams {
    pub fn register(store: &mut ParamStore, cfg: &CyclicConfig, d: usize) -> Result<Self> {
        cfg.validate()?;
        let da = cfg.d_a;
        let blocks = (0..cfg.depth)
            .map(|i| {
                let p = |n: &str| format!("temporal.{i}.{n}");
                let u = |fan_in| Init::Uniform { fan_in };
                Ok(EncoderParams {
                    wq: store.add(p("wq"), &[da, d], u(d))?,
                    wk: store.add(p("wk"), &[da, d], u(d))?,
                    wv: store.add(p("wv"), &[da, d], u(d))?,
                    out_w: store.add(p("out.weight"), &[d, da], u(da))?,
                    out_b: store.add(p("out.bias"), &[d], u(da))?,
                    ln1_gain: store.add(p("ln1.gain"), &[d], Init::Const(1.0))?,
                    ln1_bias: store.add(p("ln1.bias"), &[d], Init::Const(0.0))?,
                    ff1_w: store.add(p("ff1.weight"), &[4 * d, d], u(d))?,
                    ff1_b: store.add(p("ff1.bias"), &[4 * d], u(d))?,
                    ff2_w: store.add(p("ff2.weight"), &[d, 4 * d], u(4 * d))?,
                    ff2_b: store.add(p("ff2.bias"), &[d], u(4 * d))?,
                    ln2_gain: store.add(p("ln2.gain"), &[d], Init::Const(1.0))?,
                    ln2_bias: store.add(p("ln2.bias"), &[d], Init::Const(0.0))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }
}

/// Encoder block parameters bound into a graph.
pub struct EncoderVars {
    pub out_w: Var,
    pub out_b: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub ff1_w: Var,
    pub ff1_b: Var,
    pub ff2_w: Var,
    pub ff2_b: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub eps: f64,
}

/// `Y = LN(X + proj(attn))`, then `LN(Y + FFN(Y))` with a `4d` ReLU hidden layer.
pub fn encoder_block(g: &mut Graph, x: Var, attn_out: Var, p: &EncoderVars) -> Result<Var> {
    let projected = g.linear(attn_out, p.out_w, Some(p.out_b))?;
    let res1 = g.add(x, projected)?;
    let y = g.layer_norm(res1, p.ln1_gain, p.ln1_bias, p.eps)?;
    let hidden = g.linear(y, p.ff1_w, Some(p.ff1_b))?;
    let hidden = g.relu(hidden);
    let ff = g.linear(hidden, p.ff2_w, Some(p.ff2_b))?;
    let res2 = g.add(y, ff)?;
    g.layer_norm(res2, p.ln2_gain, p.ln2_bias, p.eps)
}

/// A track's appearances as row indices into a stacked feature matrix, in time order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrackRows {
    pub track_id: u64,
    pub rows: Vec<usize>,
}

/// Graph handles produced by [`refine_tracks`]. Tracks are stacked in input order.
pub struct RefinedTracks {
    pub steps: Var,
    pub refined: Var,
    /// `[n_tracks × d]` summaries.
    pub summary: Var,
    /// Row range of each track inside `steps`/`refined`.
    pub spans: Vec<std::ops::Range<usize>>,
}

/// Refines every track from a stacked `[rows × d]` level matrix.
/// All tracks are processed in one batch; attention never crosses tracks.
pub fn refine_tracks(
    g: &mut Graph,
    store: &ParamStore,
    params: &TemporalParams,
    cfg: &CyclicConfig,
    level: Var,
    tracks: &[TrackRows],
) -> Result<RefinedTracks> {
    let d = g.value(level).cols();
    let mut groups = Vec::new();
    let mut spans = Vec::with_capacity(tracks.len());
    for t in tracks {
        if t.rows.is_empty() {
            return Err(Error::EmptyTrack(t.track_id));
        }
        let start = groups.len();
        for chunk in t.rows.chunks(cfg.pool) {
            groups.push(chunk.to_vec());
        }
        spans.push(start..groups.len());
    }
    let steps = g.group_mean(level, groups)?;

    let mut index = Vec::new();
    for span in &spans {
        let local = attention_index(cfg.kind, span.len(), cfg.window(span.len()))?;
        index.extend(
            local
                .into_iter()
                .map(|pos| pos.into_iter().map(|p| p + span.start).collect::<Vec<_>>()),
        );
    }

    let mut x = steps;
    for block in &params.blocks {
        let (wq, wk, wv) = (
            g.param(store, block.wq),
            g.param(store, block.wk),
            g.param(store, block.wv),
        );
        let (q, k, v) = project_qkv(g, x, wq, wk, wv)?;
        let scale = 1.0 / (cfg.d_a as f64).sqrt();
        let attn = g.attend(q, k, v, index.clone(), scale)?;
        let vars = EncoderVars {
            out_w: g.param(store, block.out_w),
            out_b: g.param(store, block.out_b),
            ln1_gain: g.param(store, block.ln1_gain),
            ln1_bias: g.param(store, block.ln1_bias),
            ff1_w: g.param(store, block.ff1_w),
            ff1_b: g.param(store, block.ff1_b),
            ff2_w: g.param(store, block.ff2_w),
            ff2_b: g.param(store, block.ff2_b),
            ln2_gain: g.param(store, block.ln2_gain),
            ln2_bias: g.param(store, block.ln2_bias),
            eps: cfg.ln_eps,
        };
        x = encoder_block(g, x, attn, &vars)?;
    }
    let summary_groups: Vec<Vec<usize>> = spans.iter().map(|s| s.clone().collect()).collect();
    let summary = if summary_groups.is_empty() {
        let empty = Tensor::zeros(&[0, d]);
        g.input(empty)
    } else {
        g.group_mean(x, summary_groups)?
    };
    Ok(RefinedTracks {
        steps,
        refined: x,
        summary,
        spans,
    })
}

/// Value-level view of [`refine_tracks`] output.
pub fn track_sequences(g: &Graph, out: &RefinedTracks, tracks: &[TrackRows]) -> Vec<TrackSequence> {
    let slice = |v: Var, span: &std::ops::Range<usize>| {
        let t = g.value(v);
        let rows: Vec<Vec<f64>> = span.clone().map(|r| t.row(r).to_vec()).collect();
        Tensor::from_rows(&rows).expect("uniform rows")
    };
    tracks
        .iter()
        .zip(&out.spans)
        .enumerate()
        .map(|(i, (t, span))| TrackSequence {
            track_id: t.track_id,
            steps: slice(out.steps, span),
            refined: slice(out.refined, span),
            summary: g.value(out.summary).row(i).to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_examples() {
        let rows = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 7.0]]).unwrap();
        assert_eq!(temporal_pool(&rows, 1).unwrap(), rows);
        let p = temporal_pool(&rows, 2).unwrap();
        assert_eq!(p.shape(), &[2, 2]);
        assert_eq!(p.row(0), &[2.0, 3.0]);
        assert_eq!(p.row(1), &[5.0, 7.0]);
        assert!(temporal_pool(&rows, 0).is_err());
    }

    #[test]
    fn modular_index() {
        let idx = attention_index(AttentionKind::Cyclic, 5, 4).unwrap();
        assert_eq!(idx[4][3], 2);
        assert_eq!(idx[4], vec![4, 0, 1, 2]);
        let std = attention_index(AttentionKind::Standard, 5, 3).unwrap();
        assert_eq!(std[0], vec![0, 1, 2]);
        assert_eq!(std[1], vec![0, 1, 2]);
        assert_eq!(std[4], vec![2, 3, 4]);
        assert!(attention_index(AttentionKind::Cyclic, 3, 4).is_err());
        assert!(attention_index(AttentionKind::Cyclic, 3, 0).is_err());
    }

    #[test]
    fn effective_window() {
        let mut cfg = CyclicConfig::new(4);
        cfg.window_frac = 0.5;
        assert_eq!(cfg.window(6), 3);
        assert_eq!(cfg.window(1), 1);
        cfg.window_frac = 0.75;
        assert_eq!(cfg.window(8), 6);
        cfg.window_frac = 1.0;
        assert_eq!(cfg.window(7), 7);
    }

    #[test]
    fn single_step_returns_value() {
        for kind in [AttentionKind::Cyclic, AttentionKind::Standard] {
            let mut g = Graph::new();
            let q = g.input(Tensor::from_rows(&[vec![0.3, 0.1]]).unwrap());
            let k = g.input(Tensor::from_rows(&[vec![-2.0, 1.0]]).unwrap());
            let v = g.input(Tensor::from_rows(&[vec![4.0, -5.0]]).unwrap());
            let out = cyclic_attention(&mut g, q, k, v, 1, kind).unwrap();
            assert_eq!(g.value(out).data(), &[4.0, -5.0]);
        }
    }

    #[test]
    fn identity_projection_and_zero_input() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap());
        let id = g.input(Tensor::identity(2));
        let (q, _, _) = project_qkv(&mut g, x, id, id, id).unwrap();
        assert_eq!(g.value(q), g.value(x));

        let z = g.input(Tensor::zeros(&[3, 2]));
        let w = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let (q, k, v) = project_qkv(&mut g, z, w, w, w).unwrap();
        for t in [q, k, v] {
            assert!(g.value(t).data().iter().all(|&x| x == 0.0));
        }
    }
}
