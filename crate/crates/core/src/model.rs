//! The assembled model: hierarchical aggregation, per-track temporal
//! refinement and the gated scene graph head, trained with focal loss under
//! per-level deep supervision.
//!
//! All frames of all videos are stacked into one instance matrix. Frames are
//! attention blocks for the hierarchy; tracks (keyed by video and track id)
//! are the sequences for temporal refinement. Hierarchy level `l` supplies
//! the layer representation `R_a^l`, and its track-refined features supply
//! `R_z`, so the head can be re-run on every level.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::ops::Range;

use serde::Serialize;

use crate::dataio::{AnnotationRecord, InteractivityType, PredicateVocab};
use crate::error::{Error, Result};
use crate::features::VideoFeatures;
use crate::gradcheck::{check_parameters, ParamCheck};
use crate::graph::{Graph, Var};
use crate::head::{assemble_graph, fuse, gated, node_attribute_scores, pair_representation, Candidate, Mlp, SceneGraphPrediction};
use crate::hier::{run_hierarchy_blocks, HierarchyConfig, HierarchyParams};
use crate::loss::{masked_focal_sum, total_loss, FocalConfig};
use crate::metrics::{evaluate, EvalReport, FrameSample, TripletKey};
use crate::param::{Init, ParamId, ParamStore};
use crate::temporal::{refine_tracks, CyclicConfig, TemporalParams, TrackRows};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d0: usize,
    pub hierarchy: HierarchyConfig,
    pub temporal: CyclicConfig,
    /// Projection width `m` of the relation head.
    pub head_width: usize,
    pub focal: FocalConfig,
}

impl ModelConfig {
    pub fn new(d0: usize) -> Self {
        Self {
            d0,
            hierarchy: HierarchyConfig::uniform(4, d0, 1.0),
            temporal: CyclicConfig::new(d0),
            head_width: 32,
            focal: FocalConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hierarchy.validate()?;
        self.temporal.validate()?;
        self.focal.validate()?;
        if self.d0 == 0 || self.head_width == 0 {
            return Err(Error::InvalidConfig("d0 and head width must be ≥ 1".into()));
        }
        if self.hierarchy.dims.iter().any(|&d| d != self.d0) {
            return Err(Error::InvalidConfig(format!(
                "every hierarchy level must keep width d0 = {}, got {:?}",
                self.d0, self.hierarchy.dims
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: PredicateVocab,
    hier: HierarchyParams,
    temporal: TemporalParams,
    /// `(W_S^k, W_O^k)` per active level.
    layer_proj: Vec<(ParamId, ParamId)>,
    z_proj: (ParamId, ParamId),
    w_g: ParamId,
    /// One relation MLP per double-actor type; `None` for an empty vocabulary.
    rel: Vec<Option<Mlp>>,
    /// One attribute MLP per single-actor type.
    node: Vec<Option<Mlp>>,
}

impl Model {
    /// Registers every parameter in `store` in a fixed order.
    pub fn new(config: ModelConfig, vocab: PredicateVocab, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        vocab.validate()?;
        let (d, m) = (config.d0, config.head_width);
        let hier = HierarchyParams::register(store, &config.hierarchy, d)?;
        let temporal = TemporalParams::register(store, &config.temporal, d)?;
        let proj = |store: &mut ParamStore, name: String| store.add(name, &[m, d], Init::Uniform { fan_in: d });
        let mut layer_proj = Vec::new();
        for k in 1..=config.hierarchy.active_levels() {
            layer_proj.push((
                proj(store, format!("head.layer.{k}.w_s"))?,
                proj(store, format!("head.layer.{k}.w_o"))?,
            ));
        }
        let z_proj = (proj(store, "head.z.w_s".into())?, proj(store, "head.z.w_o".into())?);
        let w_g = store.add("head.w_g", &[2 * m, 2 * m], Init::Uniform { fan_in: 2 * m })?;
        let mut mlps = |types: &[InteractivityType], d_in: usize| -> Result<Vec<Option<Mlp>>> {
            types
                .iter()
                .map(|&ty| match vocab.len(ty) {
                    0 => Ok(None),
                    c => Mlp::register(store, &format!("head.{ty}"), d_in, m, c).map(Some),
                })
                .collect()
        };
        let rel = mlps(&InteractivityType::DOUBLE, 2 * m)?;
        let node = mlps(&InteractivityType::SINGLE, d)?;
        Ok(Self {
            config,
            vocab,
            hier,
            temporal,
            layer_proj,
            z_proj,
            w_g,
            rel,
            node,
        })
    }

    pub fn active_levels(&self) -> usize {
        self.layer_proj.len()
    }
}

/// Features and gold annotations of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoData {
    pub features: VideoFeatures,
    pub annotations: Vec<AnnotationRecord>,
}

/// One frame of the stacked batch.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRef {
    pub video: usize,
    pub frame: usize,
    pub rows: Range<usize>,
    pub pairs: Range<usize>,
    /// Gold triplets per type; `None` when the frame carries no annotation.
    pub gold: Option<BTreeMap<InteractivityType, Vec<TripletKey>>>,
}

/// Binary targets and mask over a `[slots × classes]` score tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Targets {
    pub targets: Vec<bool>,
    pub mask: Vec<bool>,
}

/// Every video stacked into one instance matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub video_ids: Vec<String>,
    pub input: Tensor,
    pub row_track: Vec<u64>,
    /// Index into `tracks` for each row.
    pub row_track_index: Vec<usize>,
    pub frames: Vec<FrameRef>,
    pub tracks: Vec<TrackRows>,
    /// Ordered off-diagonal pairs of rows, grouped by frame.
    pub pairs: Vec<(usize, usize)>,
    pub node_targets: BTreeMap<InteractivityType, Targets>,
    pub edge_targets: BTreeMap<InteractivityType, Targets>,
}

fn predicate_ids(vocab: &PredicateVocab, ty: InteractivityType, names: &[String], line: usize) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            vocab.id(ty, n).ok_or_else(|| Error::UnknownPredicate {
                line,
                kind: ty.as_str(),
                name: n.clone(),
            })
        })
        .collect()
}

impl Batch {
    pub fn new(videos: &[VideoData], vocab: &PredicateVocab) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::EmptyInput("no videos to batch".into()));
        }
        let d0 = videos[0].features.d0;
        let mut data = Vec::new();
        let mut row_track = Vec::new();
        let mut frames = Vec::new();
        let mut pairs = Vec::new();
        let mut track_index: BTreeMap<(usize, u64), usize> = BTreeMap::new();
        let mut tracks: Vec<TrackRows> = Vec::new();
        let mut row_track_index = Vec::new();
        let mut node_targets: BTreeMap<_, Targets> =
            InteractivityType::SINGLE.iter().map(|&t| (t, Targets::default())).collect();
        let mut edge_targets: BTreeMap<_, Targets> =
            InteractivityType::DOUBLE.iter().map(|&t| (t, Targets::default())).collect();

        for (vi, video) in videos.iter().enumerate() {
            if video.features.d0 != d0 {
                return Err(Error::FeatureDimMismatch {
                    expected: d0,
                    found: video.features.d0,
                });
            }
            let records: HashMap<usize, &AnnotationRecord> =
                video.annotations.iter().map(|r| (r.frame, r)).collect();
            for frame in &video.features.frames {
                let start = row_track.len();
                let pair_start = pairs.len();
                let record = records.get(&frame.frame_index).copied();
                // Line numbers are unknown here; report the frame index instead.
                let line = frame.frame_index;
                for inst in &frame.instances {
                    let row = row_track.len();
                    data.extend_from_slice(&inst.embedding);
                    row_track.push(inst.track_id);
                    let ti = *track_index.entry((vi, inst.track_id)).or_insert_with(|| {
                        tracks.push(TrackRows {
                            track_id: inst.track_id,
                            rows: Vec::new(),
                        });
                        tracks.len() - 1
                    });
                    tracks[ti].rows.push(row);
                    row_track_index.push(ti);

                    let node = record.and_then(|r| r.nodes.iter().find(|n| n.track == inst.track_id));
                    for &ty in &InteractivityType::SINGLE {
                        let c = vocab.len(ty);
                        let gold = match node {
                            Some(n) => predicate_ids(vocab, ty, n.predicates(ty), line)?,
                            None => Vec::new(),
                        };
                        let t = node_targets.get_mut(&ty).expect("single type");
                        t.targets.extend((0..c).map(|p| gold.contains(&p)));
                        t.mask.extend(std::iter::repeat(node.is_some()).take(c));
                    }
                }
                let rows = start..row_track.len();
                for i in rows.clone() {
                    for j in rows.clone().filter(|&j| j != i) {
                        pairs.push((i, j));
                        let edge = record.and_then(|r| {
                            r.edges
                                .iter()
                                .find(|e| e.sub == row_track[i] && e.obj == row_track[j])
                        });
                        for &ty in &InteractivityType::DOUBLE {
                            let c = vocab.len(ty);
                            let gold = match edge {
                                Some(e) => predicate_ids(vocab, ty, e.predicates(ty), line)?,
                                None => Vec::new(),
                            };
                            let t = edge_targets.get_mut(&ty).expect("double type");
                            t.targets.extend((0..c).map(|p| gold.contains(&p)));
                            t.mask.extend(std::iter::repeat(record.is_some()).take(c));
                        }
                    }
                }
                let gold = record.map(|r| gold_triplets(r, vocab)).transpose()?;
                frames.push(FrameRef {
                    video: vi,
                    frame: frame.frame_index,
                    rows,
                    pairs: pair_start..pairs.len(),
                    gold,
                });
            }
        }
        let n = row_track.len();
        Ok(Self {
            video_ids: videos.iter().map(|v| v.features.video.clone()).collect(),
            input: Tensor::new(vec![n, d0], data)?,
            row_track,
            row_track_index,
            frames,
            tracks,
            pairs,
            node_targets,
            edge_targets,
        })
    }

    pub fn blocks(&self) -> Vec<Range<usize>> {
        self.frames.iter().map(|f| f.rows.clone()).collect()
    }
}

/// Gold triplets of one annotated frame, per type.
pub fn gold_triplets(
    record: &AnnotationRecord,
    vocab: &PredicateVocab,
) -> Result<BTreeMap<InteractivityType, Vec<TripletKey>>> {
    let mut out: BTreeMap<InteractivityType, Vec<TripletKey>> =
        InteractivityType::ALL.iter().map(|&t| (t, Vec::new())).collect();
    for n in &record.nodes {
        for &ty in &InteractivityType::SINGLE {
            for p in predicate_ids(vocab, ty, n.predicates(ty), record.frame)? {
                out.get_mut(&ty).expect("type").push((n.track, p, None));
            }
        }
    }
    for e in &record.edges {
        for &ty in &InteractivityType::DOUBLE {
            for p in predicate_ids(vocab, ty, e.predicates(ty), record.frame)? {
                out.get_mut(&ty).expect("type").push((e.sub, p, Some(e.obj)));
            }
        }
    }
    Ok(out)
}

/// Score tensors of one supervision level.
#[derive(Clone, Debug)]
pub struct LevelOutput {
    /// `[rows × C]` per single-actor type.
    pub node: BTreeMap<InteractivityType, Var>,
    /// `[pairs × C]` per double-actor type.
    pub edge: BTreeMap<InteractivityType, Var>,
}

impl Model {
    /// Scores at every active level, shallowest first.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<Vec<LevelOutput>> {
        let input = g.input(batch.input.clone());
        let feats = run_hierarchy_blocks(g, store, &self.hier, input, &batch.blocks())?;
        let w_g = g.param(store, self.w_g);
        let (wsz, woz) = (g.param(store, self.z_proj.0), g.param(store, self.z_proj.1));
        let mut layers = Vec::new();
        let mut outs = Vec::new();
        for (k, &(ws, wo)) in self.layer_proj.iter().enumerate() {
            let f = feats[k + 1];
            let (ws, wo) = (g.param(store, ws), g.param(store, wo));
            let r_a = pair_representation(g, f, f, ws, wo, &batch.pairs)?;
            layers.push(gated(g, r_a, w_g)?);

            let refined = refine_tracks(g, store, &self.temporal, &self.config.temporal, f, &batch.tracks)?;
            let z = g.gather_rows(refined.summary, batch.row_track_index.clone())?;
            let r_z = pair_representation(g, z, z, wsz, woz, &batch.pairs)?;
            let fused = fuse(g, &layers, r_z, w_g)?;

            let mut edge = BTreeMap::new();
            for (&ty, mlp) in InteractivityType::DOUBLE.iter().zip(&self.rel) {
                if let Some(mlp) = mlp {
                    let logits = mlp.logits(g, store, fused)?;
                    edge.insert(ty, g.sigmoid(logits));
                }
            }
            let mut node = BTreeMap::new();
            for (&ty, mlp) in InteractivityType::SINGLE.iter().zip(&self.node) {
                if let Some(mlp) = mlp {
                    let per_track = node_attribute_scores(g, store, refined.summary, mlp)?;
                    node.insert(ty, g.gather_rows(per_track, batch.row_track_index.clone())?);
                }
            }
            outs.push(LevelOutput { node, edge });
        }
        Ok(outs)
    }

    /// `ℒ_total` and the per-level losses `ℒ^(l)`, each a mean over masked slots.
    pub fn loss(&self, g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<(Var, Vec<Var>)> {
        let outs = self.forward(g, store, batch)?;
        let cfg = self.config.focal;
        let slots: usize = batch
            .node_targets
            .iter()
            .filter(|(ty, _)| self.vocab.len(**ty) > 0)
            .chain(batch.edge_targets.iter().filter(|(ty, _)| self.vocab.len(**ty) > 0))
            .map(|(_, t)| t.mask.iter().filter(|&&m| m).count())
            .sum();
        if slots == 0 {
            return Err(Error::EmptyInput("batch has no annotated slots".into()));
        }
        let mut levels = Vec::with_capacity(outs.len());
        for out in &outs {
            let mut sums = Vec::new();
            for (ty, &p) in out.node.iter().chain(&out.edge) {
                let t = batch
                    .node_targets
                    .get(ty)
                    .or_else(|| batch.edge_targets.get(ty))
                    .expect("targets for every type");
                sums.push(masked_focal_sum(g, p, t.targets.clone(), t.mask.clone(), cfg)?);
            }
            let sum = g.sum_scalars(sums)?;
            levels.push(g.scale(sum, 1.0 / slots as f64));
        }
        let total = total_loss(g, levels.clone())?;
        Ok((total, levels))
    }

    pub fn loss_value(&self, store: &ParamStore, batch: &Batch) -> Result<f64> {
        let mut g = Graph::new();
        let (total, _) = self.loss(&mut g, store, batch)?;
        Ok(g.value(total).data()[0])
    }

    /// Loss and parameter gradients, accumulated into `store`.
    pub fn loss_and_grad(&self, store: &mut ParamStore, batch: &Batch) -> Result<f64> {
        let mut g = Graph::new();
        let (total, _) = self.loss(&mut g, store, batch)?;
        let grads = g.backward(total)?;
        g.accumulate_param_grads(&grads, store);
        Ok(g.value(total).data()[0])
    }

    /// Ranked scene graphs per frame from the deepest active level.
    pub fn predict(&self, store: &ParamStore, batch: &Batch, k: usize) -> Result<Vec<FramePrediction>> {
        let mut g = Graph::new();
        let outs = self.forward(&mut g, store, batch)?;
        let last = outs.last().ok_or_else(|| Error::EmptyInput("no active level".into()))?;
        Ok(batch
            .frames
            .iter()
            .map(|f| {
                let mut candidates = BTreeMap::new();
                for (&ty, &v) in &last.node {
                    let t = g.value(v);
                    let cands = f
                        .rows
                        .clone()
                        .map(|r| Candidate {
                            sub: batch.row_track[r],
                            obj: None,
                            scores: t.row(r).to_vec(),
                        })
                        .collect();
                    candidates.insert(ty, cands);
                }
                for (&ty, &v) in &last.edge {
                    let t = g.value(v);
                    let cands = f
                        .pairs
                        .clone()
                        .map(|p| {
                            let (i, j) = batch.pairs[p];
                            Candidate {
                                sub: batch.row_track[i],
                                obj: Some(batch.row_track[j]),
                                scores: t.row(p).to_vec(),
                            }
                        })
                        .collect();
                    candidates.insert(ty, cands);
                }
                FramePrediction {
                    video: batch.video_ids[f.video].clone(),
                    graph: assemble_graph(f.frame, candidates, k),
                }
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FramePrediction {
    pub video: String,
    pub graph: SceneGraphPrediction,
}

/// Recall report over the batch's annotated frames.
pub fn evaluate_batch(batch: &Batch, preds: &[FramePrediction], vocab: &PredicateVocab, ks: &[usize]) -> EvalReport {
    let mut samples: BTreeMap<InteractivityType, Vec<Vec<FrameSample>>> = InteractivityType::ALL
        .iter()
        .filter(|&&ty| vocab.len(ty) > 0)
        .map(|&ty| (ty, vec![Vec::new(); batch.video_ids.len()]))
        .collect();
    for (f, pred) in batch.frames.iter().zip(preds) {
        let Some(gold) = &f.gold else { continue };
        for (ty, videos) in samples.iter_mut() {
            let ranked = pred
                .graph
                .ranked
                .get(ty)
                .map(|r| r.iter().map(|t| (t.sub, t.pred, t.obj)).collect())
                .unwrap_or_default();
            videos[f.video].push(FrameSample {
                gold: gold.get(ty).cloned().unwrap_or_default(),
                ranked,
            });
        }
    }
    evaluate(&samples, vocab, ks)
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    video: &'a str,
    frame: usize,
    #[serde(rename = "type")]
    ty: InteractivityType,
    sub: u64,
    obj: Option<u64>,
    pred: &'a str,
    score: f64,
}

/// One JSON line per ranked triplet, in ranking order.
pub fn predictions_jsonl(preds: &[FramePrediction], vocab: &PredicateVocab) -> String {
    let mut out = String::new();
    for p in preds {
        for (&ty, ranked) in &p.graph.ranked {
            for t in ranked {
                let line = PredictionLine {
                    video: &p.video,
                    frame: p.graph.frame,
                    ty,
                    sub: t.sub,
                    obj: t.obj,
                    pred: &vocab.names(ty)[t.pred],
                    score: t.score,
                };
                let _ = writeln!(out, "{}", serde_json::to_string(&line).expect("plain struct"));
            }
        }
    }
    out
}

/// Full-batch SGD. Returns `steps + 1` losses: one before each update and
/// the loss after the last update.
pub fn train(
    model: &Model,
    store: &mut ParamStore,
    batch: &Batch,
    steps: usize,
    lr: f64,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        store.zero_grad();
        let loss = if step < steps {
            model.loss_and_grad(store, batch)?
        } else {
            model.loss_value(store, batch)?
        };
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        on_step(step, loss);
        losses.push(loss);
        if step < steps {
            store.sgd_step(lr);
        }
    }
    store.zero_grad();
    Ok(losses)
}

/// Compares every parameter's reverse-mode gradient with central differences.
/// `perturb` is added to every analytic gradient entry, a negative control for
/// the checker itself.
pub fn check_model_gradients(
    model: &Model,
    store: &ParamStore,
    batch: &Batch,
    h: f64,
    perturb: f64,
) -> Result<Vec<ParamCheck>> {
    check_parameters(
        store,
        |s| model.loss_value(s, batch),
        |s| {
            model.loss_and_grad(s, batch)?;
            if perturb != 0.0 {
                for id in s.ids().collect::<Vec<_>>() {
                    let n = s.get(id).value.len();
                    s.get_mut(id).value.accumulate_grad(&vec![perturb; n]);
                }
            }
            Ok(())
        },
        h,
    )
}
