//! Recall@K and mean Recall@K per interactivity type.
//!
//! A sample is one annotated frame. Per-frame recalls are averaged over the
//! frames of a video, and video scores are averaged uniformly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::{InteractivityType, PredicateVocab};

pub const REPORT_KS: [usize; 3] = [20, 50, 100];

/// `(subject, predicate, object)`; the object is `None` for single-actor types.
pub type TripletKey = (u64, usize, Option<u64>);

/// `|gold ∩ top-K| / |gold| × 100`, or `None` when there is no gold.
pub fn recall_at_k(gold: &[TripletKey], ranked: &[TripletKey], k: usize) -> Option<f64> {
    let gold: BTreeSet<&TripletKey> = gold.iter().collect();
    if gold.is_empty() {
        return None;
    }
    let top: BTreeSet<&TripletKey> = ranked.iter().take(k).collect();
    let hit = gold.iter().filter(|g| top.contains(*g)).count();
    Some(hit as f64 / gold.len() as f64 * 100.0)
}

/// Recall restricted to each predicate with at least one gold triplet.
pub fn per_predicate_recall(gold: &[TripletKey], ranked: &[TripletKey], k: usize) -> BTreeMap<usize, f64> {
    let preds: BTreeSet<usize> = gold.iter().map(|g| g.1).collect();
    preds
        .into_iter()
        .filter_map(|p| {
            let class_gold: Vec<TripletKey> = gold.iter().copied().filter(|g| g.1 == p).collect();
            recall_at_k(&class_gold, ranked, k).map(|r| (p, r))
        })
        .collect()
}

/// Uniform mean of [`per_predicate_recall`], or `None` when there is no gold.
pub fn mean_recall_at_k(gold: &[TripletKey], ranked: &[TripletKey], k: usize) -> Option<f64> {
    let per = per_predicate_recall(gold, ranked, k);
    if per.is_empty() {
        return None;
    }
    Some(per.values().sum::<f64>() / per.len() as f64)
}

/// Gold and ranked predictions of one frame for one type.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameSample {
    pub gold: Vec<TripletKey>,
    pub ranked: Vec<TripletKey>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallAtK {
    pub k: usize,
    pub recall: f64,
    pub mean_recall: f64,
    /// Predicate name → recall, for predicates with gold in the evaluated set.
    pub per_predicate: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeReport {
    #[serde(rename = "type")]
    pub ty: InteractivityType,
    pub at: Vec<RecallAtK>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub averaging: String,
    pub videos: usize,
    pub types: Vec<TypeReport>,
}

pub const AVERAGING_NOTE: &str =
    "per-frame recall, averaged over frames with gold within a video, then macro-averaged over videos";

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Aggregates one type's frames: `videos[v][f]` is frame `f` of video `v`.
pub fn aggregate(videos: &[Vec<FrameSample>], k: usize, names: &[String]) -> RecallAtK {
    let mut video_recalls = Vec::new();
    let mut class_video: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for frames in videos {
        let mut frame_recalls = Vec::new();
        let mut class_frames: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for s in frames {
            if let Some(r) = recall_at_k(&s.gold, &s.ranked, k) {
                frame_recalls.push(r);
            }
            for (p, r) in per_predicate_recall(&s.gold, &s.ranked, k) {
                class_frames.entry(p).or_default().push(r);
            }
        }
        if let Some(r) = mean(&frame_recalls) {
            video_recalls.push(r);
        }
        for (p, rs) in class_frames {
            class_video.entry(p).or_default().extend(mean(&rs));
        }
    }
    let per_class: BTreeMap<usize, f64> = class_video
        .into_iter()
        .filter_map(|(p, rs)| mean(&rs).map(|r| (p, r)))
        .collect();
    let mean_recall = mean(&per_class.values().copied().collect::<Vec<_>>()).unwrap_or(0.0);
    RecallAtK {
        k,
        recall: mean(&video_recalls).unwrap_or(0.0),
        mean_recall,
        per_predicate: per_class
            .into_iter()
            .map(|(p, r)| (names.get(p).cloned().unwrap_or_else(|| format!("#{p}")), r))
            .collect(),
    }
}

/// `samples[ty][v][f]`: ranked lists must already be in ranking order.
pub fn evaluate(
    samples: &BTreeMap<InteractivityType, Vec<Vec<FrameSample>>>,
    vocab: &PredicateVocab,
    ks: &[usize],
) -> EvalReport {
    let videos = samples.values().map(Vec::len).max().unwrap_or(0);
    let types = InteractivityType::ALL
        .iter()
        .filter_map(|&ty| {
            samples.get(&ty).map(|v| TypeReport {
                ty,
                at: ks.iter().map(|&k| aggregate(v, k, vocab.names(ty))).collect(),
            })
        })
        .collect();
    EvalReport {
        averaging: AVERAGING_NOTE.to_string(),
        videos,
        types,
    }
}

impl EvalReport {
    pub fn get(&self, ty: InteractivityType, k: usize) -> Option<&RecallAtK> {
        self.types.iter().find(|t| t.ty == ty)?.at.iter().find(|a| a.k == k)
    }

    /// Fixed-width table, one row per type, `R/mR` per K.
    pub fn to_table(&self) -> String {
        let mut out = format!("# {}\n", self.averaging);
        let ks: Vec<usize> = self.types.first().map(|t| t.at.iter().map(|a| a.k).collect()).unwrap_or_default();
        let _ = write!(out, "{:<12}", "Type");
        for k in &ks {
            let _ = write!(out, "  {:>13}", format!("R/mR@{k}"));
        }
        out.push('\n');
        for t in &self.types {
            let _ = write!(out, "{:<12}", t.ty.title());
            for a in &t.at {
                let _ = write!(out, "  {:>13}", format!("{:.2}/{:.2}", a.recall, a.mean_recall));
            }
            out.push('\n');
        }
        out
    }
}
