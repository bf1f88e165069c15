//! Annotation schema for the five interactivity types, its validator,
//! JSON Lines reader/writer and video-level dataset splits.
//!
//! File layout: a mandatory header line `{"schema-version": 1, "vocab": {...}}`
//! (the vocabulary is optional; when absent it is built in order of first
//! appearance), followed by one [`AnnotationRecord`] per line, one line per
//! annotated frame.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractivityType {
    Appearance,
    Situation,
    Position,
    Interaction,
    Relation,
}

impl InteractivityType {
    pub const ALL: [InteractivityType; 5] = [
        Self::Appearance,
        Self::Situation,
        Self::Position,
        Self::Interaction,
        Self::Relation,
    ];
    pub const SINGLE: [InteractivityType; 2] = [Self::Appearance, Self::Situation];
    pub const DOUBLE: [InteractivityType; 3] = [Self::Position, Self::Interaction, Self::Relation];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Appearance => "appearance",
            Self::Situation => "situation",
            Self::Position => "position",
            Self::Interaction => "interaction",
            Self::Relation => "relation",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Self::Appearance => "Appearance",
            Self::Situation => "Situation",
            Self::Position => "Position",
            Self::Interaction => "Interaction",
            Self::Relation => "Relation",
        }
    }

    pub fn is_single_actor(self) -> bool {
        matches!(self, Self::Appearance | Self::Situation)
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for InteractivityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeAnnotation {
    pub track: u64,
    pub bbox: [f64; 4],
    pub appearance: Vec<String>,
    pub situation: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeAnnotation {
    pub sub: u64,
    pub obj: u64,
    #[serde(default)]
    pub position: Vec<String>,
    #[serde(default)]
    pub interaction: Vec<String>,
    #[serde(default)]
    pub relation: Vec<String>,
}

impl EdgeAnnotation {
    pub fn predicates(&self, ty: InteractivityType) -> &[String] {
        match ty {
            InteractivityType::Position => &self.position,
            InteractivityType::Interaction => &self.interaction,
            InteractivityType::Relation => &self.relation,
            _ => &[],
        }
    }
}

impl NodeAnnotation {
    pub fn predicates(&self, ty: InteractivityType) -> &[String] {
        match ty {
            InteractivityType::Appearance => &self.appearance,
            InteractivityType::Situation => &self.situation,
            _ => &[],
        }
    }
}

/// Gold annotations of one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub video: String,
    pub frame: usize,
    pub nodes: Vec<NodeAnnotation>,
    #[serde(default)]
    pub edges: Vec<EdgeAnnotation>,
}

/// Per-type ordered predicate names; a predicate's id is its index.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateVocab {
    pub appearance: Vec<String>,
    pub situation: Vec<String>,
    pub position: Vec<String>,
    pub interaction: Vec<String>,
    pub relation: Vec<String>,
}

impl PredicateVocab {
    pub fn names(&self, ty: InteractivityType) -> &[String] {
        match ty {
            InteractivityType::Appearance => &self.appearance,
            InteractivityType::Situation => &self.situation,
            InteractivityType::Position => &self.position,
            InteractivityType::Interaction => &self.interaction,
            InteractivityType::Relation => &self.relation,
        }
    }

    fn names_mut(&mut self, ty: InteractivityType) -> &mut Vec<String> {
        match ty {
            InteractivityType::Appearance => &mut self.appearance,
            InteractivityType::Situation => &mut self.situation,
            InteractivityType::Position => &mut self.position,
            InteractivityType::Interaction => &mut self.interaction,
            InteractivityType::Relation => &mut self.relation,
        }
    }

    pub fn len(&self, ty: InteractivityType) -> usize {
        self.names(ty).len()
    }

    pub fn id(&self, ty: InteractivityType, name: &str) -> Option<usize> {
        self.names(ty).iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        for ty in InteractivityType::ALL {
            let mut seen = HashSet::new();
            for n in self.names(ty) {
                if !seen.insert(n) {
                    return Err(Error::InvalidVocab(format!("duplicate {ty} predicate {n:?}")));
                }
            }
        }
        Ok(())
    }

    fn observe(&mut self, ty: InteractivityType, name: &str) {
        if self.id(ty, name).is_none() {
            self.names_mut(ty).push(name.to_owned());
        }
    }

    /// Vocabulary built from predicate names in order of first appearance.
    pub fn from_records(records: &[AnnotationRecord]) -> Self {
        let mut v = Self::default();
        for r in records {
            for n in &r.nodes {
                for ty in InteractivityType::SINGLE {
                    n.predicates(ty).iter().for_each(|p| v.observe(ty, p));
                }
            }
            for e in &r.edges {
                for ty in InteractivityType::DOUBLE {
                    e.predicates(ty).iter().for_each(|p| v.observe(ty, p));
                }
            }
        }
        v
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(rename = "schema-version")]
    schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab: Option<PredicateVocab>,
}

/// Checks one record's invariants. `line` is 1-based and only used in errors.
pub fn validate_record(rec: &AnnotationRecord, vocab: Option<&PredicateVocab>, line: usize) -> Result<()> {
    let mut tracks = HashSet::new();
    for n in &rec.nodes {
        if !tracks.insert(n.track) {
            return Err(Error::DuplicateTrack {
                line,
                track: n.track,
                frame: rec.frame,
            });
        }
        let [x, y, w, h] = n.bbox;
        let ok = [x, y, w, h].iter().all(|v| v.is_finite())
            && x >= 0.0
            && y >= 0.0
            && w >= 0.0
            && h >= 0.0
            && x + w <= 1.0 + 1e-12
            && y + h <= 1.0 + 1e-12;
        if !ok {
            return Err(Error::InvalidBox { line, bbox: n.bbox });
        }
        if let Some(v) = vocab {
            for ty in InteractivityType::SINGLE {
                check_names(v, ty, n.predicates(ty), line)?;
            }
        }
    }
    for e in &rec.edges {
        if e.sub == e.obj {
            return Err(Error::SelfEdge { line, track: e.sub });
        }
        for t in [e.sub, e.obj] {
            if !tracks.contains(&t) {
                return Err(Error::MissingTrack {
                    line,
                    sub: e.sub,
                    obj: e.obj,
                    missing: t,
                });
            }
        }
        if e.position.is_empty() && (!e.interaction.is_empty() || !e.relation.is_empty()) {
            return Err(Error::InteractionWithoutPosition {
                line,
                sub: e.sub,
                obj: e.obj,
            });
        }
        if let Some(v) = vocab {
            for ty in InteractivityType::DOUBLE {
                check_names(v, ty, e.predicates(ty), line)?;
            }
        }
    }
    Ok(())
}

fn check_names(v: &PredicateVocab, ty: InteractivityType, names: &[String], line: usize) -> Result<()> {
    match names.iter().find(|n| v.id(ty, n).is_none()) {
        Some(n) => Err(Error::UnknownPredicate {
            line,
            kind: ty.as_str(),
            name: n.clone(),
        }),
        None => Ok(()),
    }
}

/// Parses and validates annotation JSON Lines text.
pub fn parse_annotations_str(text: &str) -> Result<(Vec<AnnotationRecord>, PredicateVocab)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, htext) = lines.next().ok_or(Error::MissingSchemaHeader { line: 1 })?;
    let header: Header =
        serde_json::from_str(htext).map_err(|_| Error::MissingSchemaHeader { line: hline })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::MissingSchemaHeader { line: hline });
    }
    if let Some(v) = &header.vocab {
        v.validate()?;
    }

    let mut records = Vec::new();
    for (line, l) in lines {
        let rec: AnnotationRecord = serde_json::from_str(l).map_err(|e| Error::MalformedJson {
            line,
            message: e.to_string(),
        })?;
        validate_record(&rec, header.vocab.as_ref(), line)?;
        records.push(rec);
    }
    check_frame_order(&records)?;
    let vocab = header.vocab.unwrap_or_else(|| PredicateVocab::from_records(&records));
    Ok((records, vocab))
}

/// Records of a video must appear as frames `0, 1, 2, …` on consecutive lines.
fn check_frame_order(records: &[AnnotationRecord]) -> Result<()> {
    let mut next: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        let expected = next.entry(&r.video).or_insert(0);
        if r.frame != *expected {
            return Err(Error::NonContiguousFrames {
                video: r.video.clone(),
                expected: *expected,
                found: r.frame,
            });
        }
        *expected += 1;
    }
    Ok(())
}

pub fn parse_annotations(path: &Path) -> Result<(Vec<AnnotationRecord>, PredicateVocab)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations_str(&text)
}

pub fn write_annotations_string(records: &[AnnotationRecord], vocab: &PredicateVocab) -> Result<String> {
    let header = Header {
        schema_version: SCHEMA_VERSION,
        vocab: Some(vocab.clone()),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Numeric(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord], vocab: &PredicateVocab) -> Result<()> {
    let text = write_annotations_string(records, vocab)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Video ids in each split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles video ids with `seed` and apportions them by largest remainder.
pub fn split_dataset(records: &[AnnotationRecord], seed: u64, fractions: [f64; 3]) -> Result<Split> {
    let videos: BTreeSet<&str> = records.iter().map(|r| r.video.as_str()).collect();
    if videos.is_empty() {
        return Err(Error::EmptyInput("no videos to split".into()));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidConfig(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let n = videos.len();
    let mut ids: Vec<String> = videos.into_iter().map(str::to_owned).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    let test = ids.split_off(counts[0] + counts[1]);
    let val = ids.split_off(counts[0]);
    Ok(Split {
        train: ids,
        val,
        test,
    })
}
