//! Deterministic synthetic videos with gold annotations for all five
//! interactivity types.
//!
//! Objects live on four horizontal lanes. Every ordered pair gets exactly one
//! position predicate: same-lane pairs are `left of`/`right of`, cross-lane pairs
//! `above`/`below`. Embeddings are a fixed linear projection of the latent
//! attributes (class, colour, situation, box, role, frame phase) plus Gaussian
//! noise with σ = 0.1, so every gold predicate is recoverable from the features.

use std::f64::consts::TAU;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{AnnotationRecord, EdgeAnnotation, NodeAnnotation, PredicateVocab};
use crate::error::{Error, Result};
use crate::features::{FrameSet, ObjectInstance, VideoFeatures};

pub const NOISE_SIGMA: f64 = 0.1;
pub const DEFAULT_D0: usize = 64;

const CLASSES: [&str; 4] = ["car", "truck", "bus", "van"];
const COLORS: [&str; 4] = ["red", "blue", "white", "black"];
const SETTINGS: [&str; 2] = ["urban", "rural"];
const TIMES: [&str; 2] = ["day", "night"];
const POSITIONS: [&str; 4] = ["left of", "right of", "above", "below"];
const INTERACTIONS: [&str; 3] = ["chasing", "overtaking", "following"];
const RELATIONS: [&str; 2] = ["pursuing", "escorting"];

const LANES: [f64; 4] = [0.1, 0.3, 0.5, 0.7];
const SLOTS: [f64; 5] = [0.05, 0.25, 0.45, 0.65, 0.85];
const BOX_W: f64 = 0.1;
const BOX_H: f64 = 0.08;
const SAME_LANE: f64 = 0.05;
const PROJECTION_SEED: u64 = 0x5EED_F00D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Chase,
    Convoy,
    Static,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Chase, Scenario::Convoy, Scenario::Static];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Chase => "chase",
            Scenario::Convoy => "convoy",
            Scenario::Static => "static",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scenario {s:?}")))
    }
}

/// The fixed vocabulary every synthetic video draws from.
pub fn synth_vocab() -> PredicateVocab {
    let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    PredicateVocab {
        appearance: CLASSES.iter().chain(COLORS.iter()).map(|s| s.to_string()).collect(),
        situation: SETTINGS.iter().chain(TIMES.iter()).map(|s| s.to_string()).collect(),
        position: own(&POSITIONS),
        interaction: own(&INTERACTIONS),
        relation: own(&RELATIONS),
    }
}

/// Frame at which a chase turns into an overtake.
pub fn overtake_frame(frames: usize) -> usize {
    frames / 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Parked,
    Convoy,
    Chaser,
    Target,
}

impl Role {
    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug)]
struct Actor {
    track: u64,
    class: usize,
    color: usize,
    role: Role,
    lane: usize,
    x0: f64,
    speed: f64,
    /// Lane taken from `overtake_frame` on (chaser only).
    overtake_lane: Option<usize>,
}

impl Actor {
    fn bbox(&self, t: usize, frames: usize) -> [f64; 4] {
        let x = (self.x0 + self.speed * t as f64).min(1.0 - BOX_W);
        let lane = match self.overtake_lane {
            Some(l) if t >= overtake_frame(frames) => l,
            _ => self.lane,
        };
        [x, LANES[lane], BOX_W, BOX_H]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub scenario: Scenario,
    pub features: VideoFeatures,
    pub annotations: Vec<AnnotationRecord>,
}

/// Fixed `d0 × LATENT` projection shared by every video.
fn projection(d0: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED ^ d0 as u64);
    let normal = Normal::new(0.0, 1.0 / (d0 as f64).sqrt()).expect("valid sigma");
    (0..d0 * LATENT).map(|_| normal.sample(&mut rng)).collect()
}

const LATENT: usize = 4 + 4 + 4 + 4 + 4 + 2;

fn latent(actor: &Actor, setting: usize, time: usize, bbox: [f64; 4], t: usize, frames: usize) -> [f64; LATENT] {
    let mut z = [0.0; LATENT];
    z[actor.class] = 1.0;
    z[4 + actor.color] = 1.0;
    z[8 + setting] = 1.0;
    z[10 + time] = 1.0;
    for (k, v) in bbox.iter().enumerate() {
        z[12 + k] = 2.0 * v;
    }
    z[16 + actor.role.index()] = 1.0;
    let phase = TAU * t as f64 / frames as f64;
    z[20] = 0.5 * phase.sin();
    z[21] = 0.5 * phase.cos();
    z
}

fn position_predicate(a: [f64; 4], b: [f64; 4]) -> &'static str {
    if (a[1] - b[1]).abs() < SAME_LANE {
        if a[0] < b[0] {
            "left of"
        } else {
            "right of"
        }
    } else if a[1] < b[1] {
        "above"
    } else {
        "below"
    }
}

/// Places parked actors on free `(lane, slot)` cells.
fn park(
    rng: &mut ChaCha8Rng,
    count: usize,
    blocked_lanes: &[usize],
    next_track: &mut u64,
) -> Vec<Actor> {
    let mut cells: Vec<(usize, usize)> = (0..LANES.len())
        .filter(|l| !blocked_lanes.contains(l))
        .flat_map(|l| (0..SLOTS.len()).map(move |s| (l, s)))
        .collect();
    cells.shuffle(rng);
    cells
        .into_iter()
        .take(count)
        .map(|(lane, slot)| {
            *next_track += 1;
            Actor {
                track: *next_track,
                class: rng.gen_range(0..CLASSES.len()),
                color: rng.gen_range(0..COLORS.len()),
                role: Role::Parked,
                lane,
                x0: SLOTS[slot],
                speed: 0.0,
                overtake_lane: None,
            }
        })
        .collect()
}

fn moving(rng: &mut ChaCha8Rng, track: u64, role: Role, lane: usize, x0: f64, speed: f64) -> Actor {
    Actor {
        track,
        class: rng.gen_range(0..CLASSES.len()),
        color: rng.gen_range(0..COLORS.len()),
        role,
        lane,
        x0,
        speed,
        overtake_lane: None,
    }
}

fn cast(rng: &mut ChaCha8Rng, scenario: Scenario, frames: usize, objects: RangeInclusive<usize>) -> Vec<Actor> {
    let n = rng.gen_range(objects);
    let step = 1.0 / frames as f64;
    let mut next_track = 0u64;
    match scenario {
        Scenario::Static => park(rng, n, &[], &mut next_track),
        Scenario::Convoy => {
            let lane = rng.gen_range(0..LANES.len());
            let members = n.min(3);
            let mut actors: Vec<Actor> = (0..members)
                .map(|k| {
                    next_track += 1;
                    moving(rng, next_track, Role::Convoy, lane, 0.05 + 0.15 * k as f64, 0.3 * step)
                })
                .collect();
            actors.extend(park(rng, n - members, &[lane], &mut next_track));
            actors
        }
        Scenario::Chase => {
            let lane = rng.gen_range(1..LANES.len());
            let mut actors = vec![moving(rng, 1, Role::Target, lane, 0.3, 0.2 * step)];
            next_track = 1;
            if n >= 2 {
                let mut chaser = moving(rng, 2, Role::Chaser, lane, 0.05, 0.5 * step);
                chaser.overtake_lane = Some(lane - 1);
                actors.push(chaser);
                next_track = 2;
            }
            actors.extend(park(rng, n.saturating_sub(2), &[lane, lane - 1], &mut next_track));
            actors
        }
    }
}

/// Generates one video with between `min(2, max_objects)` and `max_objects`
/// objects. Identical arguments give bitwise-identical output.
pub fn synth_video(
    seed: u64,
    frames: usize,
    max_objects: usize,
    d0: usize,
    scenario: Scenario,
) -> Result<SyntheticVideo> {
    generate(seed, frames, max_objects.min(2)..=max_objects, d0, scenario)
}

/// Like [`synth_video`] with exactly `objects` objects.
pub fn synth_video_exact(
    seed: u64,
    frames: usize,
    objects: usize,
    d0: usize,
    scenario: Scenario,
) -> Result<SyntheticVideo> {
    generate(seed, frames, objects..=objects, d0, scenario)
}

fn generate(
    seed: u64,
    frames: usize,
    objects: RangeInclusive<usize>,
    d0: usize,
    scenario: Scenario,
) -> Result<SyntheticVideo> {
    if frames == 0 || *objects.end() == 0 || d0 == 0 {
        return Err(Error::InvalidConfig(
            "synthetic videos need frames, objects and d0 all ≥ 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let video = format!("{scenario}-{seed:06}");
    let setting = rng.gen_range(0..SETTINGS.len());
    let time = rng.gen_range(0..TIMES.len());
    let actors = cast(&mut rng, scenario, frames, objects);
    let proj = projection(d0);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");

    let mut frame_sets = Vec::with_capacity(frames);
    let mut records = Vec::with_capacity(frames);
    for t in 0..frames {
        let boxes: Vec<[f64; 4]> = actors.iter().map(|a| a.bbox(t, frames)).collect();
        let instances = actors
            .iter()
            .zip(&boxes)
            .map(|(a, &bbox)| {
                let z = latent(a, setting, time, bbox, t, frames);
                let embedding = (0..d0)
                    .map(|r| {
                        let row = &proj[r * LATENT..(r + 1) * LATENT];
                        row.iter().zip(&z).map(|(p, v)| p * v).sum::<f64>() + noise.sample(&mut rng)
                    })
                    .collect();
                ObjectInstance {
                    track_id: a.track,
                    frame_index: t,
                    bbox,
                    embedding,
                }
            })
            .collect();
        frame_sets.push(FrameSet {
            frame_index: t,
            instances,
        });

        let nodes = actors
            .iter()
            .zip(&boxes)
            .map(|(a, &bbox)| NodeAnnotation {
                track: a.track,
                bbox,
                appearance: vec![CLASSES[a.class].into(), COLORS[a.color].into()],
                situation: vec![SETTINGS[setting].into(), TIMES[time].into()],
            })
            .collect();
        let mut edges = Vec::new();
        for (i, a) in actors.iter().enumerate() {
            for (j, b) in actors.iter().enumerate() {
                if i == j {
                    continue;
                }
                let (interaction, relation) = match (a.role, b.role) {
                    (Role::Chaser, Role::Target) => {
                        let what = if t < overtake_frame(frames) {
                            "chasing"
                        } else {
                            "overtaking"
                        };
                        (vec![what.to_string()], vec!["pursuing".to_string()])
                    }
                    (Role::Convoy, Role::Convoy) if boxes[i][0] < boxes[j][0] => {
                        (vec!["following".to_string()], vec!["escorting".to_string()])
                    }
                    _ => (vec![], vec![]),
                };
                edges.push(EdgeAnnotation {
                    sub: a.track,
                    obj: b.track,
                    position: vec![position_predicate(boxes[i], boxes[j]).to_string()],
                    interaction,
                    relation,
                });
            }
        }
        records.push(AnnotationRecord {
            video: video.clone(),
            frame: t,
            nodes,
            edges,
        });
    }

    Ok(SyntheticVideo {
        scenario,
        features: VideoFeatures {
            video,
            d0,
            frames: frame_sets,
        },
        annotations: records,
    })
}

/// `count` videos cycling through chase, convoy and static scenarios.
pub fn synth_dataset(
    seed: u64,
    count: usize,
    frames: usize,
    max_objects: usize,
    d0: usize,
) -> Result<Vec<SyntheticVideo>> {
    (0..count)
        .map(|i| {
            let scenario = Scenario::ALL[i % Scenario::ALL.len()];
            synth_video(
                seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                frames,
                max_objects,
                d0,
                scenario,
            )
        })
        .collect()
}
