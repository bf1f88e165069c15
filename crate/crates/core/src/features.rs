//! Per-frame object embeddings: the precomputed-feature file format.
//!
//! A feature file is JSON Lines. The first line is `{"d0": int, "frames": int}`;
//! every following line is one object `{"video", "frame", "track", "bbox", "emb"}`
//! or, for a frame without objects, a bare `{"video", "frame"}` marker. Lines are
//! ordered by frame and every frame `0..frames` must appear at least once.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectInstance {
    pub track_id: u64,
    pub frame_index: usize,
    /// `(x, y, w, h)` normalized to the unit square.
    pub bbox: [f64; 4],
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSet {
    pub frame_index: usize,
    pub instances: Vec<ObjectInstance>,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Embeddings stacked as an `[N_t × d0]` matrix.
    pub fn embeddings(&self, d0: usize) -> Tensor {
        let data = self
            .instances
            .iter()
            .flat_map(|o| o.embedding.iter().copied())
            .collect();
        Tensor::new(vec![self.instances.len(), d0], data).expect("embedding widths checked on load")
    }
}

/// All frames of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    pub video: String,
    pub d0: usize,
    pub frames: Vec<FrameSet>,
}

impl VideoFeatures {
    /// Track ids in ascending order.
    pub fn track_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .frames
            .iter()
            .flat_map(|f| f.instances.iter().map(|o| o.track_id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn validate(&self) -> Result<()> {
        for (t, f) in self.frames.iter().enumerate() {
            if f.frame_index != t {
                return Err(Error::NonContiguousFrames {
                    video: self.video.clone(),
                    expected: t,
                    found: f.frame_index,
                });
            }
            let mut seen = HashSet::new();
            for o in &f.instances {
                validate_instance(o, self.d0, t + 2)?;
                if o.frame_index != t || !seen.insert(o.track_id) {
                    return Err(Error::DuplicateTrack {
                        line: t + 2,
                        track: o.track_id,
                        frame: t,
                    });
                }
            }
        }
        Ok(())
    }
}

fn validate_instance(o: &ObjectInstance, d0: usize, line: usize) -> Result<()> {
    if o.embedding.len() != d0 {
        return Err(Error::FeatureDimMismatch {
            expected: d0,
            found: o.embedding.len(),
        });
    }
    let [x, y, w, h] = o.bbox;
    if !(x >= 0.0 && y >= 0.0 && w >= 0.0 && h >= 0.0 && x + w <= 1.0 + 1e-12 && y + h <= 1.0 + 1e-12)
    {
        return Err(Error::InvalidBox { line, bbox: o.bbox });
    }
    if o.embedding.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("line {line}: non-finite embedding")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureHeader {
    d0: usize,
    frames: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureLine {
    video: String,
    frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    track: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emb: Option<Vec<f64>>,
}

pub fn parse_precomputed_str(text: &str, d0: usize) -> Result<VideoFeatures> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, htext) = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("feature file has no header".into()))?;
    let header: FeatureHeader = serde_json::from_str(htext).map_err(|e| Error::MalformedJson {
        line: hline,
        message: e.to_string(),
    })?;
    if header.d0 != d0 {
        return Err(Error::FeatureDimMismatch {
            expected: d0,
            found: header.d0,
        });
    }

    let mut video: Option<String> = None;
    let mut frames: Vec<FrameSet> = Vec::with_capacity(header.frames);
    for (line, l) in lines {
        let rec: FeatureLine = serde_json::from_str(l).map_err(|e| Error::MalformedJson {
            line,
            message: e.to_string(),
        })?;
        let vid = video.get_or_insert_with(|| rec.video.clone());
        if *vid != rec.video {
            return Err(Error::MalformedJson {
                line,
                message: format!("video {:?} in a file for video {vid:?}", rec.video),
            });
        }
        // open frames up to and including rec.frame; skipping a frame is an error
        match rec.frame.cmp(&frames.len()) {
            std::cmp::Ordering::Equal => frames.push(FrameSet {
                frame_index: rec.frame,
                instances: Vec::new(),
            }),
            std::cmp::Ordering::Greater => {
                return Err(Error::NonContiguousFrames {
                    video: vid.clone(),
                    expected: frames.len(),
                    found: rec.frame,
                })
            }
            std::cmp::Ordering::Less if rec.frame + 1 != frames.len() => {
                return Err(Error::NonContiguousFrames {
                    video: vid.clone(),
                    expected: frames.len(),
                    found: rec.frame,
                })
            }
            std::cmp::Ordering::Less => {}
        }
        match (rec.track, rec.bbox, rec.emb) {
            (None, None, None) => {}
            (Some(track), Some(bbox), Some(emb)) => {
                let inst = ObjectInstance {
                    track_id: track,
                    frame_index: rec.frame,
                    bbox,
                    embedding: emb,
                };
                validate_instance(&inst, d0, line)?;
                let frame = frames.last_mut().expect("frame opened above");
                if frame.instances.iter().any(|o| o.track_id == track) {
                    return Err(Error::DuplicateTrack {
                        line,
                        track,
                        frame: rec.frame,
                    });
                }
                frame.instances.push(inst);
            }
            _ => {
                return Err(Error::MalformedJson {
                    line,
                    message: "object lines need track, bbox and emb together".into(),
                })
            }
        }
    }
    if frames.len() != header.frames {
        return Err(Error::NonContiguousFrames {
            video: video.unwrap_or_default(),
            expected: header.frames,
            found: frames.len(),
        });
    }
    Ok(VideoFeatures {
        video: video.unwrap_or_default(),
        d0,
        frames,
    })
}

pub fn load_precomputed(path: &Path, d0: usize) -> Result<VideoFeatures> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_precomputed_str(&text, d0)
}

pub fn write_precomputed_string(video: &VideoFeatures) -> String {
    let header = FeatureHeader {
        d0: video.d0,
        frames: video.frames.len(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for f in &video.frames {
        let lines: Vec<FeatureLine> = if f.instances.is_empty() {
            vec![FeatureLine {
                video: video.video.clone(),
                frame: f.frame_index,
                track: None,
                bbox: None,
                emb: None,
            }]
        } else {
            f.instances
                .iter()
                .map(|o| FeatureLine {
                    video: video.video.clone(),
                    frame: f.frame_index,
                    track: Some(o.track_id),
                    bbox: Some(o.bbox),
                    emb: Some(o.embedding.clone()),
                })
                .collect()
        };
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("line serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn write_precomputed(path: &Path, video: &VideoFeatures) -> Result<()> {
    fs::write(path, write_precomputed_string(video)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(frames: &[usize], d0: usize) -> VideoFeatures {
        VideoFeatures {
            video: "clip".into(),
            d0,
            frames: frames
                .iter()
                .enumerate()
                .map(|(t, &n)| FrameSet {
                    frame_index: t,
                    instances: (0..n)
                        .map(|i| ObjectInstance {
                            track_id: i as u64,
                            frame_index: t,
                            bbox: [0.1 * i as f64, 0.2, 0.1, 0.1],
                            embedding: (0..d0).map(|k| (k + i + t) as f64 * 0.25 - 1.0).collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn two_frame_round_trip() {
        let v = video(&[3, 3], 4);
        let back = parse_precomputed_str(&write_precomputed_string(&v), 4).unwrap();
        assert_eq!(back.frames.len(), 2);
        assert_eq!((back.frames[0].len(), back.frames[1].len()), (3, 3));
        assert_eq!(back, v);
    }

    #[test]
    fn d0_mismatch() {
        let text = write_precomputed_string(&video(&[1], 16));
        assert!(matches!(
            parse_precomputed_str(&text, 32),
            Err(Error::FeatureDimMismatch { expected: 32, found: 16 })
        ));
    }

    #[test]
    fn empty_frame_is_accepted() {
        let v = video(&[2, 0, 1], 3);
        let back = parse_precomputed_str(&write_precomputed_string(&v), 3).unwrap();
        assert_eq!(back.frames[1].len(), 0);
        assert_eq!(back, v);
    }

    #[test]
    fn skipped_frame_is_rejected() {
        let text = "{\"d0\":1,\"frames\":3}\n{\"video\":\"a\",\"frame\":0}\n{\"video\":\"a\",\"frame\":2}\n";
        assert!(matches!(
            parse_precomputed_str(text, 1),
            Err(Error::NonContiguousFrames { expected: 1, found: 2, .. })
        ));
        let short = "{\"d0\":1,\"frames\":3}\n{\"video\":\"a\",\"frame\":0}\n";
        assert!(matches!(
            parse_precomputed_str(short, 1),
            Err(Error::NonContiguousFrames { .. })
        ));
    }

    #[test]
    fn missing_file() {
        let err = load_precomputed(Path::new("/definitely/not/here.jsonl"), 4).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
