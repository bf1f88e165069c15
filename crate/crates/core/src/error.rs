use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("feature dimension mismatch: file declares d0={found}, expected d0={expected}")]
    FeatureDimMismatch { expected: usize, found: usize },

    #[error("non-contiguous frame indices in video {video}: expected frame {expected}, found {found}")]
    NonContiguousFrames {
        video: String,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: malformed JSON: {message}")]
    MalformedJson { line: usize, message: String },

    #[error("line {line}: missing or unsupported schema-version header")]
    MissingSchemaHeader { line: usize },

    #[error("line {line}: edge {sub}->{obj} references track {missing} absent from the frame")]
    MissingTrack {
        line: usize,
        sub: u64,
        obj: u64,
        missing: u64,
    },

    #[error("line {line}: edge {sub}->{obj} has interaction/relation predicates but no position predicate")]
    InteractionWithoutPosition { line: usize, sub: u64, obj: u64 },

    #[error("line {line}: self-edge on track {track}")]
    SelfEdge { line: usize, track: u64 },

    #[error("line {line}: duplicate track {track} in frame {frame}")]
    DuplicateTrack { line: usize, track: u64, frame: usize },

    #[error("line {line}: bounding box {bbox:?} lies outside the unit square")]
    InvalidBox { line: usize, bbox: [f64; 4] },

    #[error("line {line}: unknown {kind} predicate {name:?}")]
    UnknownPredicate {
        line: usize,
        kind: &'static str,
        name: String,
    },

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("track {0} has no appearances")]
    EmptyTrack(u64),

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("vocabulary mismatch between checkpoint and data: {0}")]
    VocabMismatch(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Numeric(_) => "numeric",
            Error::MissingFile(_) => "missing_file",
            Error::Io { .. } => "io",
            Error::FeatureDimMismatch { .. } => "feature_dim_mismatch",
            Error::NonContiguousFrames { .. } => "non_contiguous_frames",
            Error::MalformedJson { .. } => "malformed_json",
            Error::MissingSchemaHeader { .. } => "missing_schema_header",
            Error::MissingTrack { .. } => "missing_track",
            Error::InteractionWithoutPosition { .. } => "interaction_without_position",
            Error::SelfEdge { .. } => "self_edge",
            Error::DuplicateTrack { .. } => "duplicate_track",
            Error::InvalidBox { .. } => "invalid_box",
            Error::UnknownPredicate { .. } => "unknown_predicate",
            Error::InvalidVocab(_) => "invalid_vocab",
            Error::EmptyInput(_) => "empty_input",
            Error::InvalidConfig(_) => "invalid_config",
            Error::EmptyTrack(_) => "empty_track",
            Error::Divergence { .. } => "divergence",
            Error::VocabMismatch(_) => "vocab_mismatch",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}
