//! Per-video input features: MFCC frames from audio and facial feature
//! frames from files, plus fixed-length windowing and standardization.

mod files;
mod matrix;
mod mfcc;
mod standardize;
mod wav;
mod window;

pub use files::{
    load_face_features, load_speech_features, write_face_features, write_speech_features, FACE_MAGIC,
    SPEECH_MAGIC,
};
pub use matrix::{FaceFeatureSequence, FeatureMatrix, SpeechFeatureSequence, FACE_DIM, SPEECH_DIM};
pub use mfcc::{mfcc, MfccConfig, MfccExtractor, WindowKind};
pub use standardize::Standardizer;
pub use wav::{read_wav, AudioClip};
pub use window::window_fixed;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported audio encoding in {path}: {reason}")]
    UnsupportedEncoding { path: PathBuf, reason: String },
    #[error("audio file {0} contains no samples")]
    EmptyAudio(PathBuf),
    #[error("clip has {samples} samples, fewer than one {frame}-sample frame")]
    ClipTooShort { samples: usize, frame: usize },
    #[error("invalid MFCC configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: line {line}: expected {expected} columns, found {found}")]
    WrongColumnCount {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: non-finite value at row {row}, column {column}")]
    NonFinite { path: PathBuf, row: usize, column: usize },
    #[error("{path}: cannot parse `{text}` at row {row}, column {column}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        text: String,
    },
    #[error("{path}: bad header, expected `{expected},<rate>`")]
    BadHeader { path: PathBuf, expected: &'static str },
    #[error("{0}: no feature rows")]
    EmptyFile(PathBuf),
    #[error("feature matrix must have at least one row and column")]
    EmptyMatrix,
    #[error("{0}")]
    Shape(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
