use std::fmt::Write as _;
use std::path::Path;

use super::{FaceFeatureSequence, FeatureError, FeatureMatrix, SpeechFeatureSequence, FACE_DIM, SPEECH_DIM};

pub const FACE_MAGIC: &str = "avdf_face_v1";
pub const SPEECH_MAGIC: &str = "avdf_mfcc_v1";

fn read_table(path: &Path, magic: &'static str, cols: usize) -> Result<(f64, FeatureMatrix), FeatureError> {
    if !path.exists() {
        return Err(FeatureError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines();
    let bad_header = || FeatureError::BadHeader {
        path: path.to_path_buf(),
        expected: magic,
    };
    let header = lines.next().ok_or_else(|| FeatureError::EmptyFile(path.to_path_buf()))?;
    let (tag, rate) = header.trim().split_once(',').ok_or_else(bad_header)?;
    let rate: f64 = rate.trim().parse().map_err(|_| bad_header())?;
    if tag != magic || !(rate.is_finite() && rate > 0.0) {
        return Err(bad_header());
    }

    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(FeatureError::WrongColumnCount {
                path: path.to_path_buf(),
                line: i + 2,
                expected: cols,
                found: fields.len(),
            });
        }
        rows += 1;
        for (c, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| FeatureError::Parse {
                path: path.to_path_buf(),
                row: rows,
                column: c + 1,
                text: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(FeatureError::NonFinite {
                    path: path.to_path_buf(),
                    row: rows,
                    column: c + 1,
                });
            }
            data.push(v);
        }
    }
    if rows == 0 {
        return Err(FeatureError::EmptyFile(path.to_path_buf()));
    }
    Ok((rate, FeatureMatrix::new(rows, cols, data)?))
}

fn write_table(path: &Path, magic: &str, rate: f64, m: &FeatureMatrix) -> Result<(), FeatureError> {
    let mut out = String::with_capacity(m.rows() * m.cols() * 10);
    let _ = writeln!(out, "{magic},{rate}");
    for row in m.iter_rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses an `avdf_face_v1` file: header `avdf_face_v1,<frame_rate_hz>`
/// followed by one 430-column row per frame.
pub fn load_face_features(path: impl AsRef<Path>) -> Result<FaceFeatureSequence, FeatureError> {
    let (frame_rate, frames) = read_table(path.as_ref(), FACE_MAGIC, FACE_DIM)?;
    Ok(FaceFeatureSequence { frames, frame_rate })
}

/// Parses an `avdf_mfcc_v1` file: header `avdf_mfcc_v1,<hop_seconds>`
/// followed by one 13-column row per frame.
pub fn load_speech_features(path: impl AsRef<Path>) -> Result<SpeechFeatureSequence, FeatureError> {
    let (hop_seconds, frames) = read_table(path.as_ref(), SPEECH_MAGIC, SPEECH_DIM)?;
    Ok(SpeechFeatureSequence { frames, hop_seconds })
}

/// Values are written in shortest round-trip form, so reading back is exact.
pub fn write_face_features(path: impl AsRef<Path>, seq: &FaceFeatureSequence) -> Result<(), FeatureError> {
    if seq.frames.cols() != FACE_DIM {
        return Err(FeatureError::Shape(format!("face frames have {} columns", seq.frames.cols())));
    }
    write_table(path.as_ref(), FACE_MAGIC, seq.frame_rate, &seq.frames)
}

pub fn write_speech_features(path: impl AsRef<Path>, seq: &SpeechFeatureSequence) -> Result<(), FeatureError> {
    if seq.frames.cols() != SPEECH_DIM {
        return Err(FeatureError::Shape(format!("speech frames have {} columns", seq.frames.cols())));
    }
    write_table(path.as_ref(), SPEECH_MAGIC, seq.hop_seconds, &seq.frames)
}
