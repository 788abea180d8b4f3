use super::FeatureError;

/// Facial feature columns per frame.
pub const FACE_DIM: usize = 430;
/// MFCC coefficients per frame.
pub const SPEECH_DIM: usize = 13;

/// Row-major `frames × dims` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, FeatureError> {
        if rows == 0 || cols == 0 {
            return Err(FeatureError::EmptyMatrix);
        }
        if rows * cols != data.len() {
            return Err(FeatureError::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(FeatureError::Shape(format!("ragged rows: {} vs {cols}", bad.len())));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Mean over consecutive row groups, producing at most `max_rows` rows.
    /// Group boundaries are `floor(i·rows/max_rows)`.
    pub fn pooled_rows(&self, max_rows: usize) -> FeatureMatrix {
        if max_rows == 0 || self.rows <= max_rows {
            return self.clone();
        }
        let mut out = Vec::with_capacity(max_rows * self.cols);
        for g in 0..max_rows {
            let lo = g * self.rows / max_rows;
            let hi = (g + 1) * self.rows / max_rows;
            let n = (hi - lo) as f64;
            let mut acc = vec![0.0; self.cols];
            for r in lo..hi {
                for (a, v) in acc.iter_mut().zip(self.row(r)) {
                    *a += v;
                }
            }
            out.extend(acc.into_iter().map(|a| a / n));
        }
        FeatureMatrix {
            rows: max_rows,
            cols: self.cols,
            data: out,
        }
    }
}

/// `T_f × 430` facial features at `frame_rate` Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceFeatureSequence {
    pub frames: FeatureMatrix,
    pub frame_rate: f64,
}

/// `T_s × 13` MFCC frames spaced `hop_seconds` apart.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeechFeatureSequence {
    pub frames: FeatureMatrix,
    pub hop_seconds: f64,
}
