use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatrix};

/// Per-dimension z-scoring fitted on training frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const MIN_STD: f64 = 1e-12;

impl Standardizer {
    /// Population mean and standard deviation over every row of every matrix.
    /// Dimensions with (near) zero spread get unit scale.
    pub fn fit<'a>(matrices: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Self, FeatureError> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let mut shift: Vec<f64> = Vec::new();
        for m in matrices {
            if sum.is_empty() {
                sum = vec![0.0; m.cols()];
                sq = vec![0.0; m.cols()];
                // shifted accumulation keeps the variance well conditioned
                shift = m.row(0).to_vec();
            } else if m.cols() != sum.len() {
                return Err(FeatureError::Shape(format!("standardizer: {} vs {} columns", m.cols(), sum.len())));
            }
            for row in m.iter_rows() {
                for j in 0..row.len() {
                    let d = row[j] - shift[j];
                    sum[j] += d;
                    sq[j] += d * d;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(FeatureError::EmptyMatrix);
        }
        let n = count as f64;
        let mean = sum.iter().zip(&shift).map(|(s, k)| k + s / n).collect();
        let std = sum
            .iter()
            .zip(&sq)
            .map(|(s, q)| {
                let var = (q / n - (s / n) * (s / n)).max(0.0);
                let sd = var.sqrt();
                if sd < MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        if m.cols() != self.dims() {
            return Err(FeatureError::Shape(format!(
                "standardizer fitted on {} columns, got {}",
                self.dims(),
                m.cols()
            )));
        }
        let data = m
            .iter_rows()
            .flat_map(|row| row.iter().zip(&self.mean).zip(&self.std).map(|((v, mu), sd)| (v - mu) / sd))
            .collect();
        FeatureMatrix::new(m.rows(), m.cols(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_columns_have_zero_mean_unit_std() {
        let a = FeatureMatrix::new(3, 2, vec![1.0, 10.0, 2.0, 10.0, 3.0, 10.0]).unwrap();
        let b = FeatureMatrix::new(1, 2, vec![4.0, 10.0]).unwrap();
        let s = Standardizer::fit([&a, &b]).unwrap();
        assert!((s.mean[0] - 2.5).abs() < 1e-12);
        assert!((s.std[0] - 1.25f64.sqrt()).abs() < 1e-12);
        // constant column keeps unit scale
        assert_eq!(s.std[1], 1.0);
        let z = s.apply(&a).unwrap();
        assert!((z.row(0)[0] + 1.5 / 1.25f64.sqrt()).abs() < 1e-12);
        assert_eq!(z.row(0)[1], 0.0);
    }

    #[test]
    fn column_mismatch_is_rejected() {
        let a = FeatureMatrix::zeros(2, 2);
        let s = Standardizer::fit([&a]).unwrap();
        assert!(s.apply(&FeatureMatrix::zeros(2, 3)).is_err());
    }
}
