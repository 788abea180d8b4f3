use super::FeatureMatrix;

/// Center-crops or symmetrically zero-pads `sequence` to exactly
/// `target_frames` rows. Odd padding puts the extra row after.
pub fn window_fixed(sequence: &FeatureMatrix, target_frames: usize) -> FeatureMatrix {
    let (rows, cols) = (sequence.rows(), sequence.cols());
    let mut out = FeatureMatrix::zeros(target_frames, cols);
    if rows >= target_frames {
        let start = (rows - target_frames) / 2;
        for r in 0..target_frames {
            out.row_mut(r).copy_from_slice(sequence.row(start + r));
        }
    } else {
        let before = (target_frames - rows) / 2;
        for r in 0..rows {
            out.row_mut(before + r).copy_from_slice(sequence.row(r));
        }
    }
    out
}
