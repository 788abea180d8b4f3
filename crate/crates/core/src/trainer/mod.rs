//! Siamese training over (real, fake) pairs of the same subject with the
//! modality and emotion triplet losses.

mod checkpoint;
mod fit;
mod loss;

pub use checkpoint::{ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use fit::{
    batch_gradients, detect_manipulated_modality, discrepancy, fit, prepare_pairs, EpochLog, FitOutcome, PreparedPair, StepRecord, TrainConfig,
    TrainPair,
};
pub use loss::{
    similarity_score_1, similarity_score_2, total_loss, triplet_loss, EmbeddingQuad, LossBreakdown, LossSwitches,
    ManipulatedModality,
};
