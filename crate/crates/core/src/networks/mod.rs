//! The four embedding networks: conv modality embedders for face and
//! speech, and recurrent perceived-emotion embedders with a 7-way head.

mod emotion;
mod modality;
mod pretrain;

pub use emotion::{EmotionEmbedder, EmotionEmbedderConfig, EmotionForward, EmotionHead};
pub use modality::{ConvLayerConfig, ModalityEmbedder, ModalityEmbedderConfig};
pub use pretrain::{emotion_accuracy, emotion_pretrain, EmotionCorpus, EmotionSample, PretrainConfig, PretrainReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamId, ParamStore};

/// Width of every embedding.
pub const EMBEDDING_DIM: usize = 250;
pub const EMOTION_CLASSES: usize = 7;
pub const EMOTION_NAMES: [&str; EMOTION_CLASSES] = ["happy", "sad", "angry", "fearful", "surprise", "disgust", "neutral"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Face,
    Speech,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{network}: input is {got_rows}x{got_cols}, expected window {want_rows}x{want_cols}")]
    WrongWindow {
        network: &'static str,
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("{network}: input has {got} feature columns, expected {want}")]
    WrongDims { network: &'static str, got: usize, want: usize },
    #[error("{0}: empty input sequence")]
    EmptySequence(&'static str),
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("emotion corpus needs at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("emotion label {label} outside 0..{classes}")]
    BadLabel { label: usize, classes: usize },
}

/// Unit-norm embedding vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        euclidean(&self.0, &other.0)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Probabilities over [`EMOTION_NAMES`].
#[derive(Clone, Debug, PartialEq)]
pub struct EmotionDistribution(pub Vec<f64>);

impl EmotionDistribution {
    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn label(&self) -> &'static str {
        EMOTION_NAMES[self.argmax()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub face_modality: ModalityEmbedderConfig,
    pub speech_modality: ModalityEmbedderConfig,
    pub face_emotion: EmotionEmbedderConfig,
    pub speech_emotion: EmotionEmbedderConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            face_modality: ModalityEmbedderConfig::face_default(),
            speech_modality: ModalityEmbedderConfig::speech_default(),
            face_emotion: EmotionEmbedderConfig::for_dims(crate::features::FACE_DIM),
            speech_emotion: EmotionEmbedderConfig::for_dims(crate::features::SPEECH_DIM),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        self.face_modality.validate()?;
        self.speech_modality.validate()?;
        self.face_emotion.validate()?;
        self.speech_emotion.validate()?;
        if self.face_emotion.embedding_dim != self.speech_emotion.embedding_dim {
            return Err(NetworkError::InvalidConfig(
                "face and speech emotion embedders share one class head and need equal widths".into(),
            ));
        }
        Ok(())
    }
}

/// F1, S1, F2, S2 and the shared emotion head, all addressing one store.
#[derive(Clone, Debug)]
pub struct DetectorNetworks {
    pub face_modality: ModalityEmbedder,
    pub speech_modality: ModalityEmbedder,
    pub face_emotion: EmotionEmbedder,
    pub speech_emotion: EmotionEmbedder,
    pub emotion_head: EmotionHead,
}

impl DetectorNetworks {
    /// Seeded initialization; parameters are registered in a fixed order so
    /// the same config always yields the same names and ids.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<(ParamStore, Self), NetworkError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let face_modality = ModalityEmbedder::init(&mut store, "f1", &config.face_modality, &mut rng)?;
        let speech_modality = ModalityEmbedder::init(&mut store, "s1", &config.speech_modality, &mut rng)?;
        let face_emotion = EmotionEmbedder::init(&mut store, "f2", &config.face_emotion, &mut rng)?;
        let speech_emotion = EmotionEmbedder::init(&mut store, "s2", &config.speech_emotion, &mut rng)?;
        let emotion_head = EmotionHead::init(&mut store, "emotion_head", config.face_emotion.embedding_dim, config.face_emotion.classes, &mut rng)?;
        Ok((
            store,
            Self {
                face_modality,
                speech_modality,
                face_emotion,
                speech_emotion,
                emotion_head,
            },
        ))
    }

    pub fn modality_params(&self) -> Vec<ParamId> {
        let mut ids = self.face_modality.param_ids();
        ids.extend(self.speech_modality.param_ids());
        ids
    }

    pub fn emotion_params(&self) -> Vec<ParamId> {
        let mut ids = self.face_emotion.param_ids();
        ids.extend(self.speech_emotion.param_ids());
        ids.extend(self.emotion_head.param_ids());
        ids
    }

    pub fn modality(&self, which: Modality) -> &ModalityEmbedder {
        match which {
            Modality::Face => &self.face_modality,
            Modality::Speech => &self.speech_modality,
        }
    }

    pub fn emotion(&self, which: Modality) -> &EmotionEmbedder {
        match which {
            Modality::Face => &self.face_emotion,
            Modality::Speech => &self.speech_emotion,
        }
    }
}
