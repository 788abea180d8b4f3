//! The assembled detector: standardization statistics plus the four
//! embedding networks, and the per-video embedding step shared by
//! training and scoring.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::Result;
use crate::features::{window_fixed, FaceFeatureSequence, FeatureMatrix, SpeechFeatureSequence, Standardizer};
use crate::networks::{DetectorNetworks, Embedding, EmotionDistribution, NetworkConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

/// Raw features of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    pub id: String,
    pub face: FaceFeatureSequence,
    pub speech: SpeechFeatureSequence,
}

/// Standardized inputs ready for the networks.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedVideo {
    pub id: String,
    /// Fixed window for F1.
    pub face_window: FeatureMatrix,
    /// Fixed window for S1.
    pub speech_window: FeatureMatrix,
    /// Whole standardized sequence for F2.
    pub face_sequence: FeatureMatrix,
    /// Whole standardized sequence for S2.
    pub speech_sequence: FeatureMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoEmbeddings {
    pub face_modality: Embedding,
    pub speech_modality: Embedding,
    pub face_emotion: Embedding,
    pub speech_emotion: Embedding,
    pub face_distribution: EmotionDistribution,
    pub speech_distribution: EmotionDistribution,
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub config: NetworkConfig,
    pub init_seed: u64,
    pub store: ParamStore,
    pub nets: DetectorNetworks,
    pub face_stats: Standardizer,
    pub speech_stats: Standardizer,
}

impl Detector {
    pub fn new(config: NetworkConfig, face_stats: Standardizer, speech_stats: Standardizer, seed: u64) -> Result<Self> {
        let (store, nets) = DetectorNetworks::init(&config, seed)?;
        Ok(Self {
            config,
            init_seed: seed,
            store,
            nets,
            face_stats,
            speech_stats,
        })
    }

    /// Standardizers fitted over every frame of `videos`.
    pub fn fit_standardizers<'a>(videos: impl IntoIterator<Item = &'a VideoFeatures> + Clone) -> Result<(Standardizer, Standardizer)> {
        let face = Standardizer::fit(videos.clone().into_iter().map(|v| &v.face.frames))?;
        let speech = Standardizer::fit(videos.into_iter().map(|v| &v.speech.frames))?;
        Ok((face, speech))
    }

    pub fn prepare(&self, video: &VideoFeatures) -> Result<PreparedVideo> {
        let face_sequence = self.face_stats.apply(&video.face.frames)?;
        let speech_sequence = self.speech_stats.apply(&video.speech.frames)?;
        Ok(PreparedVideo {
            id: video.id.clone(),
            face_window: window_fixed(&face_sequence, self.config.face_modality.window_frames),
            speech_window: window_fixed(&speech_sequence, self.config.speech_modality.window_frames),
            face_sequence,
            speech_sequence,
        })
    }

    pub fn embed(&self, video: &PreparedVideo) -> Result<VideoEmbeddings> {
        let n = &self.nets;
        let face_modality = n.face_modality.embed(&self.store, &video.face_window)?;
        let speech_modality = n.speech_modality.embed(&self.store, &video.speech_window)?;
        let (face_emotion, face_distribution) = n.face_emotion.embed(&self.store, &n.emotion_head, &video.face_sequence)?;
        let (speech_emotion, speech_distribution) =
            n.speech_emotion.embed(&self.store, &n.emotion_head, &video.speech_sequence)?;
        Ok(VideoEmbeddings {
            face_modality,
            speech_modality,
            face_emotion,
            speech_emotion,
            face_distribution,
            speech_distribution,
        })
    }
}
