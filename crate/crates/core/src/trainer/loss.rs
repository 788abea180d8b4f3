use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{euclidean, Modality};

/// The modality judged more altered between a pair's real and fake video.
pub type ManipulatedModality = Modality;

/// Face and speech embeddings of a real video and its fake.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingQuad<'a> {
    pub face_real: &'a [f64],
    pub face_fake: &'a [f64],
    pub speech_real: &'a [f64],
    pub speech_fake: &'a [f64],
}

impl<'a> EmbeddingQuad<'a> {
    /// Same vectors with the face and speech roles exchanged.
    pub fn swapped(self) -> Self {
        Self {
            face_real: self.speech_real,
            face_fake: self.speech_fake,
            speech_real: self.face_real,
            speech_fake: self.face_fake,
        }
    }
}

/// Modality similarity score. The unmanipulated modality of the real
/// video is the anchor; the real other modality is the positive and the
/// fake other modality the negative.
pub fn similarity_score_1(m: &EmbeddingQuad<'_>, manipulated: ManipulatedModality) -> f64 {
    match manipulated {
        Modality::Face => euclidean(m.speech_real, m.face_real) - euclidean(m.speech_real, m.face_fake),
        Modality::Speech => euclidean(m.face_real, m.speech_real) - euclidean(m.face_real, m.speech_fake),
    }
}

/// Emotion similarity score: the unmanipulated modality's real/fake
/// emotion embeddings should be closer than the manipulated modality's.
pub fn similarity_score_2(e: &EmbeddingQuad<'_>, manipulated: ManipulatedModality) -> f64 {
    match manipulated {
        Modality::Face => euclidean(e.speech_real, e.speech_fake) - euclidean(e.face_real, e.face_fake),
        Modality::Speech => euclidean(e.face_real, e.face_fake) - euclidean(e.speech_real, e.speech_fake),
    }
}

/// `max(score + margin, 0)`.
pub fn triplet_loss(score: f64, margin: f64) -> f64 {
    (score + margin).max(0.0)
}

/// Which of the two losses take part in training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSwitches {
    pub disable_rho1: bool,
    pub disable_rho2: bool,
}

impl LossSwitches {
    pub fn validate(self) -> Result<()> {
        if self.disable_rho1 && self.disable_rho2 {
            return Err(Error::NoLossEnabled);
        }
        Ok(())
    }
}

pub fn total_loss(rho1: f64, rho2: f64, switches: LossSwitches) -> Result<f64> {
    switches.validate()?;
    let a = if switches.disable_rho1 { 0.0 } else { rho1 };
    let b = if switches.disable_rho2 { 0.0 } else { rho2 };
    Ok(a + b)
}

/// Both similarity scores and losses for one pair. A disabled score is
/// `None` and its loss is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub rho1: f64,
    pub rho2: f64,
    pub total: f64,
    pub m1: f64,
    pub m2: f64,
}

impl LossBreakdown {
    pub fn from_scores(l1: Option<f64>, l2: Option<f64>, m1: f64, m2: f64) -> Self {
        let rho1 = l1.map_or(0.0, |l| triplet_loss(l, m1));
        let rho2 = l2.map_or(0.0, |l| triplet_loss(l, m2));
        Self {
            l1,
            l2,
            rho1,
            rho2,
            total: rho1 + rho2,
            m1,
            m2,
        }
    }

    pub fn compute(
        modality: Option<&EmbeddingQuad<'_>>,
        emotion: Option<&EmbeddingQuad<'_>>,
        manipulated: ManipulatedModality,
        m1: f64,
        m2: f64,
    ) -> Self {
        Self::from_scores(
            modality.map(|q| similarity_score_1(q, manipulated)),
            emotion.map(|q| similarity_score_2(q, manipulated)),
            m1,
            m2,
        )
    }

    /// Hinge relations, nonnegativity and `total = rho1 + rho2`.
    pub fn holds_invariants(&self) -> bool {
        let hinge = |l: Option<f64>, rho: f64, m: f64| match l {
            Some(l) => rho == triplet_loss(l, m),
            None => rho == 0.0,
        };
        self.rho1 >= 0.0
            && self.rho2 >= 0.0
            && hinge(self.l1, self.rho1, self.m1)
            && hinge(self.l2, self.rho2, self.m2)
            && self.total == self.rho1 + self.rho2
    }
}
