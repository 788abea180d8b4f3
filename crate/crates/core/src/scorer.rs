//! Test-time scoring: modality and emotion distances per video, the
//! learned threshold, the decision rule and per-video AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Label, VideoEmbeddings, VideoFeatures};
use crate::trainer::ModelCheckpoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub id: String,
    /// Distance between the face and speech modality embeddings.
    pub d_m: f64,
    /// Distance between the face and speech emotion embeddings.
    pub d_e: f64,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

/// One line of the score stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub d_m: f64,
    pub d_e: f64,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    pub verdict: Label,
}

impl ScoreRecord {
    pub fn new(score: &VideoScore, tau: f64) -> Self {
        Self {
            id: score.id.clone(),
            d_m: score.d_m,
            d_e: score.d_e,
            score: score.score,
            label: score.label,
            verdict: classify(score.score, tau),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Midpoint of the mean real score and the mean fake score.
    #[default]
    Midpoint,
    /// Threshold with the fewest training errors.
    Optimal,
}

impl std::str::FromStr for ThresholdMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "midpoint" => Ok(Self::Midpoint),
            "optimal" => Ok(Self::Optimal),
            other => Err(format!("unknown threshold mode `{other}` (expected midpoint or optimal)")),
        }
    }
}

pub fn score_embeddings(id: &str, emb: &VideoEmbeddings, label: Option<Label>) -> VideoScore {
    let d_m = emb.face_modality.distance(&emb.speech_modality);
    let d_e = emb.face_emotion.distance(&emb.speech_emotion);
    VideoScore {
        id: id.to_string(),
        d_m,
        d_e,
        score: d_m + d_e,
        label,
    }
}

pub fn score_video(features: &VideoFeatures, checkpoint: &ModelCheckpoint, label: Option<Label>) -> Result<VideoScore> {
    let detector = &checkpoint.detector;
    let prepared = detector.prepare(features)?;
    let emb = detector.embed(&prepared)?;
    Ok(score_embeddings(&features.id, &emb, label))
}

/// Fake iff `score > tau`.
pub fn classify(score: f64, tau: f64) -> Label {
    if score > tau {
        Label::Fake
    } else {
        Label::Real
    }
}

fn split_by_label(scores: &[VideoScore]) -> (Vec<f64>, Vec<f64>) {
    let mut real = Vec::new();
    let mut fake = Vec::new();
    for s in scores {
        match s.label {
            Some(Label::Real) => real.push(s.score),
            Some(Label::Fake) => fake.push(s.score),
            None => {}
        }
    }
    (real, fake)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Learns τ from labelled training scores. Unlabelled scores are ignored.
pub fn compute_threshold(scores: &[VideoScore], mode: ThresholdMode) -> Result<f64> {
    let (real, fake) = split_by_label(scores);
    if real.is_empty() {
        return Err(Error::MissingClass("real"));
    }
    if fake.is_empty() {
        return Err(Error::MissingClass("fake"));
    }
    let tau = match mode {
        ThresholdMode::Midpoint => (mean(&real) + mean(&fake)) / 2.0,
        ThresholdMode::Optimal => optimal_threshold(&real, &fake),
    };
    if !tau.is_finite() {
        return Err(Error::Config("threshold is not finite".into()));
    }
    Ok(tau)
}

/// Candidate thresholds are the observed scores plus one below all of them;
/// the first candidate with the fewest errors wins.
fn optimal_threshold(real: &[f64], fake: &[f64]) -> f64 {
    let mut candidates: Vec<f64> = real.iter().chain(fake).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let below = candidates[0] - 1.0;
    let errors = |tau: f64| {
        real.iter().filter(|&&s| s > tau).count() + fake.iter().filter(|&&s| s <= tau).count()
    };
    let mut best = (errors(below), below);
    for &tau in &candidates {
        let e = errors(tau);
        if e < best.0 {
            best = (e, tau);
        }
    }
    best.1
}

/// Area under the ROC curve of `scores` (higher means more fake), from
/// the Mann-Whitney rank statistic with midranks for ties.
pub fn auc(scores: &[(f64, Label)]) -> Result<f64> {
    let fakes = scores.iter().filter(|(_, l)| l.is_fake()).count();
    let reals = scores.len() - fakes;
    if fakes == 0 || reals == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    // Twice the rank sum keeps midranks integral.
    let mut fake_rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        let midrank2 = (i + 1 + j + 1) as u64;
        let tied_fakes = order[i..=j].iter().filter(|&&k| scores[k].1.is_fake()).count() as u64;
        fake_rank_sum2 += midrank2 * tied_fakes;
        i = j + 1;
    }
    let (nf, nr) = (fakes as u64, reals as u64);
    let u2 = fake_rank_sum2 - nf * (nf + 1);
    Ok(u2 as f64 / (2 * nf * nr) as f64)
}

pub fn labelled_auc(scores: &[VideoScore]) -> Result<f64> {
    let pairs: Vec<(f64, Label)> = scores.iter().filter_map(|s| s.label.map(|l| (s.score, l))).collect();
    auc(&pairs)
}
