use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::ModelCheckpoint;
use super::loss::{EmbeddingQuad, LossBreakdown, LossSwitches, ManipulatedModality};
use crate::autodiff::{Adam, AdamConfig, Gradients, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, MfccConfig};
use crate::model::{Detector, Label, PreparedVideo, VideoFeatures};
use crate::networks::{DetectorNetworks, Embedding, Modality};
use crate::par::{self, Execution};
use crate::scorer::{compute_threshold, score_embeddings, ThresholdMode, VideoScore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Margin of the modality triplet loss.
    pub margin_modality: f64,
    /// Margin of the emotion triplet loss.
    pub margin_emotion: f64,
    pub seed: u64,
    pub disable_rho1: bool,
    pub disable_rho2: bool,
    /// Train the emotion embedders too instead of keeping them frozen.
    pub fine_tune_emotion: bool,
    pub threshold_mode: ThresholdMode,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 4,
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            margin_modality: 0.2,
            margin_emotion: 0.2,
            seed: 7,
            disable_rho1: false,
            disable_rho2: false,
            fine_tune_emotion: false,
            threshold_mode: ThresholdMode::Midpoint,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn switches(&self) -> LossSwitches {
        LossSwitches {
            disable_rho1: self.disable_rho1,
            disable_rho2: self.disable_rho2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.margin_modality >= 0.0 && self.margin_emotion >= 0.0) {
            return Err(Error::Config("train margins must be nonnegative".into()));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("train.adam.learning_rate must be positive".into()));
        }
        self.switches().validate()
    }
}

/// A real video and a fake of the same subject.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    pub subject: String,
    pub real: VideoFeatures,
    pub fake: VideoFeatures,
}

/// Mean per-frame RMS difference between two equally sized windows.
pub fn discrepancy(a: &FeatureMatrix, b: &FeatureMatrix) -> f64 {
    let dims = a.cols() as f64;
    let total: f64 = a
        .iter_rows()
        .zip(b.iter_rows())
        .map(|(x, y)| (x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / dims).sqrt())
        .sum();
    total / a.rows() as f64
}

/// Face unless the speech windows differ strictly more; ties go to face.
pub fn detect_manipulated_modality(real: &PreparedVideo, fake: &PreparedVideo) -> ManipulatedModality {
    let face = discrepancy(&real.face_window, &fake.face_window);
    let speech = discrepancy(&real.speech_window, &fake.speech_window);
    if speech > face {
        Modality::Speech
    } else {
        Modality::Face
    }
}

#[derive(Clone, Debug)]
pub struct PreparedPair {
    pub subject: String,
    pub real: PreparedVideo,
    pub fake: PreparedVideo,
    pub manipulated: ManipulatedModality,
    /// Emotion embeddings `[face_real, face_fake, speech_real, speech_fake]`
    /// when the emotion networks are frozen.
    frozen_emotion: Option<[Embedding; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_rho1: f64,
    pub mean_rho2: f64,
}

/// Per-pair losses of one optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub batch: usize,
    pub losses: Vec<LossBreakdown>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub history: Vec<EpochLog>,
    pub steps: Vec<StepRecord>,
}

struct Trainable<'a> {
    store: &'a ParamStore,
    nets: &'a DetectorNetworks,
    config: &'a TrainConfig,
}

impl Trainable<'_> {
    fn modality_score(&self, g: &mut Graph<'_>, pair: &PreparedPair) -> Result<Var> {
        let n = self.nets;
        let (anchor, positive, negative) = match pair.manipulated {
            Modality::Face => (
                n.speech_modality.forward(g, &pair.real.speech_window)?,
                n.face_modality.forward(g, &pair.real.face_window)?,
                n.face_modality.forward(g, &pair.fake.face_window)?,
            ),
            Modality::Speech => (
                n.face_modality.forward(g, &pair.real.face_window)?,
                n.speech_modality.forward(g, &pair.real.speech_window)?,
                n.speech_modality.forward(g, &pair.fake.speech_window)?,
            ),
        };
        let near = g.euclidean_distance(anchor, positive)?;
        let far = g.euclidean_distance(anchor, negative)?;
        Ok(g.sub(near, far)?)
    }

    fn emotion_score(&self, g: &mut Graph<'_>, pair: &PreparedPair) -> Result<Var> {
        let n = self.nets;
        let head = &n.emotion_head;
        let fr = n.face_emotion.forward(g, head, &pair.real.face_sequence)?.embedding;
        let ff = n.face_emotion.forward(g, head, &pair.fake.face_sequence)?.embedding;
        let sr = n.speech_emotion.forward(g, head, &pair.real.speech_sequence)?.embedding;
        let sf = n.speech_emotion.forward(g, head, &pair.fake.speech_sequence)?.embedding;
        let face = g.euclidean_distance(fr, ff)?;
        let speech = g.euclidean_distance(sr, sf)?;
        Ok(match pair.manipulated {
            Modality::Face => g.sub(speech, face)?,
            Modality::Speech => g.sub(face, speech)?,
        })
    }

    fn hinge(g: &mut Graph<'_>, score: Var, margin: f64) -> Result<Var> {
        let shifted = g.add_scalar(score, margin)?;
        Ok(g.relu(shifted)?)
    }

    /// Loss breakdown and, when the loss reaches a trainable parameter with
    /// a nonzero value, its gradients.
    fn pair_step(&self, pair: &PreparedPair) -> Result<(LossBreakdown, Option<Gradients>)> {
        let cfg = self.config;
        let mut g = Graph::new(self.store);
        let mut terms = Vec::new();
        let mut l1 = None;
        if !cfg.disable_rho1 {
            let s = self.modality_score(&mut g, pair)?;
            l1 = Some(g.value(s).item());
            terms.push(Self::hinge(&mut g, s, cfg.margin_modality)?);
        }
        let mut l2 = None;
        if !cfg.disable_rho2 {
            match &pair.frozen_emotion {
                Some([fr, ff, sr, sf]) => {
                    let quad = EmbeddingQuad {
                        face_real: fr.values(),
                        face_fake: ff.values(),
                        speech_real: sr.values(),
                        speech_fake: sf.values(),
                    };
                    l2 = Some(super::loss::similarity_score_2(&quad, pair.manipulated));
                }
                None => {
                    let s = self.emotion_score(&mut g, pair)?;
                    l2 = Some(g.value(s).item());
                    terms.push(Self::hinge(&mut g, s, cfg.margin_emotion)?);
                }
            }
        }
        let breakdown = LossBreakdown::from_scores(l1, l2, cfg.margin_modality, cfg.margin_emotion);
        if terms.is_empty() || breakdown.total == 0.0 {
            return Ok((breakdown, None));
        }
        let loss = match terms[..] {
            [one] => one,
            [a, b] => g.add(a, b)?,
            _ => unreachable!("at most two loss terms"),
        };
        if g.value(loss).item() == 0.0 {
            return Ok((breakdown, None));
        }
        Ok((breakdown, Some(g.backward(loss)?)))
    }
}

/// Standardizes and windows each pair, picks its manipulated modality and,
/// when the emotion networks stay frozen, caches their embeddings.
pub fn prepare_pairs(detector: &Detector, pairs: &[TrainPair], config: &TrainConfig) -> Result<Vec<PreparedPair>> {
    par::try_map(config.execution, pairs, |_, p| {
        let real = detector.prepare(&p.real)?;
        let fake = detector.prepare(&p.fake)?;
        let manipulated = detect_manipulated_modality(&real, &fake);
        let frozen_emotion = if config.fine_tune_emotion || config.disable_rho2 {
            None
        } else {
            let n = &detector.nets;
            let s = &detector.store;
            let h = &n.emotion_head;
            Some([
                n.face_emotion.embed(s, h, &real.face_sequence)?.0,
                n.face_emotion.embed(s, h, &fake.face_sequence)?.0,
                n.speech_emotion.embed(s, h, &real.speech_sequence)?.0,
                n.speech_emotion.embed(s, h, &fake.speech_sequence)?.0,
            ])
        };
        Ok(PreparedPair {
            subject: p.subject.clone(),
            real,
            fake,
            manipulated,
            frozen_emotion,
        })
    })
}

/// Scores every distinct video of `pairs` with `detector`.
pub(crate) fn score_pair_videos(detector: &Detector, pairs: &[PreparedPair], exec: Execution) -> Result<Vec<VideoScore>> {
    let mut videos: Vec<(&PreparedVideo, Label)> = Vec::with_capacity(2 * pairs.len());
    let mut seen = std::collections::HashSet::new();
    for p in pairs {
        for (v, label) in [(&p.real, Label::Real), (&p.fake, Label::Fake)] {
            if seen.insert(v.id.as_str()) {
                videos.push((v, label));
            }
        }
    }
    par::try_map(exec, &videos, |_, (v, label)| {
        let emb = detector.embed(v)?;
        Ok(score_embeddings(&v.id, &emb, Some(*label)))
    })
}

/// Per-pair losses of one batch and their mean gradient. Pairs are
/// evaluated independently (in parallel when `config.execution` allows)
/// and their gradients summed in input order, so the result does not
/// depend on the execution mode.
pub fn batch_gradients(detector: &Detector, batch: &[&PreparedPair], config: &TrainConfig) -> Result<(Vec<LossBreakdown>, Gradients)> {
    let step = Trainable {
        store: &detector.store,
        nets: &detector.nets,
        config,
    };
    let results = par::try_map(config.execution, batch, |_, pair| step.pair_step(pair))?;
    let mut grads = Gradients::empty(detector.store.len());
    let mut losses = Vec::with_capacity(results.len());
    for (breakdown, g) in results {
        if !breakdown.total.is_finite() {
            return Err(crate::autodiff::AutodiffError::NonFinite { op: "loss" }.into());
        }
        if let Some(g) = g {
            grads.accumulate(&g);
        }
        losses.push(breakdown);
    }
    if !losses.is_empty() {
        grads.scale(1.0 / losses.len() as f64);
    }
    Ok((losses, grads))
}

/// Trains the modality embedders (and the emotion embedders when
/// fine-tuning) on `pairs`, then learns the decision threshold on the same
/// videos.
pub fn fit(mut detector: Detector, pairs: &[TrainPair], config: &TrainConfig, mfcc: &MfccConfig) -> Result<(ModelCheckpoint, FitOutcome)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let prepared = prepare_pairs(&detector, pairs, config)?;
    let mut trainable_ids = detector.nets.modality_params();
    if config.fine_tune_emotion {
        trainable_ids.extend(detector.nets.emotion_params());
    }
    let mut adam = Adam::new(config.adam, trainable_ids, &detector.store);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut outcome = FitOutcome::default();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_rho1, mut sum_rho2) = (0.0, 0.0, 0.0);
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let items: Vec<&PreparedPair> = batch.iter().map(|i| &prepared[*i]).collect();
            let (losses, grads) = batch_gradients(&detector, &items, config).map_err(|e| {
                if e.is_numerical() {
                    log::error!("epoch {epoch}, batch {batch_index}: {e}");
                    Error::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                    }
                } else {
                    e
                }
            })?;
            for b in &losses {
                sum_total += b.total;
                sum_rho1 += b.rho1;
                sum_rho2 += b.rho2;
            }
            adam.step(&mut detector.store, &grads)?;
            outcome.steps.push(StepRecord {
                epoch,
                batch: batch_index,
                losses,
            });
        }
        let n = prepared.len() as f64;
        let log = EpochLog {
            epoch,
            mean_loss: sum_total / n,
            mean_rho1: sum_rho1 / n,
            mean_rho2: sum_rho2 / n,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} (rho1 {:.6}, rho2 {:.6})",
            log.mean_loss,
            log.mean_rho1,
            log.mean_rho2
        );
        outcome.history.push(log);
    }

    let train_scores = score_pair_videos(&detector, &prepared, config.execution)?;
    let tau = compute_threshold(&train_scores, config.threshold_mode)?;
    let checkpoint = ModelCheckpoint {
        detector,
        train: config.clone(),
        mfcc: mfcc.clone(),
        tau,
    };
    Ok((checkpoint, outcome))
}
