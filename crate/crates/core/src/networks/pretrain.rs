use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DetectorNetworks, Modality, NetworkError, EMOTION_CLASSES};
use crate::autodiff::{Adam, AdamConfig, Gradients, Graph, ParamStore};
use crate::features::FeatureMatrix;
use crate::par::{self, Execution};

#[derive(Clone, Debug, PartialEq)]
pub struct EmotionSample {
    pub features: FeatureMatrix,
    pub label: usize,
}

/// Labelled sequences for the face and speech emotion embedders.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmotionCorpus {
    pub face: Vec<EmotionSample>,
    pub speech: Vec<EmotionSample>,
}

impl EmotionCorpus {
    pub fn classes(&self) -> BTreeSet<usize> {
        self.face.iter().chain(&self.speech).map(|s| s.label).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Weight of the squared projection norm added to the cross-entropy.
    pub projection_penalty: f64,
    pub execution: Execution,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 16,
            adam: AdamConfig::default(),
            projection_penalty: 1e-3,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epoch_losses: Vec<f64>,
    pub face_accuracy: Option<f64>,
    pub speech_accuracy: Option<f64>,
}

struct SampleGrad {
    loss: f64,
    grads: Gradients,
}

fn sample_gradient(
    store: &ParamStore,
    nets: &DetectorNetworks,
    which: Modality,
    sample: &EmotionSample,
    penalty: f64,
) -> Result<SampleGrad, NetworkError> {
    let mut g = Graph::new(store);
    let out = nets.emotion(which).forward(&mut g, &nets.emotion_head, &sample.features)?;
    let ce = g.cross_entropy(out.probs, sample.label)?;
    let sq = g.dot(out.projection, out.projection)?;
    let reg = g.scale(sq, penalty)?;
    let loss = g.add(ce, reg)?;
    Ok(SampleGrad {
        loss: g.value(loss).item(),
        grads: g.backward(loss)?,
    })
}

/// Fraction of samples whose argmax class equals the label.
pub fn emotion_accuracy(store: &ParamStore, nets: &DetectorNetworks, which: Modality, samples: &[EmotionSample], exec: Execution) -> Result<f64, NetworkError> {
    let hits = par::try_map(exec, samples, |_, s| {
        let (_, dist) = nets.emotion(which).embed(store, &nets.emotion_head, &s.features)?;
        Ok::<_, NetworkError>(usize::from(dist.argmax() == s.label))
    })?;
    Ok(hits.iter().sum::<usize>() as f64 / samples.len().max(1) as f64)
}

/// Cross-entropy training of the face and speech emotion embedders and
/// their shared head. Only those parameters are updated.
pub fn emotion_pretrain(
    store: &mut ParamStore,
    nets: &DetectorNetworks,
    corpus: &EmotionCorpus,
    config: &PretrainConfig,
    seed: u64,
) -> Result<PretrainReport, NetworkError> {
    let classes = corpus.classes();
    if classes.len() < 2 {
        return Err(NetworkError::TooFewClasses(classes.len()));
    }
    if let Some(bad) = classes.iter().find(|c| **c >= EMOTION_CLASSES) {
        return Err(NetworkError::BadLabel {
            label: *bad,
            classes: EMOTION_CLASSES,
        });
    }
    if config.batch_size == 0 {
        return Err(NetworkError::InvalidConfig("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(config.adam, nets.emotion_params(), store);
    let mut face_order: Vec<usize> = (0..corpus.face.len()).collect();
    let mut speech_order: Vec<usize> = (0..corpus.speech.len()).collect();
    let batch = config.batch_size;
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        face_order.shuffle(&mut rng);
        speech_order.shuffle(&mut rng);
        let batches = face_order.len().div_ceil(batch).max(speech_order.len().div_ceil(batch));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for b in 0..batches {
            let mut items: Vec<(Modality, &EmotionSample)> = Vec::with_capacity(2 * batch);
            let window = |order: &[usize]| order.iter().skip(b * batch).take(batch).copied().collect::<Vec<_>>();
            items.extend(window(&face_order).into_iter().map(|i| (Modality::Face, &corpus.face[i])));
            items.extend(window(&speech_order).into_iter().map(|i| (Modality::Speech, &corpus.speech[i])));
            if items.is_empty() {
                continue;
            }
            let frozen: &ParamStore = store;
            let results = par::try_map(config.execution, &items, |_, (which, sample)| {
                sample_gradient(frozen, nets, *which, sample, config.projection_penalty)
            })?;
            let mut total = Gradients::empty(store.len());
            for r in &results {
                loss_sum += r.loss;
                total.accumulate(&r.grads);
            }
            seen += results.len();
            total.scale(1.0 / results.len() as f64);
            adam.step(store, &total)?;
        }
        let mean = loss_sum / seen.max(1) as f64;
        log::debug!("emotion pretrain epoch {}: mean loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }

    let face_accuracy = (!corpus.face.is_empty())
        .then(|| emotion_accuracy(store, nets, Modality::Face, &corpus.face, config.execution))
        .transpose()?;
    let speech_accuracy = (!corpus.speech.is_empty())
        .then(|| emotion_accuracy(store, nets, Modality::Speech, &corpus.speech, config.execution))
        .transpose()?;
    Ok(PretrainReport {
        epoch_losses,
        face_accuracy,
        speech_accuracy,
    })
}
