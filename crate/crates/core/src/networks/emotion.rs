use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Embedding, EmotionDistribution, NetworkError, EMBEDDING_DIM, EMOTION_CLASSES};
use crate::autodiff::{lstm_cell_step, xavier_uniform, Graph, LstmParams, ParamId, ParamStore, Tensor, Var};
use crate::features::FeatureMatrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmotionEmbedderConfig {
    pub feature_dims: usize,
    pub hidden: usize,
    pub memory: usize,
    pub embedding_dim: usize,
    pub classes: usize,
    /// Longer sequences are mean-pooled over equal segments down to this many steps.
    pub max_steps: usize,
}

impl EmotionEmbedderConfig {
    pub fn for_dims(feature_dims: usize) -> Self {
        Self {
            feature_dims,
            hidden: 64,
            memory: 64,
            embedding_dim: EMBEDDING_DIM,
            classes: EMOTION_CLASSES,
            max_steps: 16,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.classes != EMOTION_CLASSES {
            return Err(NetworkError::InvalidConfig(format!("class count must be {EMOTION_CLASSES}")));
        }
        if self.embedding_dim != EMBEDDING_DIM {
            return Err(NetworkError::InvalidConfig(format!("embedding width must be {EMBEDDING_DIM}")));
        }
        if self.feature_dims == 0 || self.hidden == 0 || self.memory == 0 || self.max_steps == 0 {
            return Err(NetworkError::InvalidConfig("emotion embedder extents must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: String, out: usize, inp: usize, rng: &mut R) -> Result<Self, NetworkError> {
        let weight = store.insert(format!("{name}.weight"), xavier_uniform(&[out, inp], inp, out, rng))?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[out]))?;
        Ok(Self { weight, bias })
    }

    fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var, NetworkError> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        Ok(g.fully_connected(x, w, Some(b))?)
    }
}

/// Class head shared by the face and speech emotion embedders, so both
/// project into one label-aligned space.
#[derive(Clone, Copy, Debug)]
pub struct EmotionHead {
    dense: Dense,
}

impl EmotionHead {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, width: usize, classes: usize, rng: &mut R) -> Result<Self, NetworkError> {
        Ok(Self {
            dense: Dense::init(store, prefix.to_string(), classes, width, rng)?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.dense.weight, self.dense.bias]
    }
}

/// Graph nodes produced by one emotion forward pass.
#[derive(Clone, Copy, Debug)]
pub struct EmotionForward {
    /// Projection before normalization; the class head reads this.
    pub projection: Var,
    pub embedding: Var,
    pub logits: Var,
    pub probs: Var,
}

/// Single-view memory fusion network.
///
/// Per step: LSTM update, softmax attention over the concatenated hidden
/// states of steps t-1 and t, then a gated memory update
/// `u_t = retain ⊙ u_{t-1} + update ⊙ tanh(W·attended)`.
/// The embedding is the unit-normalized projection of `[u_T ‖ h_T]`.
#[derive(Clone, Debug)]
pub struct EmotionEmbedder {
    name: &'static str,
    config: EmotionEmbedderConfig,
    lstm: LstmParams,
    attention: Dense,
    proposal: Dense,
    retain: Dense,
    update: Dense,
    projection: Dense,
}

impl EmotionEmbedder {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &'static str,
        config: &EmotionEmbedderConfig,
        rng: &mut R,
    ) -> Result<Self, NetworkError> {
        config.validate()?;
        let (h, m) = (config.hidden, config.memory);
        let lstm = LstmParams::init(store, &format!("{prefix}.lstm"), config.feature_dims, h, rng)?;
        let attention = Dense::init(store, format!("{prefix}.attention"), 2 * h, 2 * h, rng)?;
        let proposal = Dense::init(store, format!("{prefix}.memory_proposal"), m, 2 * h, rng)?;
        let retain = Dense::init(store, format!("{prefix}.retain_gate"), m, 2 * h, rng)?;
        let update = Dense::init(store, format!("{prefix}.update_gate"), m, 2 * h, rng)?;
        let projection = Dense::init(store, format!("{prefix}.projection"), config.embedding_dim, m + h, rng)?;
        Ok(Self {
            name: prefix,
            config: config.clone(),
            lstm,
            attention,
            proposal,
            retain,
            update,
            projection,
        })
    }

    pub fn config(&self) -> &EmotionEmbedderConfig {
        &self.config
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.lstm.weight, self.lstm.bias];
        for d in [self.attention, self.proposal, self.retain, self.update, self.projection] {
            ids.extend([d.weight, d.bias]);
        }
        ids
    }

    pub fn lstm_weight(&self) -> ParamId {
        self.lstm.weight
    }

    pub fn forward(&self, g: &mut Graph<'_>, head: &EmotionHead, sequence: &FeatureMatrix) -> Result<EmotionForward, NetworkError> {
        if sequence.cols() != self.config.feature_dims {
            return Err(NetworkError::WrongDims {
                network: self.name,
                got: sequence.cols(),
                want: self.config.feature_dims,
            });
        }
        if sequence.rows() == 0 {
            return Err(NetworkError::EmptySequence(self.name));
        }
        let steps = sequence.pooled_rows(self.config.max_steps);
        let (hs, ms) = (self.config.hidden, self.config.memory);
        let mut h = g.constant(Tensor::zeros(&[hs]))?;
        let mut c = g.constant(Tensor::zeros(&[hs]))?;
        let mut u = g.constant(Tensor::zeros(&[ms]))?;
        for row in steps.iter_rows() {
            let x = g.constant(Tensor::vector(row.to_vec()))?;
            let (h_next, c_next) = lstm_cell_step(g, x, h, c, &self.lstm)?;
            let pair = g.concat(&[h, h_next])?;
            let scores = self.attention.apply(g, pair)?;
            let weights = g.softmax(scores)?;
            let attended = g.mul(weights, pair)?;
            let raw = self.proposal.apply(g, attended)?;
            let proposal = g.tanh(raw)?;
            let retain_raw = self.retain.apply(g, attended)?;
            let retain = g.sigmoid(retain_raw)?;
            let update_raw = self.update.apply(g, attended)?;
            let update = g.sigmoid(update_raw)?;
            let kept = g.mul(retain, u)?;
            let written = g.mul(update, proposal)?;
            u = g.add(kept, written)?;
            h = h_next;
            c = c_next;
        }
        let summary = g.concat(&[u, h])?;
        let projection = self.projection.apply(g, summary)?;
        let embedding = g.unit_normalize(projection)?;
        let logits = head.dense.apply(g, projection)?;
        let probs = g.softmax(logits)?;
        Ok(EmotionForward {
            projection,
            embedding,
            logits,
            probs,
        })
    }

    pub fn embed(
        &self,
        store: &ParamStore,
        head: &EmotionHead,
        sequence: &FeatureMatrix,
    ) -> Result<(Embedding, EmotionDistribution), NetworkError> {
        let mut g = Graph::new(store);
        let out = self.forward(&mut g, head, sequence)?;
        Ok((
            Embedding(g.value(out.embedding).data().to_vec()),
            EmotionDistribution(g.value(out.probs).data().to_vec()),
        ))
    }
}
