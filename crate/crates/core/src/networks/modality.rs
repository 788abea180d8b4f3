use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Embedding, NetworkError, EMBEDDING_DIM};
use crate::autodiff::{xavier_uniform, Conv2dSpec, Graph, ParamId, ParamStore, Tensor, Var};
use crate::features::{FeatureMatrix, FACE_DIM, SPEECH_DIM};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerConfig {
    pub channels: usize,
    pub kernel: [usize; 2],
    pub stride: usize,
    pub padding: usize,
    pub pool: [usize; 2],
}

impl ConvLayerConfig {
    fn same_3x3(channels: usize) -> Self {
        Self {
            channels,
            kernel: [3, 3],
            stride: 1,
            padding: 1,
            pool: [2, 2],
        }
    }
}

/// Conv stack over a `frames × dims` window, then fully connected layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityEmbedderConfig {
    pub window_frames: usize,
    pub feature_dims: usize,
    pub conv: Vec<ConvLayerConfig>,
    /// Widths of the fully connected layers; the last one is the embedding.
    pub fully_connected: Vec<usize>,
}

impl ModalityEmbedderConfig {
    fn default_for(window_frames: usize, feature_dims: usize) -> Self {
        Self {
            window_frames,
            feature_dims,
            conv: vec![
                ConvLayerConfig::same_3x3(8),
                ConvLayerConfig::same_3x3(16),
                ConvLayerConfig::same_3x3(32),
            ],
            fully_connected: vec![512, EMBEDDING_DIM],
        }
    }

    pub fn face_default() -> Self {
        Self::default_for(64, FACE_DIM)
    }

    pub fn speech_default() -> Self {
        Self::default_for(256, SPEECH_DIM)
    }

    /// `[C, H, W]` after each conv block.
    pub fn feature_map_shapes(&self) -> Result<Vec<[usize; 3]>, NetworkError> {
        let mut shape = [1, self.window_frames, self.feature_dims];
        let mut out = Vec::with_capacity(self.conv.len());
        for (i, layer) in self.conv.iter().enumerate() {
            let bad = |why: &str| NetworkError::InvalidConfig(format!("conv layer {i}: {why}"));
            if layer.channels == 0 || layer.stride == 0 || layer.kernel.contains(&0) || layer.pool.contains(&0) {
                return Err(bad("extents must be positive"));
            }
            let mut next = [layer.channels, 0, 0];
            for axis in 0..2 {
                let padded = shape[axis + 1] + 2 * layer.padding;
                if padded < layer.kernel[axis] {
                    return Err(bad("kernel larger than padded input"));
                }
                let conv = (padded - layer.kernel[axis]) / layer.stride + 1;
                if conv < layer.pool[axis] {
                    return Err(bad("pool window larger than feature map"));
                }
                next[axis + 1] = conv / layer.pool[axis];
            }
            shape = next;
            out.push(shape);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.window_frames == 0 || self.feature_dims == 0 {
            return Err(NetworkError::InvalidConfig("window extents must be positive".into()));
        }
        if self.fully_connected.last() != Some(&EMBEDDING_DIM) {
            return Err(NetworkError::InvalidConfig(format!("final width must be {EMBEDDING_DIM}")));
        }
        if self.fully_connected.contains(&0) {
            return Err(NetworkError::InvalidConfig("layer widths must be positive".into()));
        }
        self.feature_map_shapes().map(|_| ())
    }

    fn flat_width(&self) -> Result<usize, NetworkError> {
        Ok(match self.feature_map_shapes()?.last() {
            Some(s) => s.iter().product(),
            None => self.window_frames * self.feature_dims,
        })
    }
}

#[derive(Clone, Debug)]
struct ConvParams {
    kernel: ParamId,
    bias: ParamId,
    spec: Conv2dSpec,
    pool: (usize, usize),
}

/// F1 / S1: conv → maxpool → ReLU blocks, ReLU between dense layers,
/// terminal unit normalization.
#[derive(Clone, Debug)]
pub struct ModalityEmbedder {
    name: &'static str,
    config: ModalityEmbedderConfig,
    convs: Vec<ConvParams>,
    dense: Vec<(ParamId, ParamId)>,
}

impl ModalityEmbedder {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &'static str,
        config: &ModalityEmbedderConfig,
        rng: &mut R,
    ) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut in_c = 1;
        let mut convs = Vec::new();
        for (i, layer) in config.conv.iter().enumerate() {
            let [kh, kw] = layer.kernel;
            let shape = [layer.channels, in_c, kh, kw];
            let kernel = store.insert(
                format!("{prefix}.conv{i}.kernel"),
                xavier_uniform(&shape, in_c * kh * kw, layer.channels * kh * kw, rng),
            )?;
            let bias = store.insert(format!("{prefix}.conv{i}.bias"), Tensor::zeros(&[layer.channels]))?;
            convs.push(ConvParams {
                kernel,
                bias,
                spec: Conv2dSpec {
                    stride: layer.stride,
                    padding: layer.padding,
                },
                pool: (layer.pool[0], layer.pool[1]),
            });
            in_c = layer.channels;
        }
        let mut width = config.flat_width()?;
        let mut dense = Vec::new();
        for (i, out) in config.fully_connected.iter().enumerate() {
            let w = store.insert(format!("{prefix}.fc{i}.weight"), xavier_uniform(&[*out, width], width, *out, rng))?;
            let b = store.insert(format!("{prefix}.fc{i}.bias"), Tensor::zeros(&[*out]))?;
            dense.push((w, b));
            width = *out;
        }
        Ok(Self {
            name: prefix,
            config: config.clone(),
            convs,
            dense,
        })
    }

    pub fn config(&self) -> &ModalityEmbedderConfig {
        &self.config
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.convs
            .iter()
            .flat_map(|c| [c.kernel, c.bias])
            .chain(self.dense.iter().flat_map(|(w, b)| [*w, *b]))
            .collect()
    }

    /// Kernel of conv block `layer`.
    pub fn conv_kernel(&self, layer: usize) -> Option<ParamId> {
        self.convs.get(layer).map(|c| c.kernel)
    }

    fn check_window(&self, input: &FeatureMatrix) -> Result<(), NetworkError> {
        if input.rows() != self.config.window_frames || input.cols() != self.config.feature_dims {
            return Err(NetworkError::WrongWindow {
                network: self.name,
                got_rows: input.rows(),
                got_cols: input.cols(),
                want_rows: self.config.window_frames,
                want_cols: self.config.feature_dims,
            });
        }
        Ok(())
    }

    /// Records the forward pass on `g`; returns the unit-norm embedding node.
    pub fn forward(&self, g: &mut Graph<'_>, input: &FeatureMatrix) -> Result<Var, NetworkError> {
        self.check_window(input)?;
        let x = Tensor::new(vec![1, input.rows(), input.cols()], input.data().to_vec())?;
        let mut h = g.constant(x)?;
        for c in &self.convs {
            let k = g.param(c.kernel);
            let b = g.param(c.bias);
            h = g.conv2d(h, k, Some(b), c.spec)?;
            h = g.maxpool2d(h, c.pool)?;
            h = g.relu(h)?;
        }
        h = g.flatten(h)?;
        let last = self.dense.len() - 1;
        for (i, (w, b)) in self.dense.iter().enumerate() {
            let (w, b) = (g.param(*w), g.param(*b));
            h = g.fully_connected(h, w, Some(b))?;
            if i < last {
                h = g.relu(h)?;
            }
        }
        Ok(g.unit_normalize(h)?)
    }

    pub fn embed(&self, store: &ParamStore, input: &FeatureMatrix) -> Result<Embedding, NetworkError> {
        let mut g = Graph::new(store);
        let out = self.forward(&mut g, input)?;
        Ok(Embedding(g.value(out).data().to_vec()))
    }
}
