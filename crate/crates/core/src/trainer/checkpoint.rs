//! Binary checkpoint: magic, version byte, little-endian u64 length of a
//! JSON metadata block, the block itself, then every parameter as
//! little-endian f64 in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::TrainConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::features::{MfccConfig, Standardizer};
use crate::model::Detector;
use crate::networks::NetworkConfig;

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"AVDF-CKPT";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Everything needed to score new videos.
#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub detector: Detector,
    pub train: TrainConfig,
    pub mfcc: MfccConfig,
    pub tau: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    networks: NetworkConfig,
    init_seed: u64,
    train: TrainConfig,
    mfcc: MfccConfig,
    tau: f64,
    face_stats: Standardizer,
    speech_stats: Standardizer,
    params: Vec<ParamEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = &self.detector;
        let mut offset = 0;
        let params = d
            .store
            .iter()
            .map(|(_, name, t)| {
                let e = ParamEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.len();
                e
            })
            .collect();
        let meta = Metadata {
            networks: d.config.clone(),
            init_seed: d.init_seed,
            train: self.train.clone(),
            mfcc: self.mfcc.clone(),
            tau: self.tau,
            face_stats: d.face_stats.clone(),
            speech_stats: d.speech_stats.clone(),
            params,
        };
        let json = serde_json::to_vec(&meta)?;
        let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 9 + json.len() + offset * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in d.store.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes.strip_prefix(CHECKPOINT_MAGIC.as_slice()).ok_or_else(|| bad("bad magic"))?;
        let (&version, rest) = rest.split_first().ok_or_else(|| bad("truncated header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        if rest.len() < 8 {
            return Err(bad("truncated header"));
        }
        let (len, rest) = rest.split_at(8);
        let len = u64::from_le_bytes(len.try_into().expect("eight bytes")) as usize;
        if rest.len() < len {
            return Err(bad("truncated metadata"));
        }
        let (json, blob) = rest.split_at(len);
        let meta: Metadata = serde_json::from_slice(json)?;
        if blob.len() % 8 != 0 {
            return Err(bad("parameter blob is not a whole number of f64 values"));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();

        let mut detector = Detector::new(meta.networks, meta.face_stats, meta.speech_stats, meta.init_seed)?;
        if meta.params.len() != detector.store.len() {
            return Err(bad(format!(
                "checkpoint has {} parameters, architecture has {}",
                meta.params.len(),
                detector.store.len()
            )));
        }
        let ids: Vec<_> = detector.store.ids().collect();
        for (id, entry) in ids.into_iter().zip(&meta.params) {
            let current = detector.store.get(id);
            if detector.store.name(id) != entry.name || current.shape() != entry.shape.as_slice() {
                return Err(bad(format!("parameter `{}` does not match the architecture", entry.name)));
            }
            let end = entry.offset + current.len();
            let data = values
                .get(entry.offset..end)
                .ok_or_else(|| bad(format!("parameter `{}` runs past the blob", entry.name)))?;
            *detector.store.get_mut(id) = Tensor::new(entry.shape.clone(), data.to_vec())?;
        }
        Ok(Self {
            detector,
            train: meta.train,
            mfcc: meta.mfcc,
            tau: meta.tau,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes)
    }
}
