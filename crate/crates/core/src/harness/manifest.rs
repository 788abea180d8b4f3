use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{Generator, Split, SynthConfig, SynthVideo, VideoMeta};
use crate::error::{Error, Result};
use crate::features::{load_face_features, load_speech_features, write_face_features, write_speech_features};
use crate::model::{Label, VideoFeatures};
use crate::par::{self, Execution};

pub const MANIFEST_FORMAT: &str = "avdf_manifest_v1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub meta: VideoMeta,
    /// Relative to the manifest's directory.
    pub face_path: PathBuf,
    pub speech_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Manifest(msg.into())
}

impl DatasetManifest {
    /// Checks id uniqueness and that every fake points at a real of the
    /// same subject and split.
    pub fn validate(&self) -> Result<()> {
        if self.format != MANIFEST_FORMAT {
            return Err(bad(format!("format is `{}`, expected `{MANIFEST_FORMAT}`", self.format)));
        }
        let mut by_id: HashMap<&str, &VideoMeta> = HashMap::new();
        for e in &self.entries {
            if by_id.insert(&e.meta.id, &e.meta).is_some() {
                return Err(bad(format!("duplicate id `{}`", e.meta.id)));
            }
        }
        for e in &self.entries {
            let m = &e.meta;
            match (m.label, &m.paired_real) {
                (Label::Fake, Some(real)) => {
                    let r = by_id.get(real.as_str()).ok_or_else(|| bad(format!("`{}` pairs with unknown `{real}`", m.id)))?;
                    if r.label != Label::Real || r.subject != m.subject || r.split != m.split {
                        return Err(bad(format!("`{}` pairs with `{real}` across label, subject or split", m.id)));
                    }
                }
                (Label::Fake, None) => return Err(bad(format!("fake `{}` has no paired real", m.id))),
                (Label::Real, Some(_)) => return Err(bad(format!("real `{}` lists a paired real", m.id))),
                (Label::Real, None) => {}
            }
            if m.split == Split::Pretrain && m.label == Label::Fake {
                return Err(bad(format!("pretraining video `{}` is fake", m.id)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.meta.split == split)
    }
}

pub fn load_video(base: &Path, entry: &ManifestEntry) -> Result<VideoFeatures> {
    Ok(VideoFeatures {
        id: entry.meta.id.clone(),
        face: load_face_features(base.join(&entry.face_path))?,
        speech: load_speech_features(base.join(&entry.speech_path))?,
    })
}

/// Writes feature files under `dir/features` and the manifest to
/// `dir/manifest.json`.
pub fn write_corpus(videos: &[SynthVideo], seed: u64, dir: &Path, exec: Execution) -> Result<DatasetManifest> {
    let features = dir.join("features");
    std::fs::create_dir_all(&features).map_err(Error::io(&features))?;
    let entries = par::try_map(exec, videos, |_, v| -> Result<ManifestEntry> {
        let face_path = PathBuf::from("features").join(format!("{}.face", v.meta.id));
        let speech_path = PathBuf::from("features").join(format!("{}.mfcc", v.meta.id));
        write_face_features(dir.join(&face_path), &v.features.face)?;
        write_speech_features(dir.join(&speech_path), &v.features.speech)?;
        Ok(ManifestEntry {
            meta: v.meta.clone(),
            face_path,
            speech_path,
        })
    })?;
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.to_string(),
        seed,
        entries,
    };
    manifest.validate()?;
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json + "\n").map_err(Error::io(&path))?;
    Ok(manifest)
}

/// Generates the synthetic corpus and writes it to `dir`. Returns the
/// manifest path.
pub fn generate_corpus(config: &SynthConfig, dir: &Path, exec: Execution) -> Result<(PathBuf, DatasetManifest)> {
    let generator = Generator::new(config.clone())?;
    let videos = generator.generate(exec);
    let manifest = write_corpus(&videos, config.seed, dir, exec)?;
    Ok((dir.join(MANIFEST_FILE), manifest))
}
