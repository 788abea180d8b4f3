//! Seeded synthetic audio-visual corpus. Every video has a latent made of a
//! scaled one-hot emotion and a per-subject style vector; fixed random
//! linear decoders map it to face and speech frames under a shared
//! sinusoidal envelope plus white noise. A fake re-renders one or both
//! modalities from a latent with a different emotion, reusing the real
//! video's envelope and noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FaceFeatureSequence, FeatureMatrix, SpeechFeatureSequence, FACE_DIM, SPEECH_DIM};
use crate::model::{Label, VideoFeatures};
use crate::networks::{Modality, EMOTION_CLASSES};
use crate::par::{self, Execution};

pub const STYLE_DIM: usize = 8;
const LATENT_DIM: usize = EMOTION_CLASSES + STYLE_DIM;
/// Generated values are rounded to this step to keep feature files compact.
const QUANTUM: f64 = 1e-5;

const STREAM_DETECTION: u64 = 0;
const STREAM_PRETRAIN: u64 = 1;
const STREAM_DECODERS: u64 = 2;
const STREAM_SUBJECTS: u64 = 3;
const STREAM_SPLIT: u64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManipulationMode {
    Face,
    Speech,
    Both,
    /// Cycles face, speech, both over the pairs.
    #[default]
    Mixed,
}

impl ManipulationMode {
    fn for_pair(self, index: usize) -> ManipulationMode {
        match self {
            ManipulationMode::Mixed => [Self::Face, Self::Speech, Self::Both][index % 3],
            other => other,
        }
    }

    fn touches(self, m: Modality) -> bool {
        matches!(
            (self, m),
            (Self::Both, _) | (Self::Face, Modality::Face) | (Self::Speech, Modality::Speech)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub subjects: usize,
    /// Real videos per subject; each gets one fake.
    pub videos_per_subject: usize,
    pub face_frames: usize,
    pub speech_frames: usize,
    pub face_rate: f64,
    pub hop_seconds: f64,
    pub manipulation: ManipulationMode,
    /// 0 leaves the fake equal to its real; 1 swaps the emotion fully.
    pub strength: f64,
    /// Standard deviation of the white noise.
    pub noise: f64,
    /// Scale of the one-hot emotion part of the latent.
    pub emotion_gain: f64,
    /// Standard deviation of the style part of the latent.
    pub style_scale: f64,
    /// Relative depth of the temporal envelope.
    pub envelope_depth: f64,
    /// Fraction of subjects assigned to the training split.
    pub train_fraction: f64,
    /// Labelled videos per emotion class for emotion pretraining.
    pub pretrain_videos_per_class: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 200,
            videos_per_subject: 1,
            face_frames: 64,
            speech_frames: 256,
            face_rate: 25.0,
            hop_seconds: 0.01,
            manipulation: ManipulationMode::Mixed,
            strength: 1.0,
            noise: 0.2,
            emotion_gain: 4.0,
            style_scale: 0.25,
            envelope_depth: 0.5,
            train_fraction: 0.85,
            pretrain_videos_per_class: 24,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synth.{m}")));
        if self.subjects == 0 || self.videos_per_subject == 0 {
            return fail("subjects and videos_per_subject must be at least 1");
        }
        if self.face_frames == 0 || self.speech_frames == 0 {
            return fail("frame counts must be at least 1");
        }
        if !(self.face_rate > 0.0 && self.hop_seconds > 0.0) {
            return fail("face_rate and hop_seconds must be positive");
        }
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return fail("strength must be a finite nonnegative number");
        }
        for (name, v) in [
            ("noise", self.noise),
            ("emotion_gain", self.emotion_gain),
            ("style_scale", self.style_scale),
            ("envelope_depth", self.envelope_depth),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(&format!("{name} must be a finite nonnegative number"));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return fail("train_fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Pretrain,
}

/// Ground truth for one generated video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub id: String,
    pub subject: String,
    pub label: Label,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paired_real: Option<String>,
    /// Emotion of the latent that rendered each modality.
    pub face_emotion: usize,
    pub speech_emotion: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub meta: VideoMeta,
    pub features: VideoFeatures,
}

struct Decoder {
    weight: Vec<f64>,
    bias: Vec<f64>,
    dims: usize,
}

impl Decoder {
    fn sample(rng: &mut ChaCha8Rng, dims: usize) -> Self {
        let scale = 1.0 / (LATENT_DIM as f64).sqrt();
        let weight = (0..dims * LATENT_DIM).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let bias = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
        Self { weight, bias, dims }
    }

    fn project(&self, z: &[f64; LATENT_DIM]) -> Vec<f64> {
        (0..self.dims)
            .map(|d| self.weight[d * LATENT_DIM..(d + 1) * LATENT_DIM].iter().zip(z).map(|(w, x)| w * x).sum())
            .collect()
    }
}

/// Per-video draws shared by a real video and its fake.
struct Take {
    phase: f64,
    frequency: f64,
    face_noise: Vec<f64>,
    speech_noise: Vec<f64>,
}

pub struct Generator {
    config: SynthConfig,
    face: Decoder,
    speech: Decoder,
}

fn quantize(x: f64) -> f64 {
    (x / QUANTUM).round() * QUANTUM
}

fn video_rng(seed: u64, index: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index as u64);
    rng.set_stream(stream);
    rng
}

fn other_emotion(rng: &mut ChaCha8Rng, avoid: &[usize]) -> usize {
    loop {
        let e = rng.gen_range(0..EMOTION_CLASSES);
        if !avoid.contains(&e) {
            return e;
        }
    }
}

impl Generator {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(STREAM_DECODERS);
        let face = Decoder::sample(&mut rng, FACE_DIM);
        let speech = Decoder::sample(&mut rng, SPEECH_DIM);
        Ok(Self { config, face, speech })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    fn latent(&self, emotion: usize, style: &[f64; STYLE_DIM]) -> [f64; LATENT_DIM] {
        let mut z = [0.0; LATENT_DIM];
        z[emotion] = self.config.emotion_gain;
        z[EMOTION_CLASSES..].copy_from_slice(style);
        z
    }

    fn style(&self, rng: &mut ChaCha8Rng) -> [f64; STYLE_DIM] {
        std::array::from_fn(|_| self.config.style_scale * rng.sample::<f64, _>(StandardNormal))
    }

    fn subject_style(&self, subject: usize) -> [f64; STYLE_DIM] {
        self.style(&mut video_rng(self.config.seed, subject, STREAM_SUBJECTS))
    }

    fn take(&self, rng: &mut ChaCha8Rng) -> Take {
        let c = &self.config;
        let mut noise = |n: usize| -> Vec<f64> { (0..n).map(|_| c.noise * rng.sample::<f64, _>(StandardNormal)).collect() };
        let face_noise = noise(c.face_frames * FACE_DIM);
        let speech_noise = noise(c.speech_frames * SPEECH_DIM);
        Take {
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            frequency: rng.gen_range(0.3..1.0),
            face_noise,
            speech_noise,
        }
    }

    fn render(&self, which: Modality, z: &[f64; LATENT_DIM], take: &Take) -> FeatureMatrix {
        let c = &self.config;
        let (decoder, frames, dt, noise) = match which {
            Modality::Face => (&self.face, c.face_frames, 1.0 / c.face_rate, &take.face_noise),
            Modality::Speech => (&self.speech, c.speech_frames, c.hop_seconds, &take.speech_noise),
        };
        let signal = decoder.project(z);
        let dims = decoder.dims;
        let mut data = Vec::with_capacity(frames * dims);
        for t in 0..frames {
            let env = 1.0 + c.envelope_depth * (std::f64::consts::TAU * take.frequency * t as f64 * dt + take.phase).sin();
            for d in 0..dims {
                data.push(quantize(env * signal[d] + decoder.bias[d] + noise[t * dims + d]));
            }
        }
        FeatureMatrix::new(frames, dims, data).expect("rendered shape is consistent")
    }

    fn features(&self, id: String, face: FeatureMatrix, speech: FeatureMatrix) -> VideoFeatures {
        VideoFeatures {
            id,
            face: FaceFeatureSequence {
                frames: face,
                frame_rate: self.config.face_rate,
            },
            speech: SpeechFeatureSequence {
                frames: speech,
                hop_seconds: self.config.hop_seconds,
            },
        }
    }

    /// The real video of pair `index` and its fake.
    pub fn pair(&self, index: usize, split: Split) -> (SynthVideo, SynthVideo) {
        let c = &self.config;
        let subject_index = index / c.videos_per_subject;
        let subject = format!("s{subject_index:04}");
        let base = format!("{subject}_v{}", index % c.videos_per_subject);
        let style = self.subject_style(subject_index);
        let mut rng = video_rng(c.seed, index, STREAM_DETECTION);
        let emotion = rng.gen_range(0..EMOTION_CLASSES);
        let take = self.take(&mut rng);
        let z = self.latent(emotion, &style);
        let face = self.render(Modality::Face, &z, &take);
        let speech = self.render(Modality::Speech, &z, &take);

        let mode = c.manipulation.for_pair(index);
        let face_target = other_emotion(&mut rng, &[emotion]);
        let speech_target = if mode == ManipulationMode::Both {
            other_emotion(&mut rng, &[emotion, face_target])
        } else {
            other_emotion(&mut rng, &[emotion])
        };
        let alpha = c.strength;
        let blend = |target: usize| -> [f64; LATENT_DIM] {
            let z2 = self.latent(target, &style);
            std::array::from_fn(|k| (1.0 - alpha) * z[k] + alpha * z2[k])
        };
        let dominant = |target: usize| if alpha >= 0.5 { target } else { emotion };
        let (fake_face, fake_face_emotion) = if mode.touches(Modality::Face) {
            (self.render(Modality::Face, &blend(face_target), &take), dominant(face_target))
        } else {
            (face.clone(), emotion)
        };
        let (fake_speech, fake_speech_emotion) = if mode.touches(Modality::Speech) {
            (self.render(Modality::Speech, &blend(speech_target), &take), dominant(speech_target))
        } else {
            (speech.clone(), emotion)
        };

        let real_id = format!("{base}_real");
        let fake_id = format!("{base}_fake");
        let real = SynthVideo {
            meta: VideoMeta {
                id: real_id.clone(),
                subject: subject.clone(),
                label: Label::Real,
                split,
                paired_real: None,
                face_emotion: emotion,
                speech_emotion: emotion,
            },
            features: self.features(real_id.clone(), face, speech),
        };
        let fake = SynthVideo {
            meta: VideoMeta {
                id: fake_id.clone(),
                subject,
                label: Label::Fake,
                split,
                paired_real: Some(real_id),
                face_emotion: fake_face_emotion,
                speech_emotion: fake_speech_emotion,
            },
            features: self.features(fake_id, fake_face, fake_speech),
        };
        (real, fake)
    }

    /// Labelled real video number `index` of the emotion pretraining set.
    pub fn pretrain_video(&self, index: usize) -> SynthVideo {
        let c = &self.config;
        let emotion = index % EMOTION_CLASSES;
        let mut rng = video_rng(c.seed, index, STREAM_PRETRAIN);
        let style = self.style(&mut rng);
        let take = self.take(&mut rng);
        let z = self.latent(emotion, &style);
        let id = format!("p{index:04}");
        SynthVideo {
            meta: VideoMeta {
                id: id.clone(),
                subject: id.clone(),
                label: Label::Real,
                split: Split::Pretrain,
                paired_real: None,
                face_emotion: emotion,
                speech_emotion: emotion,
            },
            features: self.features(id, self.render(Modality::Face, &z, &take), self.render(Modality::Speech, &z, &take)),
        }
    }

    /// Train/test assignment per subject.
    pub fn subject_splits(&self) -> Vec<Split> {
        use rand::seq::SliceRandom;
        let n = self.config.subjects;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(STREAM_SPLIT);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let train = ((n as f64 * self.config.train_fraction).round() as usize).clamp(1, n);
        let mut splits = vec![Split::Test; n];
        for &s in &order[..train] {
            splits[s] = Split::Train;
        }
        splits
    }

    /// Every video of the corpus: pairs in index order (real then fake),
    /// followed by the pretraining videos.
    pub fn generate(&self, exec: Execution) -> Vec<SynthVideo> {
        let c = &self.config;
        let splits = self.subject_splits();
        let pairs: Vec<usize> = (0..c.subjects * c.videos_per_subject).collect();
        let mut out = Vec::with_capacity(2 * pairs.len());
        for (real, fake) in par::map(exec, &pairs, |_, &i| self.pair(i, splits[i / c.videos_per_subject])) {
            out.push(real);
            out.push(fake);
        }
        let pre: Vec<usize> = (0..c.pretrain_videos_per_class * EMOTION_CLASSES).collect();
        out.extend(par::map(exec, &pre, |_, &i| self.pretrain_video(i)));
        out
    }
}
