use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{load_video, DatasetManifest};
use super::synth::Split;
use crate::error::{Error, Result};
use crate::features::MfccConfig;
use crate::model::{Detector, Label, VideoFeatures};
use crate::networks::{emotion_pretrain, EmotionCorpus, EmotionSample, NetworkConfig, PretrainConfig, PretrainReport};
use crate::par::{self, Execution};
use crate::scorer::{labelled_auc, ScoreRecord, VideoScore};
use crate::trainer::{fit, EpochLog, ModelCheckpoint, TrainConfig, TrainPair};

/// Upper end of the distance histograms: the diameter of the unit sphere.
pub const MAX_DISTANCE: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub networks: NetworkConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub mfcc: MfccConfig,
    pub histogram_bins: usize,
    /// Seed of the network initialization and of emotion pretraining.
    pub seed: u64,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            networks: NetworkConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            mfcc: MfccConfig::default(),
            histogram_bins: 20,
            seed: 7,
            execution: Execution::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.networks.validate()?;
        self.train.validate()?;
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be at least 1".into()));
        }
        if self.pretrain.batch_size == 0 {
            return Err(Error::Config("pretrain.batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoRho1,
    NoRho2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoRho1, Variant::NoRho2];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRho1 => "no_rho1",
            Variant::NoRho2 => "no_rho2",
        }
    }

    fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoRho1 => {
                c.disable_rho1 = true;
                c.disable_rho2 = false;
            }
            Variant::NoRho2 => {
                c.disable_rho1 = false;
                c.disable_rho2 = true;
            }
        }
        c
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMeans {
    pub real: f64,
    pub fake: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin `i` covers `[edges[i], edges[i + 1])`; the last bin is closed.
    pub edges: Vec<f64>,
    pub real: Vec<usize>,
    pub fake: Vec<usize>,
}

impl Histogram {
    pub fn new(bins: usize, lo: f64, hi: f64) -> Self {
        let width = (hi - lo) / bins as f64;
        Self {
            edges: (0..=bins).map(|i| lo + width * i as f64).collect(),
            real: vec![0; bins],
            fake: vec![0; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.real.len()
    }

    pub fn add(&mut self, value: f64, label: Label) {
        let bins = self.bins();
        let (lo, hi) = (self.edges[0], self.edges[bins]);
        let i = (((value - lo) / (hi - lo)) * bins as f64).floor();
        let i = if i.is_nan() { 0 } else { (i.max(0.0) as usize).min(bins - 1) };
        match label {
            Label::Real => self.real[i] += 1,
            Label::Fake => self.fake[i] += 1,
        }
    }
}

/// Videos whose face and speech emotion argmax disagree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchCounts {
    pub real_mismatched: usize,
    pub real_total: usize,
    pub fake_mismatched: usize,
    pub fake_total: usize,
}

impl MismatchCounts {
    pub fn real_rate(&self) -> f64 {
        self.real_mismatched as f64 / self.real_total.max(1) as f64
    }

    pub fn fake_rate(&self) -> f64 {
        self.fake_mismatched as f64 / self.fake_total.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub auc: f64,
    pub tau: f64,
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub auc: f64,
    pub tau: f64,
    pub accuracy: f64,
    pub test_real: usize,
    pub test_fake: usize,
    pub mean_d_m: ClassMeans,
    pub mean_d_e: ClassMeans,
    pub d_m_histogram: Histogram,
    pub d_e_histogram: Histogram,
    pub mismatch: MismatchCounts,
    pub pretrain: Option<PretrainReport>,
    pub training: Vec<EpochLog>,
    pub ablation: Vec<AblationRow>,
    pub scores: Vec<ScoreRecord>,
}

/// Videos of a manifest loaded into memory and grouped by role.
pub struct LoadedCorpus {
    pub train_pairs: Vec<TrainPair>,
    pub train_videos: Vec<VideoFeatures>,
    pub test: Vec<(VideoFeatures, Label)>,
    pub pretrain: Vec<(VideoFeatures, usize, usize)>,
}

pub fn load_corpus(manifest: &DatasetManifest, base: &Path, exec: Execution) -> Result<LoadedCorpus> {
    manifest.validate()?;
    let videos = par::try_map(exec, &manifest.entries, |_, e| load_video(base, e))?;
    let index: HashMap<&str, usize> = manifest.entries.iter().enumerate().map(|(i, e)| (e.meta.id.as_str(), i)).collect();
    let mut corpus = LoadedCorpus {
        train_pairs: Vec::new(),
        train_videos: Vec::new(),
        test: Vec::new(),
        pretrain: Vec::new(),
    };
    for (entry, video) in manifest.entries.iter().zip(&videos) {
        let m = &entry.meta;
        match m.split {
            Split::Train => {
                corpus.train_videos.push(video.clone());
                if let Some(real) = &m.paired_real {
                    corpus.train_pairs.push(TrainPair {
                        subject: m.subject.clone(),
                        real: videos[index[real.as_str()]].clone(),
                        fake: video.clone(),
                    });
                }
            }
            Split::Test => corpus.test.push((video.clone(), m.label)),
            Split::Pretrain => corpus.pretrain.push((video.clone(), m.face_emotion, m.speech_emotion)),
        }
    }
    Ok(corpus)
}

/// Standardized, labelled emotion sequences.
pub fn emotion_corpus(detector: &Detector, videos: &[(VideoFeatures, usize, usize)], exec: Execution) -> Result<EmotionCorpus> {
    let prepared = par::try_map(exec, videos, |_, (v, fe, se)| {
        let p = detector.prepare(v)?;
        Ok::<_, Error>((
            EmotionSample {
                features: p.face_sequence,
                label: *fe,
            },
            EmotionSample {
                features: p.speech_sequence,
                label: *se,
            },
        ))
    })?;
    let (face, speech) = prepared.into_iter().unzip();
    Ok(EmotionCorpus { face, speech })
}

/// Detector with fitted standardizers and, when a pretraining split is
/// present, pretrained emotion embedders.
pub fn prepare_detector(corpus: &LoadedCorpus, config: &ExperimentConfig) -> Result<(Detector, Option<PretrainReport>)> {
    if corpus.train_pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (face_stats, speech_stats) = Detector::fit_standardizers(&corpus.train_videos)?;
    let mut detector = Detector::new(config.networks.clone(), face_stats, speech_stats, config.seed)?;
    if corpus.pretrain.is_empty() || config.pretrain.epochs == 0 {
        return Ok((detector, None));
    }
    let emotions = emotion_corpus(&detector, &corpus.pretrain, config.execution)?;
    let mut pretrain = config.pretrain.clone();
    pretrain.execution = config.execution;
    let report = emotion_pretrain(&mut detector.store, &detector.nets, &emotions, &pretrain, config.seed)?;
    log::info!(
        "emotion pretraining accuracy: face {:?}, speech {:?}",
        report.face_accuracy,
        report.speech_accuracy
    );
    Ok((detector, Some(report)))
}

/// Scores for every test video plus emotion-mismatch flags.
fn score_test(checkpoint: &ModelCheckpoint, test: &[(VideoFeatures, Label)], exec: Execution) -> Result<Vec<(VideoScore, bool)>> {
    let d = &checkpoint.detector;
    par::try_map(exec, test, |_, (video, label)| {
        let emb = d.embed(&d.prepare(video)?)?;
        let score = crate::scorer::score_embeddings(&video.id, &emb, Some(*label));
        Ok(score_with_mismatch(score, &emb))
    })
}

fn score_with_mismatch(score: VideoScore, emb: &crate::model::VideoEmbeddings) -> (VideoScore, bool) {
    (score, emb.face_distribution.argmax() != emb.speech_distribution.argmax())
}

pub struct VariantRun {
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<EpochLog>,
    pub scores: Vec<(VideoScore, bool)>,
    pub auc: f64,
}

pub fn run_variant(
    detector: &Detector,
    corpus: &LoadedCorpus,
    config: &ExperimentConfig,
    variant: Variant,
) -> Result<VariantRun> {
    if corpus.test.is_empty() {
        return Err(Error::EmptyTestSplit);
    }
    let mut train = variant.apply(&config.train);
    train.execution = config.execution;
    log::info!("training variant {}", variant.name());
    let (checkpoint, outcome) = fit(detector.clone(), &corpus.train_pairs, &train, &config.mfcc)?;
    let scores = score_test(&checkpoint, &corpus.test, config.execution)?;
    let plain: Vec<VideoScore> = scores.iter().map(|(s, _)| s.clone()).collect();
    let auc = labelled_auc(&plain)?;
    log::info!("variant {}: test AUC {auc:.4}", variant.name());
    Ok(VariantRun {
        checkpoint,
        history: outcome.history,
        scores,
        auc,
    })
}

fn report_from(run: &VariantRun, pretrain: Option<PretrainReport>, config: &ExperimentConfig) -> ExperimentReport {
    let tau = run.checkpoint.tau;
    let bins = config.histogram_bins;
    let mut d_m_histogram = Histogram::new(bins, 0.0, MAX_DISTANCE);
    let mut d_e_histogram = Histogram::new(bins, 0.0, MAX_DISTANCE);
    let mut mismatch = MismatchCounts::default();
    let mut sums = [[0.0; 2]; 2];
    let mut correct = 0;
    for (s, mismatched) in &run.scores {
        let label = s.label.expect("test scores are labelled");
        d_m_histogram.add(s.d_m, label);
        d_e_histogram.add(s.d_e, label);
        let k = usize::from(label.is_fake());
        sums[k][0] += s.d_m;
        sums[k][1] += s.d_e;
        match label {
            Label::Real => {
                mismatch.real_total += 1;
                mismatch.real_mismatched += usize::from(*mismatched);
            }
            Label::Fake => {
                mismatch.fake_total += 1;
                mismatch.fake_mismatched += usize::from(*mismatched);
            }
        }
        correct += usize::from(crate::scorer::classify(s.score, tau) == label);
    }
    let (nr, nf) = (mismatch.real_total as f64, mismatch.fake_total as f64);
    ExperimentReport {
        seed: config.seed,
        auc: run.auc,
        tau,
        accuracy: correct as f64 / run.scores.len() as f64,
        test_real: mismatch.real_total,
        test_fake: mismatch.fake_total,
        mean_d_m: ClassMeans {
            real: sums[0][0] / nr,
            fake: sums[1][0] / nf,
        },
        mean_d_e: ClassMeans {
            real: sums[0][1] / nr,
            fake: sums[1][1] / nf,
        },
        d_m_histogram,
        d_e_histogram,
        mismatch,
        pretrain,
        training: run.history.clone(),
        ablation: Vec::new(),
        scores: run.scores.iter().map(|(s, _)| ScoreRecord::new(s, tau)).collect(),
    }
}

fn ablation_row(variant: Variant, run: &VariantRun) -> AblationRow {
    AblationRow {
        variant,
        auc: run.auc,
        tau: run.checkpoint.tau,
        final_loss: run.history.last().map(|h| h.mean_loss),
    }
}

/// Full experiment on a loaded corpus. Returns the report and the full
/// model's checkpoint.
pub fn run_loaded(corpus: &LoadedCorpus, config: &ExperimentConfig, ablate: bool) -> Result<(ExperimentReport, ModelCheckpoint)> {
    config.validate()?;
    if corpus.test.is_empty() {
        return Err(Error::EmptyTestSplit);
    }
    let (detector, pretrain) = prepare_detector(corpus, config)?;
    let full = run_variant(&detector, corpus, config, Variant::Full)?;
    let mut report = report_from(&full, pretrain, config);
    if ablate {
        report.ablation.push(ablation_row(Variant::Full, &full));
        for variant in [Variant::NoRho1, Variant::NoRho2] {
            let run = run_variant(&detector, corpus, config, variant)?;
            report.ablation.push(ablation_row(variant, &run));
        }
    }
    Ok((report, full.checkpoint))
}

/// Loads the manifest at `manifest_path` and runs [`run_loaded`].
pub fn run_experiment(manifest_path: &Path, config: &ExperimentConfig, ablate: bool) -> Result<(ExperimentReport, ModelCheckpoint)> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let corpus = load_corpus(&manifest, base, config.execution)?;
    run_loaded(&corpus, config, ablate)
}
