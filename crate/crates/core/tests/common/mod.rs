#![allow(dead_code)]

pub mod checks;

use avdf_core::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Entries bounded away from zero, so kinks are never crossed.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel: f64,
    pub checked: usize,
    /// Entries whose ±h probes landed on different sides of a ReLU or
    /// pooling kink; central differences say nothing there.
    pub straddled: usize,
    /// Analytic and numeric values at the worst entry.
    pub worst: (f64, f64),
}

/// Below this magnitude a central difference at `FD_STEP` is mostly
/// rounding noise, so errors are measured relative to the floor instead.
pub const FD_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

fn eval(store: &ParamStore, loss: &impl Fn(&mut Graph<'_>) -> Var) -> (f64, Vec<usize>) {
    let mut g = Graph::new(store);
    let v = loss(&mut g);
    (g.value(v).item(), g.branch_pattern())
}

/// Central finite differences against backprop for the listed parameters.
/// With `per_param = Some(n)`, only `n` random entries of each tensor are
/// probed.
pub fn fd_check(
    store: &mut ParamStore,
    ids: &[ParamId],
    per_param: Option<usize>,
    seed: u64,
    loss: impl Fn(&mut Graph<'_>) -> Var,
) -> FdReport {
    let (analytic, pattern): (Vec<Tensor>, Vec<usize>) = {
        let mut g = Graph::new(store);
        let v = loss(&mut g);
        let pattern = g.branch_pattern();
        let grads = g.backward(v).unwrap();
        (ids.iter().map(|id| grads.dense(*id, store)).collect(), pattern)
    };
    let mut r = rng(seed);
    let mut report = FdReport {
        max_rel: 0.0,
        checked: 0,
        straddled: 0,
        worst: (0.0, 0.0),
    };
    for (id, grad) in ids.iter().zip(&analytic) {
        let len = store.get(*id).len();
        let indices: Vec<usize> = match per_param {
            Some(n) if n < len => sample(&mut r, len, n).into_vec(),
            _ => (0..len).collect(),
        };
        for i in indices {
            let orig = store.get(*id).data()[i];
            store.get_mut(*id).data_mut()[i] = orig + FD_STEP;
            let (plus, plus_pattern) = eval(store, &loss);
            store.get_mut(*id).data_mut()[i] = orig - FD_STEP;
            let (minus, minus_pattern) = eval(store, &loss);
            store.get_mut(*id).data_mut()[i] = orig;
            if plus_pattern != pattern || minus_pattern != pattern {
                report.straddled += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let rel = relative_error(grad.data()[i], numeric);
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = (grad.data()[i], numeric);
            }
            report.checked += 1;
        }
    }
    report
}

/// `Σ w ⊙ out` for a fixed random weight tensor, turning any output into a
/// scalar with a generic gradient.
pub fn weighted_sum(g: &mut Graph<'_>, out: Var, seed: u64) -> Var {
    let n = g.value(out).len();
    let w = uniform(&mut rng(seed), &[n], -1.0, 1.0);
    let w = g.constant(w).unwrap();
    let flat = g.flatten(out).unwrap();
    g.dot(flat, w).unwrap()
}

use avdf_core::harness::{Generator, ManipulationMode, Split, SynthConfig};
use avdf_core::model::{Detector, VideoFeatures};
use avdf_core::networks::{ModalityEmbedderConfig, NetworkConfig};
use avdf_core::trainer::TrainPair;

/// Synthetic corpus with short windows, for fast tests.
pub fn small_synth(subjects: usize, mode: ManipulationMode) -> SynthConfig {
    SynthConfig {
        subjects,
        face_frames: 16,
        speech_frames: 32,
        manipulation: mode,
        pretrain_videos_per_class: 2,
        ..SynthConfig::default()
    }
}

pub fn small_networks() -> NetworkConfig {
    NetworkConfig {
        face_modality: ModalityEmbedderConfig {
            window_frames: 16,
            ..ModalityEmbedderConfig::face_default()
        },
        speech_modality: ModalityEmbedderConfig {
            window_frames: 32,
            ..ModalityEmbedderConfig::speech_default()
        },
        ..NetworkConfig::default()
    }
}

pub fn synth_pairs(config: &SynthConfig) -> Vec<TrainPair> {
    let g = Generator::new(config.clone()).unwrap();
    (0..config.subjects)
        .map(|i| {
            let (real, fake) = g.pair(i, Split::Train);
            TrainPair {
                subject: real.meta.subject.clone(),
                real: real.features,
                fake: fake.features,
            }
        })
        .collect()
}

pub fn detector_for(pairs: &[TrainPair], networks: NetworkConfig, seed: u64) -> Detector {
    let videos: Vec<&VideoFeatures> = pairs.iter().flat_map(|p| [&p.real, &p.fake]).collect();
    let (face, speech) = Detector::fit_standardizers(videos.iter().copied()).unwrap();
    Detector::new(networks, face, speech, seed).unwrap()
}
