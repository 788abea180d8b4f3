//! Check suites shared by the per-area tests and the acceptance target.
//! Every expected value here comes from an independent oracle.

use std::f64::consts::PI;

use avdf_core::autodiff::{lstm_cell_step, Conv2dSpec, Graph, LstmParams, ParamId, ParamStore, Tensor, Var};
use avdf_core::features::{FeatureMatrix, AudioClip};
use avdf_core::model::Label;
use avdf_core::networks::{DetectorNetworks, Modality, NetworkConfig};
use avdf_core::trainer::{similarity_score_1, similarity_score_2, total_loss, EmbeddingQuad, LossBreakdown, LossSwitches};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{away_from_zero, fd_check, rng, uniform, weighted_sum, FdReport};

pub const OP_TOL: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct GradCase {
    pub name: &'static str,
    pub report: FdReport,
    pub tol: f64,
}

impl GradCase {
    /// Most probed entries must be usable, not just the worst one small.
    pub fn passed(&self) -> bool {
        self.report.checked > 4 * self.report.straddled && self.report.max_rel < self.tol
    }
}

fn store_with(tensors: Vec<Tensor>) -> (ParamStore, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = tensors
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.insert(format!("p{i}"), t).unwrap())
        .collect();
    (store, ids)
}

fn check_op(name: &'static str, tensors: Vec<Tensor>, build: impl Fn(&mut Graph<'_>, &[Var]) -> Var) -> GradCase {
    let (mut store, ids) = store_with(tensors);
    let ids2 = ids.clone();
    let report = fd_check(&mut store, &ids, None, 1, move |g| {
        let vars: Vec<Var> = ids2.iter().map(|id| g.param(*id)).collect();
        let out = build(g, &vars);
        weighted_sum(g, out, 99)
    });
    GradCase { name, report, tol: OP_TOL }
}

pub fn matmul_cases() -> Vec<GradCase> {
    let mut r = rng(1);
    vec![check_op("matmul", vec![uniform(&mut r, &[3, 4], -1.0, 1.0), uniform(&mut r, &[4, 2], -1.0, 1.0)], |g, v| {
        g.matmul(v[0], v[1]).unwrap()
    })]
}

pub fn elementwise_cases() -> Vec<GradCase> {
    let mut r = rng(2);
    let a = uniform(&mut r, &[2, 3], -1.0, 1.0);
    let b = uniform(&mut r, &[2, 3], -1.0, 1.0);
    let c = uniform(&mut r, &[5], -1.0, 1.0);
    let k = away_from_zero(&mut r, &[4, 3]);
    vec![
        check_op("add", vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]).unwrap()),
        check_op("sub", vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]).unwrap()),
        check_op("mul", vec![a, b], |g, v| g.mul(v[0], v[1]).unwrap()),
        check_op("scale", vec![c.clone()], |g, v| g.scale(v[0], -1.7).unwrap()),
        check_op("add_scalar", vec![c], |g, v| g.add_scalar(v[0], 0.3).unwrap()),
        check_op("relu", vec![k.clone()], |g, v| g.relu(v[0]).unwrap()),
        check_op("sigmoid", vec![k.clone()], |g, v| g.sigmoid(v[0]).unwrap()),
        check_op("tanh", vec![k], |g, v| g.tanh(v[0]).unwrap()),
    ]
}

pub fn layer_cases() -> Vec<GradCase> {
    let mut r = rng(5);
    let x = uniform(&mut r, &[6], -1.0, 1.0);
    let w = uniform(&mut r, &[4, 6], -1.0, 1.0);
    let b = uniform(&mut r, &[4], -1.0, 1.0);
    let mut cases = vec![
        check_op("fully_connected", vec![x.clone(), w.clone(), b], |g, v| g.fully_connected(v[0], v[1], Some(v[2])).unwrap()),
        check_op("fully_connected_no_bias", vec![x, w], |g, v| g.fully_connected(v[0], v[1], None).unwrap()),
    ];

    let x = uniform(&mut r, &[2, 6, 7], -1.0, 1.0);
    let k = uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
    let b = uniform(&mut r, &[3], -1.0, 1.0);
    for (name, spec) in [
        ("conv2d_same", Conv2dSpec { stride: 1, padding: 1 }),
        ("conv2d_strided", Conv2dSpec { stride: 2, padding: 0 }),
        ("conv2d_strided_padded", Conv2dSpec { stride: 2, padding: 1 }),
    ] {
        cases.push(check_op(name, vec![x.clone(), k.clone(), b.clone()], move |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), spec).unwrap()
        }));
    }

    // Distinct values keep every window's maximum unique.
    let mut x = uniform(&mut r, &[2, 5, 6], -1.0, 1.0);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v += i as f64 * 0.01;
    }
    cases.push(check_op("maxpool2d", vec![x], |g, v| g.maxpool2d(v[0], (2, 2)).unwrap()));
    cases
}

pub fn shape_cases() -> Vec<GradCase> {
    let mut r = rng(8);
    let a = uniform(&mut r, &[2, 3, 4], -1.0, 1.0);
    let b = uniform(&mut r, &[5], -1.0, 1.0);
    vec![
        check_op("reshape", vec![a.clone()], |g, v| g.reshape(v[0], vec![6, 4]).unwrap()),
        check_op("flatten", vec![a.clone()], |g, v| g.flatten(v[0]).unwrap()),
        check_op("concat", vec![a.clone(), b], |g, v| g.concat(&[v[0], v[1], v[0]]).unwrap()),
        check_op("slice", vec![a], |g, v| g.slice(v[0], 5, 9).unwrap()),
    ]
}

pub fn reduction_cases() -> Vec<GradCase> {
    let mut r = rng(9);
    let logits = uniform(&mut r, &[7], -2.0, 2.0);
    let a = uniform(&mut r, &[8], -1.0, 1.0);
    let b = uniform(&mut r, &[8], -1.0, 1.0);
    vec![
        check_op("softmax", vec![logits.clone()], |g, v| g.softmax(v[0]).unwrap()),
        check_op("cross_entropy", vec![logits], |g, v| {
            let p = g.softmax(v[0]).unwrap();
            g.cross_entropy(p, 3).unwrap()
        }),
        check_op("euclidean_distance", vec![a.clone(), b.clone()], |g, v| g.euclidean_distance(v[0], v[1]).unwrap()),
        check_op("unit_normalize", vec![a.clone()], |g, v| g.unit_normalize(v[0]).unwrap()),
        check_op("dot", vec![a.clone(), b.clone()], |g, v| g.dot(v[0], v[1]).unwrap()),
        check_op("sum", vec![a.clone()], |g, v| g.sum(v[0]).unwrap()),
        check_op("mean", vec![a, b], |g, v| {
            let s = g.sum(v[0]).unwrap();
            let d = g.dot(v[0], v[1]).unwrap();
            g.mean(&[s, d]).unwrap()
        }),
    ]
}

pub fn lstm_case() -> GradCase {
    let mut r = rng(11);
    let mut store = ParamStore::new();
    let params = LstmParams::init(&mut store, "cell", 5, 4, &mut r).unwrap();
    *store.get_mut(params.bias) = uniform(&mut r, &[16], -0.5, 0.5);
    let xs: Vec<Tensor> = (0..3).map(|_| uniform(&mut r, &[5], -1.0, 1.0)).collect();
    let h0 = store.insert("h0", uniform(&mut r, &[4], -0.5, 0.5)).unwrap();
    let c0 = store.insert("c0", uniform(&mut r, &[4], -0.5, 0.5)).unwrap();
    let ids = vec![params.weight, params.bias, h0, c0];
    let report = fd_check(&mut store, &ids, None, 2, |g| {
        let (mut h, mut c) = (g.param(h0), g.param(c0));
        for x in &xs {
            let x = g.constant(x.clone()).unwrap();
            (h, c) = lstm_cell_step(g, x, h, c, &params).unwrap();
        }
        let both = g.concat(&[h, c]).unwrap();
        weighted_sum(g, both, 5)
    });
    GradCase {
        name: "lstm_cell_3_steps",
        report,
        tol: OP_TOL,
    }
}

/// Every element-level op and layer, including the LSTM cell.
pub fn op_gradient_cases() -> Vec<GradCase> {
    let mut cases = matmul_cases();
    cases.extend(elementwise_cases());
    cases.extend(layer_cases());
    cases.extend(shape_cases());
    cases.extend(reduction_cases());
    cases.push(lstm_case());
    cases
}

pub fn random_matrix(seed: u64, rows: usize, cols: usize) -> FeatureMatrix {
    let t = uniform(&mut rng(seed), &[rows, cols], -2.0, 2.0);
    FeatureMatrix::new(rows, cols, t.into_data()).unwrap()
}

fn default_networks() -> (ParamStore, DetectorNetworks) {
    DetectorNetworks::init(&NetworkConfig::default(), 21).unwrap()
}

pub fn modality_network_case(which: Modality) -> GradCase {
    let (mut store, nets) = default_networks();
    let net = nets.modality(which);
    let cfg = net.config();
    let (seed, per_param, name) = match which {
        Modality::Face => (31, 6, "f1_network"),
        Modality::Speech => (32, 12, "s1_network"),
    };
    let input = random_matrix(seed, cfg.window_frames, cfg.feature_dims);
    let report = fd_check(&mut store, &net.param_ids(), Some(per_param), seed, |g| {
        let e = net.forward(g, &input).unwrap();
        weighted_sum(g, e, 7)
    });
    GradCase { name, report, tol: NET_TOL }
}

/// Embedding plus the class head's cross-entropy, so both outputs carry
/// gradient.
pub fn emotion_network_case(which: Modality) -> GradCase {
    let (mut store, nets) = default_networks();
    let net = nets.emotion(which);
    let head = &nets.emotion_head;
    let (seed, frames, name) = match which {
        Modality::Face => (33, 20, "f2_network"),
        Modality::Speech => (34, 40, "s2_network"),
    };
    let input = random_matrix(seed, frames, net.config().feature_dims);
    let mut ids = net.param_ids();
    ids.extend(head.param_ids());
    let report = fd_check(&mut store, &ids, Some(12), seed, |g| {
        let out = net.forward(g, head, &input).unwrap();
        let e = weighted_sum(g, out.embedding, 9);
        let ce = g.cross_entropy(out.probs, 2).unwrap();
        g.add(e, ce).unwrap()
    });
    GradCase { name, report, tol: NET_TOL }
}

pub fn network_gradient_cases() -> Vec<GradCase> {
    vec![
        modality_network_case(Modality::Face),
        modality_network_case(Modality::Speech),
        emotion_network_case(Modality::Face),
        emotion_network_case(Modality::Speech),
    ]
}

// ---- MFCC oracle: the definition evaluated directly with an O(N²) DFT.

const N_FFT: usize = 512;
const FILTERS: usize = 26;
const COEFFS: usize = 13;

fn mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

fn inverse_mel(m: f64) -> f64 {
    700.0 * ((m / 1127.0).exp() - 1.0)
}

pub fn mfcc_oracle(samples: &[f64], sample_rate: f64) -> Vec<Vec<f64>> {
    let frame = (0.025 * sample_rate).round() as usize;
    let hop = (0.010 * sample_rate).round() as usize;
    let frames = 1 + (samples.len() - frame) / hop;
    let bins = N_FFT / 2 + 1;
    let cos_table: Vec<f64> = (0..N_FFT).map(|i| (2.0 * PI * i as f64 / N_FFT as f64).cos()).collect();
    let sin_table: Vec<f64> = (0..N_FFT).map(|i| (2.0 * PI * i as f64 / N_FFT as f64).sin()).collect();

    let top = mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..FILTERS + 2).map(|i| inverse_mel(top * i as f64 / (FILTERS + 1) as f64)).collect();
    let weight = |j: usize, hz: f64| {
        let (l, c, r) = (edges[j], edges[j + 1], edges[j + 2]);
        ((hz - l) / (c - l)).min((r - hz) / (r - c)).max(0.0)
    };

    (0..frames)
        .map(|t| {
            let x = &samples[t * hop..t * hop + frame];
            let y: Vec<f64> = (0..frame)
                .map(|n| {
                    let pre = if n == 0 { x[0] } else { x[n] - 0.97 * x[n - 1] };
                    pre * (0.5 - 0.5 * (2.0 * PI * n as f64 / (frame - 1) as f64).cos())
                })
                .collect();
            let power: Vec<f64> = (0..bins)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (n, v) in y.iter().enumerate() {
                        let idx = (k * n) % N_FFT;
                        re += v * cos_table[idx];
                        im -= v * sin_table[idx];
                    }
                    (re * re + im * im) / N_FFT as f64
                })
                .collect();
            let logs: Vec<f64> = (0..FILTERS)
                .map(|j| {
                    let e: f64 = (0..bins).map(|k| power[k] * weight(j, k as f64 * sample_rate / N_FFT as f64)).sum();
                    e.max(1e-10).ln()
                })
                .collect();
            (0..COEFFS)
                .map(|i| {
                    let norm = if i == 0 { (1.0 / FILTERS as f64).sqrt() } else { (2.0 / FILTERS as f64).sqrt() };
                    norm * logs
                        .iter()
                        .enumerate()
                        .map(|(j, l)| l * (PI * i as f64 * (j as f64 + 0.5) / FILTERS as f64).cos())
                        .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// Half a second of tones plus white noise.
pub fn random_clip(rng: &mut ChaCha8Rng, sample_rate: u32) -> AudioClip {
    let n = sample_rate as usize / 2;
    let tones: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(50.0..4000.0), rng.gen_range(0.0..0.5), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let noise = rng.gen_range(0.0..0.2);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(sample_rate);
            let s: f64 = tones.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum();
            s + noise * rng.gen_range(-1.0..1.0)
        })
        .collect();
    AudioClip { samples, sample_rate }
}

// ---- AUC oracle

/// Fraction of (fake, real) pairs ranked correctly, ties counting half.
pub fn pair_count_auc(scores: &[(f64, Label)]) -> f64 {
    let mut num = 0u64;
    let mut pairs = 0u64;
    for (f, lf) in scores {
        if !lf.is_fake() {
            continue;
        }
        for (r, lr) in scores {
            if lr.is_fake() {
                continue;
            }
            pairs += 1;
            num += if f > r {
                2
            } else if f == r {
                1
            } else {
                0
            };
        }
    }
    num as f64 / (2 * pairs) as f64
}

/// Up to 200 labelled scores with both classes present.
pub fn auc_instance(rng: &mut ChaCha8Rng) -> Vec<(f64, Label)> {
    let n = rng.gen_range(2..=200);
    // Coarse grids force many ties.
    let levels = *[3u32, 10, 1000, u32::MAX].get(rng.gen_range(0..4)).unwrap();
    let mut v: Vec<(f64, Label)> = (0..n)
        .map(|_| {
            let s = if levels == u32::MAX { rng.gen::<f64>() } else { f64::from(rng.gen_range(0..levels)) / 7.0 };
            (s, if rng.gen_bool(0.5) { Label::Fake } else { Label::Real })
        })
        .collect();
    v[0].1 = Label::Real;
    v[1].1 = Label::Fake;
    v
}

pub fn has_ties(scores: &[(f64, Label)]) -> bool {
    let mut s: Vec<f64> = scores.iter().map(|(v, _)| *v).collect();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

// ---- Loss algebra

pub fn flip(m: Modality) -> Modality {
    match m {
        Modality::Face => Modality::Speech,
        Modality::Speech => Modality::Face,
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn hinge(l: f64, m: f64) -> f64 {
    if l + m > 0.0 {
        l + m
    } else {
        0.0
    }
}

/// Checks one randomized case against the definitions written out
/// longhand. Returns the first violated relation.
pub fn loss_case_violation(modal: &[Vec<f64>; 4], emo: &[Vec<f64>; 4], manipulated: Modality, m1: f64, m2: f64) -> Option<String> {
    let mq = EmbeddingQuad {
        face_real: &modal[0],
        face_fake: &modal[1],
        speech_real: &modal[2],
        speech_fake: &modal[3],
    };
    let eq = EmbeddingQuad {
        face_real: &emo[0],
        face_fake: &emo[1],
        speech_real: &emo[2],
        speech_fake: &emo[3],
    };
    let b = LossBreakdown::compute(Some(&mq), Some(&eq), manipulated, m1, m2);
    let (l1, l2) = (b.l1?, b.l2?);
    let (anchor, pos, neg) = match manipulated {
        Modality::Face => (&modal[2], &modal[0], &modal[1]),
        Modality::Speech => (&modal[0], &modal[2], &modal[3]),
    };
    let (kept, changed) = match manipulated {
        Modality::Face => ((&emo[2], &emo[3]), (&emo[0], &emo[1])),
        Modality::Speech => ((&emo[0], &emo[1]), (&emo[2], &emo[3])),
    };
    let only = |d1: bool, d2: bool| {
        total_loss(
            b.rho1,
            b.rho2,
            LossSwitches {
                disable_rho1: d1,
                disable_rho2: d2,
            },
        )
        .ok()
    };
    let checks: [(&str, bool); 11] = [
        ("l1 definition", (l1 - (dist(anchor, pos) - dist(anchor, neg))).abs() < 1e-12),
        ("l2 definition", (l2 - (dist(kept.0, kept.1) - dist(changed.0, changed.1))).abs() < 1e-12),
        ("rho1 hinge", b.rho1 == hinge(l1, m1)),
        ("rho2 hinge", b.rho2 == hinge(l2, m2)),
        ("nonnegative", b.rho1 >= 0.0 && b.rho2 >= 0.0 && b.total >= 0.0),
        ("total", b.total == b.rho1 + b.rho2 && b.holds_invariants()),
        ("l1 face/speech symmetry", similarity_score_1(&mq.swapped(), flip(manipulated)) == l1),
        ("l2 face/speech symmetry", similarity_score_2(&eq.swapped(), flip(manipulated)) == l2),
        ("l2 label flip", similarity_score_2(&eq, flip(manipulated)) == -l2),
        ("rho1 only", only(false, true) == Some(b.rho1)),
        ("rho2 only", only(true, false) == Some(b.rho2)),
    ];
    checks.iter().find(|(_, ok)| !ok).map(|(name, _)| format!("{name}: l1={l1} l2={l2} {b:?}"))
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn random_quad(rng: &mut ChaCha8Rng, dim: usize) -> [Vec<f64>; 4] {
    [random_unit(rng, dim), random_unit(rng, dim), random_unit(rng, dim), random_unit(rng, dim)]
}
