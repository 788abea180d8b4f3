//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p avdf-core --test acceptance`. The end-to-end
//! criteria train on the default synthetic corpus and take a few minutes.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use avdf_core::config::RunConfig;
use avdf_core::features::{mfcc, FeatureMatrix, MfccConfig};
use avdf_core::harness::{
    export_report, generate_corpus, load_corpus, run_experiment, run_loaded, DatasetManifest, ExperimentReport, SynthConfig,
    Variant,
};
use avdf_core::networks::{DetectorNetworks, Modality, NetworkConfig};
use avdf_core::scorer::{auc, score_video};
use avdf_core::trainer::ModelCheckpoint;
use common::checks::{
    auc_instance, has_ties, loss_case_violation, mfcc_oracle, network_gradient_cases, op_gradient_cases, pair_count_auc,
    random_clip, random_quad, GradCase,
};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let ops = op_gradient_cases();
    let nets = network_gradient_cases();
    let elapsed = start.elapsed();
    let worst = |cases: &[GradCase]| cases.iter().map(|c| c.report.max_rel).fold(0.0, f64::max);
    let failed: Vec<&str> = ops.iter().chain(&nets).filter(|c| !c.passed()).map(|c| c.name).collect();
    let checked: usize = ops.iter().chain(&nets).map(|c| c.report.checked).sum();
    let straddled: usize = nets.iter().map(|c| c.report.straddled).sum();
    outcome(
        failed.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} ops max rel err {:.2e} (< 1e-4), 4 networks max rel err {:.2e} (< 1e-3), {checked} entries, {straddled} kink-straddling probes skipped, {:.1} s (< 60 s){}",
            ops.len(),
            worst(&ops),
            worst(&nets),
            secs(elapsed),
            if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(" ")) }
        ),
    )
}

fn random_input(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> FeatureMatrix {
    let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
    FeatureMatrix::new(rows, cols, (0..rows * cols).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn embedding_contract() -> Outcome {
    const INPUTS: usize = 1000;
    let (store, nets) = DetectorNetworks::init(&NetworkConfig::default(), 7).unwrap();
    let mut rng = common::rng(77);
    let mut worst = [0.0f64; 4];
    for _ in 0..INPUTS {
        for (k, which) in [Modality::Face, Modality::Speech].into_iter().enumerate() {
            let net = nets.modality(which);
            let x = random_input(&mut rng, net.config().window_frames, net.config().feature_dims);
            let e = net.embed(&store, &x).unwrap();
            worst[k] = worst[k].max((e.norm() - 1.0).abs());

            let net = nets.emotion(which);
            let len = rng.gen_range(1..=64);
            let x = random_input(&mut rng, len, net.config().feature_dims);
            let (e, _) = net.embed(&store, &nets.emotion_head, &x).unwrap();
            worst[2 + k] = worst[2 + k].max((e.norm() - 1.0).abs());
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    outcome(
        max < 1e-9,
        format!(
            "{INPUTS} inputs per network, max |norm - 1|: F1 {:.1e}, S1 {:.1e}, F2 {:.1e}, S2 {:.1e} (< 1e-9)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn loss_algebra() -> Outcome {
    const CASES: usize = 10_000;
    let mut rng = common::rng(3);
    let mut violations = 0;
    let mut first = None;
    for _ in 0..CASES {
        let dim = rng.gen_range(1..=12);
        let modal = random_quad(&mut rng, dim);
        let emo = random_quad(&mut rng, dim);
        let manipulated = if rng.gen_bool(0.5) { Modality::Face } else { Modality::Speech };
        let (m1, m2) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        if let Some(v) = loss_case_violation(&modal, &emo, manipulated, m1, m2) {
            violations += 1;
            first.get_or_insert(v);
        }
    }
    outcome(
        violations == 0,
        format!(
            "{CASES} randomized cases, {violations} violations (hinge, total, nonnegativity, face/speech symmetry){}",
            first.map(|v| format!(", first: {v}")).unwrap_or_default()
        ),
    )
}

fn mfcc_oracle_criterion() -> Outcome {
    let start = Instant::now();
    let mut rng = common::rng(2025);
    let config = MfccConfig::default();
    let mut worst: f64 = 0.0;
    let mut frames = 0;
    for i in 0..50 {
        let rate = if i % 5 == 4 { 8000 } else { 16000 };
        let clip = random_clip(&mut rng, rate);
        let got = mfcc(&clip, &config).unwrap();
        let want = mfcc_oracle(&clip.samples, f64::from(rate));
        if got.frames.rows() != want.len() {
            return outcome(false, format!("clip {i}: {} frames, oracle {}", got.frames.rows(), want.len()));
        }
        for (row, expected) in got.frames.iter_rows().zip(&want) {
            frames += 1;
            for (a, b) in row.iter().zip(expected) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-6 && elapsed < Duration::from_secs(30),
        format!("50 clips of 0.5 s, {frames} frames, max abs deviation {worst:.2e} (< 1e-6), {:.1} s (< 30 s)", secs(elapsed)),
    )
}

fn auc_oracle() -> Outcome {
    let mut rng = common::rng(5);
    let mut mismatches = 0;
    let mut tied = 0;
    let mut largest = 0;
    for _ in 0..100 {
        let scores = auc_instance(&mut rng);
        largest = largest.max(scores.len());
        tied += usize::from(has_ties(&scores));
        if auc(&scores).unwrap() != pair_count_auc(&scores) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0 && tied > 0,
        format!("100 instances (n <= {largest}, {tied} with ties), {mismatches} differ from pair counting"),
    )
}

/// Criteria 6 to 9 share one run on the default corpus.
fn end_to_end() -> [Outcome; 4] {
    let start = Instant::now();
    let run = || -> avdf_core::Result<ExperimentReport> {
        let dir = tempfile::tempdir().map_err(avdf_core::Error::io("tempdir"))?;
        let config = RunConfig::default();
        let (manifest, _) = generate_corpus(&config.synth(), dir.path(), config.execution)?;
        let (report, _) = run_experiment(&manifest, &config.experiment(), true)?;
        Ok(report)
    };
    let report = match run() {
        Ok(r) => r,
        Err(e) => {
            let msg = format!("end-to-end run failed: {e}");
            return [0, 1, 2, 3].map(|_| outcome(false, msg.clone()));
        }
    };
    let elapsed = start.elapsed();
    let synth = SynthConfig::default();

    let detection = outcome(
        report.auc >= 0.90 && elapsed < Duration::from_secs(600),
        format!(
            "{} subjects, strength {}, seed {}: test AUC {:.4} (>= 0.90) over {} real / {} fake, accuracy {:.3}, {:.0} s incl. ablation (< 600 s)",
            synth.subjects,
            synth.strength,
            synth.seed,
            report.auc,
            report.test_real,
            report.test_fake,
            report.accuracy,
            secs(elapsed)
        ),
    );

    let gap = report.mean_d_m.fake - report.mean_d_m.real;
    let modality = outcome(
        gap > 0.1,
        format!(
            "mean d_m real {:.4}, fake {:.4}, difference {gap:.4} (> 0.1)",
            report.mean_d_m.real, report.mean_d_m.fake
        ),
    );

    let m = report.mismatch;
    let points = 100.0 * (m.fake_rate() - m.real_rate());
    let emotion = outcome(
        points >= 20.0,
        format!(
            "emotion mismatch real {}/{} ({:.1}%), fake {}/{} ({:.1}%), difference {points:.1} points (>= 20)",
            m.real_mismatched,
            m.real_total,
            100.0 * m.real_rate(),
            m.fake_mismatched,
            m.fake_total,
            100.0 * m.fake_rate()
        ),
    );

    let full = report.ablation.iter().find(|r| r.variant == Variant::Full).map(|r| r.auc);
    let ablation = match full {
        Some(full) if report.ablation.len() == Variant::ALL.len() => {
            let worst_margin = report
                .ablation
                .iter()
                .filter(|r| r.variant != Variant::Full)
                .map(|r| full - r.auc)
                .fold(f64::INFINITY, f64::min);
            let rows: Vec<String> = report.ablation.iter().map(|r| format!("{} {:.4}", r.variant.name(), r.auc)).collect();
            outcome(worst_margin >= -0.02, format!("AUC {} (full >= each variant - 0.02)", rows.join(", ")))
        }
        _ => outcome(false, "ablation rows missing".into()),
    };
    [detection, modality, emotion, ablation]
}

fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.synth.subjects = 12;
    c.synth.train_fraction = 0.5;
    c.synth.pretrain_videos_per_class = 3;
    c.pretrain.epochs = 2;
    c.train.epochs = 2;
    c
}

fn determinism() -> Outcome {
    let check = || -> avdf_core::Result<(bool, bool, String)> {
        let config = small_config();
        let tmp = tempfile::tempdir().map_err(avdf_core::Error::io("tempdir"))?;
        let data = tmp.path().join("data");
        let (manifest_path, _) = generate_corpus(&config.synth(), &data, config.execution)?;

        let mut reports = Vec::new();
        let mut checkpoints = Vec::new();
        for run in ["a", "b"] {
            let (report, ck) = run_experiment(&manifest_path, &config.experiment(), false)?;
            let out = tmp.path().join(run);
            let files = export_report(&report, &out)?;
            let bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
            reports.push(bytes);
            checkpoints.push(ck);
        }
        let reports_equal = reports[0] == reports[1] && !reports[0].is_empty();

        let ck = &checkpoints[0];
        let path = tmp.path().join("model.ckpt");
        ck.save(&path)?;
        let saved = std::fs::read(&path).map_err(avdf_core::Error::io(&path))?;
        let loaded = ModelCheckpoint::load(&path)?;
        let params_equal = ck.detector.store.iter().all(|(id, _, _)| {
            let (a, b) = (ck.detector.store.get(id).data(), loaded.detector.store.get(id).data());
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        let manifest = DatasetManifest::load(&manifest_path)?;
        let corpus = load_corpus(&manifest, &data, config.execution)?;
        let scores_equal = corpus.test.iter().all(|(v, l)| {
            let a = score_video(v, ck, Some(*l)).unwrap();
            let b = score_video(v, &loaded, Some(*l)).unwrap();
            a.score.to_bits() == b.score.to_bits()
        });
        let round_trip = params_equal
            && loaded.tau.to_bits() == ck.tau.to_bits()
            && loaded.to_bytes()? == saved
            && checkpoints[1].to_bytes()? == saved
            && scores_equal;

        // The sequential path must agree with the parallel one.
        let mut seq = config.experiment();
        seq.execution = avdf_core::par::Execution::Sequential;
        let (seq_report, _) = run_loaded(&corpus, &seq, false)?;
        let seq_equal = avdf_core::harness::to_exact_json(&seq_report)? == avdf_core::harness::to_exact_json(&run_experiment(&manifest_path, &config.experiment(), false)?.0)?;

        Ok((
            reports_equal && seq_equal,
            round_trip,
            format!(
                "{} report files byte-identical across runs: {reports_equal}, sequential == parallel: {seq_equal}, checkpoint ({} bytes) round trip bit-exact: {round_trip}",
                reports[0].len(),
                saved.len()
            ),
        ))
    };
    match check() {
        Ok((reports, round_trip, detail)) => outcome(reports && round_trip, detail),
        Err(e) => outcome(false, format!("determinism run failed: {e}")),
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient correctness", gradient_correctness()),
        (2, "embedding contract", embedding_contract()),
        (3, "loss algebra", loss_algebra()),
        (4, "MFCC oracle", mfcc_oracle_criterion()),
        (5, "AUC oracle", auc_oracle()),
    ];
    let [detection, modality, emotion, ablation] = end_to_end();
    results.push((6, "synthetic detection", detection));
    results.push((7, "modality distance direction", modality));
    results.push((8, "emotion mismatch direction", emotion));
    results.push((9, "ablation ordering", ablation));
    results.push((10, "determinism", determinism()));

    let mut failed = 0;
    for (n, name, o) in &results {
        println!("{} criterion {n:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
