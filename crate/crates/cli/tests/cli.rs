use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use avdf_core::config::RunConfig;
use avdf_core::features::load_speech_features;
use avdf_core::harness::{DatasetManifest, Split};
use avdf_core::model::Label;
use avdf_core::networks::ModalityEmbedderConfig;
use avdf_core::scorer::ScoreRecord;

fn avdf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avdf")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let mut c = RunConfig::default();
    c.synth.subjects = 6;
    c.synth.face_frames = 16;
    c.synth.speech_frames = 32;
    c.synth.train_fraction = 0.5;
    c.synth.pretrain_videos_per_class = 2;
    c.networks.face_modality = ModalityEmbedderConfig {
        window_frames: 16,
        ..ModalityEmbedderConfig::face_default()
    };
    c.networks.speech_modality = ModalityEmbedderConfig {
        window_frames: 32,
        ..ModalityEmbedderConfig::speech_default()
    };
    c.pretrain.epochs = 1;
    c.train.epochs = 1;
    c.histogram_bins = 4;
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    path
}

fn gen_data(dir: &Path, config: &Path) -> PathBuf {
    let out = dir.join("data");
    let printed = stdout(&avdf(&["gen-data", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    PathBuf::from(printed.trim())
}

#[test]
fn gen_data_writes_a_valid_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let manifest = gen_data(dir.path(), &config);
    let m = DatasetManifest::load(&manifest).unwrap();
    assert!(m.entries_in(Split::Test).count() > 0);
    for e in &m.entries {
        assert!(manifest.parent().unwrap().join(&e.face_path).is_file());
    }
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"train": {"epochz": 3}}"#).unwrap();
    let out = avdf(&["gen-data", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));

    std::fs::write(&path, r#"{"train": {"batch_size": 0}}"#).unwrap();
    let out = avdf(&["gen-data", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn extract_mfcc_reads_pcm_wav() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("tone.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&wav, spec).unwrap();
    for i in 0..16_000 {
        let t = i as f64 / 16_000.0;
        w.write_sample((8000.0 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()) as i16).unwrap();
    }
    w.finalize().unwrap();
    let out = dir.path().join("tone.mfcc");
    stdout(&avdf(&["extract-mfcc", wav.to_str().unwrap(), out.to_str().unwrap()]));
    let seq = load_speech_features(&out).unwrap();
    assert_eq!(seq.frames.cols(), 13);
    assert!(seq.frames.rows() > 90);
    assert!(seq.frames.data().iter().all(|v| v.is_finite()));

    let junk = dir.path().join("junk.wav");
    std::fs::write(&junk, b"not a wav").unwrap();
    let bad = avdf(&["extract-mfcc", junk.to_str().unwrap(), out.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(3));
    let missing = avdf(&["extract-mfcc", "/nonexistent.wav", out.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn train_then_score_prints_a_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let manifest = gen_data(dir.path(), &config);
    let model = dir.path().join("model");
    let printed = stdout(&avdf(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]));
    let ckpt = PathBuf::from(printed.trim());
    assert!(ckpt.is_file());
    assert_eq!(std::fs::read_to_string(model.join("train_log.jsonl")).unwrap().lines().count(), 1);

    let m = DatasetManifest::load(&manifest).unwrap();
    let entry = m.entries_in(Split::Test).find(|e| e.meta.label == Label::Fake).unwrap();
    let base = manifest.parent().unwrap();
    let line = stdout(&avdf(&[
        "score",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--face",
        base.join(&entry.face_path).to_str().unwrap(),
        "--speech",
        base.join(&entry.speech_path).to_str().unwrap(),
        "--id",
        &entry.meta.id,
        "--label",
        "fake",
    ]));
    let record: ScoreRecord = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(record.id, entry.meta.id);
    assert_eq!(record.label, Some(Label::Fake));
    assert_eq!(record.score, record.d_m + record.d_e);

    let bad = avdf(&["score", "--checkpoint", manifest.to_str().unwrap(), "--face", "x", "--speech", "y"]);
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn eval_is_reproducible_and_ablate_lists_variants() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let manifest = gen_data(dir.path(), &config);
    let run = |sub: &str, name: &str| {
        let out = dir.path().join(name);
        let printed = stdout(&avdf(&[
            sub,
            "--config",
            config.to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]));
        (printed, out)
    };
    let (a, out_a) = run("eval", "a");
    let (_, out_b) = run("eval", "b");
    assert!(a.starts_with("auc\t"));
    for file in ["report.json", "histogram_d_m.csv", "histogram_d_e.csv"] {
        assert_eq!(std::fs::read(out_a.join(file)).unwrap(), std::fs::read(out_b.join(file)).unwrap(), "{file}");
    }
    let (rows, out_c) = run("ablate", "c");
    let names: Vec<&str> = rows.lines().take(3).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(names, ["full", "no_rho1", "no_rho2"]);
    assert!(out_c.join("ablation.csv").is_file());
}
