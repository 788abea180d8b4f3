use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avdf_core::config::RunConfig;
use avdf_core::error::Error;
use avdf_core::features::{load_face_features, load_speech_features, mfcc, read_wav, write_speech_features};
use avdf_core::harness::{self, export_report, generate_corpus, load_corpus, DatasetManifest};
use avdf_core::model::{Label, VideoFeatures};
use avdf_core::scorer::{score_video, ScoreRecord, ThresholdMode};
use avdf_core::trainer::{fit, ModelCheckpoint};
use clap::{Args, Parser, Subcommand};

const CHECKPOINT_FILE: &str = "model.ckpt";
const TRAIN_LOG_FILE: &str = "train_log.jsonl";

#[derive(Parser)]
#[command(name = "avdf", version, about = "Audio-visual deepfake detection from emotion and modality embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Training {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    disable_rho1: bool,
    #[arg(long)]
    disable_rho2: bool,
    #[arg(long, value_parser = parse_threshold_mode)]
    threshold_mode: Option<ThresholdMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute MFCC features of a 16-bit PCM WAV file.
    ExtractMfcc {
        wav: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train on the manifest's training split and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        /// Output directory for the checkpoint and training log.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one video and print its verdict as JSON.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Face feature file.
        #[arg(long)]
        face: PathBuf,
        /// Speech feature file, or a WAV file to extract MFCCs from.
        #[arg(long)]
        speech: PathBuf,
        /// Video id in the output; defaults to the face file stem.
        #[arg(long)]
        id: Option<String>,
        /// Known label to include in the output.
        #[arg(long, value_parser = parse_label)]
        label: Option<Label>,
    },
    /// Train, score the test split and write the experiment report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full model and both single-loss variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = parse_threshold_mode)]
        threshold_mode: Option<ThresholdMode>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_threshold_mode(s: &str) -> Result<ThresholdMode, String> {
    s.parse()
}

fn parse_label(s: &str) -> Result<Label, String> {
    match s {
        "real" => Ok(Label::Real),
        "fake" => Ok(Label::Fake),
        other => Err(format!("unknown label `{other}` (expected real or fake)")),
    }
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Input(String),
    Numerical(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Input(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Input(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        if e.is_numerical() {
            Failure::Numerical(msg)
        } else if matches!(e, Error::Config(_) | Error::NoLossEnabled) {
            Failure::Config(msg)
        } else {
            Failure::Input(msg)
        }
    }
}

impl From<avdf_core::features::FeatureError> for Failure {
    fn from(e: avdf_core::features::FeatureError) -> Self {
        Error::from(e).into()
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => {
            require_file(path)?;
            RunConfig::load(path).map_err(|e| match e {
                Error::Io { .. } => Failure::from(e),
                other => Failure::Config(other.to_string()),
            })?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.set_seed(seed);
    }
    config.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(config)
}

fn apply_training_flags(config: &mut RunConfig, t: &Training) -> Result<(), Failure> {
    if t.disable_rho1 {
        config.train.disable_rho1 = true;
    }
    if t.disable_rho2 {
        config.train.disable_rho2 = true;
    }
    if let Some(mode) = t.threshold_mode {
        config.set_threshold_mode(mode);
    }
    config.validate().map_err(|e| Failure::Config(e.to_string()))
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Input(format!("{} does not exist or is not a file", path.display())))
    }
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure::Input(format!("cannot create {}: {e}", path.display())))
}

fn manifest_corpus(path: &Path, config: &RunConfig) -> Result<harness::LoadedCorpus, Failure> {
    let manifest = DatasetManifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(load_corpus(&manifest, base, config.execution)?)
}

fn gen_data(common: &Common, out: &Path) -> Result<(), Failure> {
    let config = load_config(common)?;
    create_dir(out)?;
    let (path, manifest) = generate_corpus(&config.synth(), out, config.execution)?;
    log::info!("wrote {} videos", manifest.entries.len());
    println!("{}", path.display());
    Ok(())
}

fn extract_mfcc(wav: &Path, out: &Path, common: &Common) -> Result<(), Failure> {
    let config = load_config(common)?;
    require_file(wav)?;
    let clip = read_wav(wav)?;
    let seq = mfcc(&clip, &config.mfcc)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_speech_features(out, &seq)?;
    println!("{}", out.display());
    Ok(())
}

fn train(common: &Common, training: &Training, out: &Path) -> Result<(), Failure> {
    let mut config = load_config(common)?;
    apply_training_flags(&mut config, training)?;
    require_file(&training.manifest)?;
    let experiment = config.experiment();
    let corpus = manifest_corpus(&training.manifest, &config)?;
    let (detector, _) = harness::prepare_detector(&corpus, &experiment)?;
    let mut train_config = experiment.train.clone();
    train_config.execution = experiment.execution;
    let (checkpoint, outcome) = fit(detector, &corpus.train_pairs, &train_config, &experiment.mfcc)?;
    create_dir(out)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    checkpoint.save(&ckpt)?;
    let mut log_text = String::new();
    for epoch in &outcome.history {
        log_text.push_str(&serde_json::to_string(epoch).expect("epoch log serializes"));
        log_text.push('\n');
    }
    let log_path = out.join(TRAIN_LOG_FILE);
    std::fs::write(&log_path, log_text).map_err(|e| Failure::Input(format!("cannot write {}: {e}", log_path.display())))?;
    println!("{}", ckpt.display());
    Ok(())
}

fn is_wav(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn score(checkpoint: &Path, face: &Path, speech: &Path, id: Option<&str>, label: Option<Label>) -> Result<(), Failure> {
    for p in [checkpoint, face, speech] {
        require_file(p)?;
    }
    let checkpoint = ModelCheckpoint::load(checkpoint)?;
    let face_seq = load_face_features(face)?;
    let speech_seq = if is_wav(speech) {
        mfcc(&read_wav(speech)?, &checkpoint.mfcc)?
    } else {
        load_speech_features(speech)?
    };
    let id = id
        .map(str::to_string)
        .or_else(|| face.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_default();
    let video = VideoFeatures {
        id,
        face: face_seq,
        speech: speech_seq,
    };
    let score = score_video(&video, &checkpoint, label)?;
    let record = ScoreRecord::new(&score, checkpoint.tau);
    println!("{}", serde_json::to_string(&record).expect("score record serializes"));
    Ok(())
}

fn eval(common: &Common, training: &Training, out: &Path, ablate: bool) -> Result<(), Failure> {
    let mut config = load_config(common)?;
    apply_training_flags(&mut config, training)?;
    require_file(&training.manifest)?;
    let corpus = manifest_corpus(&training.manifest, &config)?;
    let (report, _) = harness::run_loaded(&corpus, &config.experiment(), ablate)?;
    let written = export_report(&report, out)?;
    let mut stdout = std::io::stdout().lock();
    if ablate {
        for row in &report.ablation {
            let _ = writeln!(stdout, "{}\t{:.4}", row.variant.name(), row.auc);
        }
    } else {
        let _ = writeln!(stdout, "auc\t{:.4}", report.auc);
    }
    for path in written {
        let _ = writeln!(stdout, "{}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { common, out } => gen_data(&common, &out),
        Command::ExtractMfcc { wav, out, common } => extract_mfcc(&wav, &out, &common),
        Command::Train { common, training, out } => train(&common, &training, &out),
        Command::Score {
            checkpoint,
            face,
            speech,
            id,
            label,
        } => score(&checkpoint, &face, &speech, id.as_deref(), label),
        Command::Eval { common, training, out } => eval(&common, &training, &out, false),
        Command::Ablate {
            common,
            manifest,
            threshold_mode,
            out,
        } => {
            let training = Training {
                manifest,
                disable_rho1: false,
                disable_rho2: false,
                threshold_mode,
            };
            eval(&common, &training, &out, true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AVDF_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
