//! Synthetic corpus generation and experiment drivers standing in for
//! large audio-visual benchmarks.

mod experiment;
mod manifest;
mod report;
mod synth;

pub use experiment::{
    emotion_corpus, load_corpus, prepare_detector, run_experiment, run_loaded, run_variant, AblationRow, ClassMeans,
    ExperimentConfig, ExperimentReport, Histogram, LoadedCorpus, MismatchCounts, Variant, VariantRun, MAX_DISTANCE,
};
pub use manifest::{
    generate_corpus, load_video, write_corpus, DatasetManifest, ManifestEntry, MANIFEST_FILE, MANIFEST_FORMAT,
};
pub use report::{
    export_report, histogram_csv, load_report, to_exact_json, ABLATION_FILE, D_E_HISTOGRAM_FILE, D_M_HISTOGRAM_FILE,
    REPORT_FILE,
};
pub use synth::{Generator, ManipulationMode, Split, SynthConfig, SynthVideo, VideoMeta, STYLE_DIM};
