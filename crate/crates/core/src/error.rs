use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::features::FeatureError;
use crate::networks::NetworkError;

/// Errors from training, scoring and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("both triplet losses are disabled")]
    NoLossEnabled,
    #[error("threshold needs at least one {0} video score")]
    MissingClass(&'static str),
    #[error("AUC needs both real and fake videos")]
    SingleClass,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("report has no test videos")]
    EmptyTestSplit,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Whether the failure came from numerics rather than inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. }
                | Error::Autodiff(AutodiffError::NonFinite { .. } | AutodiffError::NonFiniteGradient(_))
                | Error::Network(NetworkError::Autodiff(
                    AutodiffError::NonFinite { .. } | AutodiffError::NonFiniteGradient(_)
                ))
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
