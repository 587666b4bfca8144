use std::path::PathBuf;

use rfmark_nn::NnError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("layer {index} ({name}): {reason}")]
    Layer {
        index: usize,
        name: String,
        reason: String,
    },
    #[error("empty layer chain")]
    EmptyChain,
    #[error("no admissible watermark size: embedder RF {embedder} exceeds detector RF {detector}")]
    InvertedRange { embedder: usize, detector: usize },
    #[error("receptive-field reports were computed on different inputs: {0:?} vs {1:?}")]
    InputMismatch((usize, usize), (usize, usize)),
    #[error("invalid watermark set: {0}")]
    WatermarkSet(String),
    #[error("frame {frame:?} is smaller than watermark {watermark:?}")]
    FrameTooSmall {
        frame: (usize, usize),
        watermark: (usize, usize),
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image codec: {0}")]
    Codec(String),
    #[error("non-finite loss at step {step}: L_imp={l_imp}, L_det={l_det}")]
    NonFiniteLoss { step: u64, l_imp: f64, l_det: f64 },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("integrity check failed for {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(
        "watermark manifest hash mismatch: checkpoint has {checkpoint}, supplied set has {supplied}; pass --force to load anyway"
    )]
    ManifestMismatch { checkpoint: String, supplied: String },
    #[error("network: {0}")]
    Network(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by the caller's inputs rather than by a failed computation.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Dataset(_)
                | Error::Integrity { .. }
                | Error::Version { .. }
                | Error::ManifestMismatch { .. }
                | Error::Io { .. }
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Codec(_)
                | Error::WatermarkSet(_)
                | Error::FrameTooSmall { .. }
                | Error::Shape(_)
                | Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::Layer { .. }
                | Error::EmptyChain
                | Error::InvertedRange { .. }
                | Error::InputMismatch(..)
        )
    }
}
