//! Resolved per-command settings: JSON file values overridden by flags.
//! The resolved struct is echoed into every report the command writes.

use std::path::{Path, PathBuf};

use rfmark_core::distortions::DistortionKind;
use rfmark_core::nets::{DetectorConfig, EmbedderConfig};
use rfmark_core::training::{EarlyStopping, Phase, TrainingConfig};
use rfmark_core::watermarks::WatermarkSize;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{Profile, TrainingFlags};
use crate::{CliError, CliResult};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Core(rfmark_core::Error::Dataset(format!("{}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| CliError::Core(e.into()))
}

pub fn need<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing required --{flag} (flag or config file)")))
}

pub fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

/// Comma-separated kinds, or `all`.
pub fn parse_kinds(s: &str) -> CliResult<Vec<DistortionKind>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(DistortionKind::ALL.to_vec());
    }
    s.split(',')
        .map(|k| k.trim().parse::<DistortionKind>().map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

pub fn parse_size(s: &str) -> CliResult<WatermarkSize> {
    s.parse().map_err(|e: rfmark_core::Error| CliError::Usage(e.to_string()))
}

/// `(H, W)` from a `WxH` string.
pub fn parse_frame(s: &str) -> CliResult<(usize, usize)> {
    let size = parse_size(s)?;
    Ok(size.hw())
}

impl TrainingFlags {
    pub fn apply(&self, cfg: &mut TrainingConfig) {
        set(&mut cfg.epochs, self.epochs);
        set(&mut cfg.batch_size, self.batch_size);
        set(&mut cfg.learning_rate, self.learning_rate);
        set(&mut cfg.gamma_imp, self.gamma_imp);
        set(&mut cfg.gamma_det, self.gamma_det);
        set(&mut cfg.eval_every, self.eval_every);
        set(&mut cfg.seed, self.seed);
        if self.patience.is_some() || self.min_delta.is_some() {
            let es = cfg.early_stopping.get_or_insert(EarlyStopping {
                patience: 3,
                min_delta: 0.0,
            });
            set(&mut es.patience, self.patience);
            set(&mut es.min_delta, self.min_delta);
        }
    }
}

/// Network configs for a profile, resized to the frame resolution.
pub fn networks(
    profile: Profile,
    embedder: Option<&EmbedderConfig>,
    detector: Option<&DetectorConfig>,
    classes: usize,
    frame: (usize, usize),
) -> (EmbedderConfig, DetectorConfig) {
    let (e, d) = match profile {
        Profile::Full => (EmbedderConfig::full_scale(), DetectorConfig::full_scale(classes)),
        Profile::Desk => (EmbedderConfig::desk(), DetectorConfig::desk(classes)),
    };
    let e = embedder.cloned().unwrap_or(e).with_input(frame.0, frame.1);
    let d = DetectorConfig {
        classes,
        ..detector.cloned().unwrap_or(d).with_input(frame.0, frame.1)
    };
    (e, d)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfSettings {
    pub profile: Profile,
    /// `(H, W)`; the profile's own input when absent.
    pub input: Option<(usize, usize)>,
    pub embedder: Option<EmbedderConfig>,
    pub detector: Option<DetectorConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenWatermarksSettings {
    pub letters: String,
    pub size: WatermarkSize,
    pub out: Option<PathBuf>,
}

impl Default for GenWatermarksSettings {
    fn default() -> Self {
        Self {
            letters: "A..J".into(),
            size: WatermarkSize::square(16),
            out: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub source: Option<rfmark_core::dataio::FrameSource>,
    pub count: usize,
    /// `(H, W)`.
    pub resolution: (usize, usize),
    /// Below 1: fraction of frames; otherwise a frame count.
    pub heldout: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for IngestSettings {
    fn default() -> Self {
        Self {
            source: None,
            count: 250,
            resolution: (128, 128),
            heldout: 0.2,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub dataset: Option<PathBuf>,
    pub watermarks: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub profile: Profile,
    pub embedder: Option<EmbedderConfig>,
    pub detector: Option<DetectorConfig>,
    pub training: TrainingConfig,
    /// 0 saves only at the end.
    pub checkpoint_every: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSettings {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub watermarks: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub training: TrainingConfig,
    pub checkpoint_every: usize,
    pub force: bool,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        Self {
            checkpoint: None,
            dataset: None,
            watermarks: None,
            out: None,
            training: TrainingConfig {
                phase: Phase::Finetune,
                epochs: 100,
                eval_every: 1,
                early_stopping: Some(EarlyStopping {
                    patience: 5,
                    min_delta: 0.0,
                }),
                ..TrainingConfig::default()
            },
            checkpoint_every: 0,
            force: false,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSettings {
    pub checkpoint: Option<PathBuf>,
    pub watermarks: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub id: Option<String>,
    pub out: Option<PathBuf>,
    pub resize: bool,
    pub force: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSettings {
    pub checkpoint: Option<PathBuf>,
    pub watermarks: Option<PathBuf>,
    pub images: Vec<PathBuf>,
    pub resize: bool,
    pub force: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSettings {
    /// A kind name or `all`.
    pub kind: String,
    pub image: Option<PathBuf>,
    pub original: Option<PathBuf>,
    pub partner: Option<PathBuf>,
    pub area: Option<f64>,
    pub p: Option<f64>,
    pub quality: Option<u8>,
    pub bits: Option<u8>,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            kind: "all".into(),
            image: None,
            original: None,
            partner: None,
            area: None,
            p: None,
            quality: None,
            bits: None,
            out: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub watermarks: Option<PathBuf>,
    pub kinds: Vec<DistortionKind>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Per-attack accuracy rows.
    pub csv: Option<PathBuf>,
    pub force: bool,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        Self {
            checkpoint: None,
            dataset: None,
            watermarks: None,
            kinds: DistortionKind::ALL.to_vec(),
            seed: 0,
            out: None,
            csv: None,
            force: false,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub profile: Profile,
    pub sizes: Vec<WatermarkSize>,
    pub letters: String,
    pub kinds: Vec<DistortionKind>,
    pub embedder: Option<EmbedderConfig>,
    pub detector: Option<DetectorConfig>,
    pub pretrain: TrainingConfig,
    /// Fine-tuning schedule; `epochs = 0` skips the phase.
    pub finetune: TrainingConfig,
    pub evaluation_seed: u64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            dataset: None,
            out: None,
            profile: Profile::Desk,
            sizes: [4, 16, 32, 128].map(WatermarkSize::square).to_vec(),
            letters: "A..J".into(),
            kinds: DistortionKind::ALL.to_vec(),
            embedder: None,
            detector: None,
            pretrain: TrainingConfig::default(),
            finetune: TrainingConfig {
                phase: Phase::Finetune,
                epochs: 0,
                ..TrainingConfig::default()
            },
            evaluation_seed: 0,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    pub curves: Vec<PathBuf>,
    pub sweep: Option<PathBuf>,
    pub out: Option<PathBuf>,
}
