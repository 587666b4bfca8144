//! Frame ingestion, dataset splits and checkpoint persistence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfmark_nn::{decode_state, encode_state, AdamConfig, Sequential};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::imaging::{MetricReport, ImageTensor};
use crate::nets::{build_detector, build_embedder, Detector, DetectorConfig, Embedder, EmbedderConfig};
use crate::rfcalc::LayerSpec;
use crate::training::{Phase, TrainingConfig, TrainingState};
use crate::watermarks::WatermarkSize;
use crate::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "ppm", "webp"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrameSource {
    /// Seeded procedural frames; no files involved.
    Synthetic,
    ImageDir { path: PathBuf },
    /// Decoded to `frames_dir` by an external `ffmpeg` before sampling.
    Video { path: PathBuf, frames_dir: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FrameRef {
    Synthetic { seed: u64 },
    File { path: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDataset {
    pub source: FrameSource,
    pub count: usize,
    /// `(H, W)` after resizing.
    pub resolution: (usize, usize),
    pub seed: u64,
    pub frames: Vec<FrameRef>,
    pub split: Split,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Heldout {
    Fraction(f64),
    Count(usize),
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Runs `ffmpeg` to dump every frame of `video` as PNG into `out_dir`.
pub fn extract_video_frames(video: &Path, out_dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let status = Command::new("ffmpeg")
        .args(["-loglevel", "error", "-y", "-i"])
        .arg(video)
        .arg(out_dir.join("frame_%06d.png"))
        .status()
        .map_err(|e| Error::Dataset(format!("could not run ffmpeg for {}: {e}", video.display())))?;
    if !status.success() {
        return Err(Error::Dataset(format!("ffmpeg failed on {} ({status})", video.display())));
    }
    Ok(list_images(out_dir)?.len())
}

/// Samples `count` frames uniformly without replacement. The split starts empty.
pub fn ingest(source: &FrameSource, count: usize, resolution: (usize, usize), seed: u64) -> Result<FrameDataset> {
    if count == 0 {
        return Err(Error::Dataset("frame count must be positive".into()));
    }
    if resolution.0 == 0 || resolution.1 == 0 {
        return Err(Error::Dataset(format!("invalid resolution {resolution:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = match source {
        FrameSource::Synthetic => (0..count).map(|_| FrameRef::Synthetic { seed: rng.random() }).collect(),
        FrameSource::ImageDir { path } | FrameSource::Video { frames_dir: path, .. } => {
            if let FrameSource::Video { path: video, frames_dir } = source {
                if list_images(frames_dir).map(|f| f.is_empty()).unwrap_or(true) {
                    extract_video_frames(video, frames_dir)?;
                }
            }
            let mut files = list_images(path)?;
            if files.len() < count {
                return Err(Error::Dataset(format!(
                    "{} holds {} images, {count} requested",
                    path.display(),
                    files.len()
                )));
            }
            files.shuffle(&mut rng);
            files.truncate(count);
            files.into_iter().map(|path| FrameRef::File { path }).collect()
        }
    };
    Ok(FrameDataset {
        source: source.clone(),
        count,
        resolution,
        seed,
        frames,
        split: Split {
            train: (0..count).collect(),
            heldout: Vec::new(),
        },
    })
}

/// Seeded disjoint train / held-out split.
pub fn split(mut dataset: FrameDataset, heldout: Heldout, seed: u64) -> Result<FrameDataset> {
    let total = dataset.frames.len();
    let n = match heldout {
        Heldout::Count(n) => n,
        Heldout::Fraction(f) if (0.0..1.0).contains(&f) => (total as f64 * f).round() as usize,
        Heldout::Fraction(f) => return Err(Error::Dataset(format!("held-out fraction {f} outside [0, 1)"))),
    };
    if n >= total {
        return Err(Error::Dataset(format!("cannot withhold {n} of {total} frames")));
    }
    if n == 0 {
        log::warn!("no frames withheld; held-out metrics will be unavailable");
    }
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut heldout_idx = idx[..n].to_vec();
    let mut train_idx = idx[n..].to_vec();
    heldout_idx.sort_unstable();
    train_idx.sort_unstable();
    dataset.split = Split {
        train: train_idx,
        heldout: heldout_idx,
    };
    Ok(dataset)
}

impl FrameDataset {
    pub fn load_frame(&self, index: usize) -> Result<ImageTensor> {
        let (h, w) = self.resolution;
        match self.frames.get(index) {
            None => Err(Error::Dataset(format!("frame {index} outside 0..{}", self.frames.len()))),
            Some(FrameRef::Synthetic { seed }) => Ok(synthetic_frame(h, w, *seed)),
            Some(FrameRef::File { path }) => {
                let img = image::open(path)
                    .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?
                    .to_rgb8();
                let img = if (img.height() as usize, img.width() as usize) == (h, w) {
                    img
                } else {
                    image::imageops::resize(&img, w as u32, h as u32, FilterType::Triangle)
                };
                Ok(ImageTensor::from_rgb8(&img))
            }
        }
    }

    pub fn load(&self, indices: &[usize]) -> Result<Vec<ImageTensor>> {
        indices.iter().map(|&i| self.load_frame(i)).collect()
    }

    pub fn train_frames(&self) -> Result<Vec<ImageTensor>> {
        self.load(&self.split.train)
    }

    pub fn heldout_frames(&self) -> Result<Vec<ImageTensor>> {
        self.load(&self.split.heldout)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(path, text.as_bytes())
    }

    pub fn open(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: FrameDataset = serde_json::from_str(&text)?;
        let overlap = ds.split.heldout.iter().any(|i| ds.split.train.contains(i));
        if overlap || ds.split.train.iter().chain(&ds.split.heldout).any(|&i| i >= ds.frames.len()) {
            return Err(Error::Dataset(format!("{}: inconsistent split", path.display())));
        }
        Ok(ds)
    }
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Bilinearly interpolated random lattice with `cell`-pixel spacing.
fn value_noise(h: usize, w: usize, cell: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let gh = (h as f32 / cell).ceil() as usize + 2;
    let gw = (w as f32 / cell).ceil() as usize + 2;
    let grid: Vec<f32> = (0..gh * gw).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f32 / cell;
        let (y0, ty) = (fy.floor() as usize, smoothstep(0.0, 1.0, fy.fract()));
        for x in 0..w {
            let fx = x as f32 / cell;
            let (x0, tx) = (fx.floor() as usize, smoothstep(0.0, 1.0, fx.fract()));
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
            let bot = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Procedural stand-in for natural frames: a colour gradient, textured value
/// noise, anti-aliased discs and boxes, and faint sensor noise.
pub fn synthetic_frame(h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut color = || [rng.random_range(-0.9f32..0.9), rng.random_range(-0.9f32..0.9), rng.random_range(-0.9f32..0.9)];
    let (c0, c1) = (color(), color());
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dy, dx) = angle.sin_cos();
    let scale = (h.max(w)) as f32;
    let tex_cell = rng.random_range(6.0..24.0);
    let texture = value_noise(h, w, tex_cell, &mut rng);
    let fine = value_noise(h, w, tex_cell / 3.0, &mut rng);
    let tex_amp = rng.random_range(0.05..0.3);
    let tint = [rng.random_range(0.5f32..1.0), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)];

    let mut img = ImageTensor::from_fn(h, w, 3, |y, x, c| {
        let t = ((y as f32 - h as f32 / 2.0) * dy + (x as f32 - w as f32 / 2.0) * dx) / scale + 0.5;
        let base = c0[c] * (1.0 - t) + c1[c] * t;
        let p = y * w + x;
        base + tex_amp * tint[c] * (texture[p] + 0.5 * fine[p])
    });

    let shapes = rng.random_range(3..9);
    for _ in 0..shapes {
        let col = [rng.random_range(-1.0f32..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let alpha = rng.random_range(0.5f32..1.0);
        let cy = rng.random_range(0.0..h as f32);
        let cx = rng.random_range(0.0..w as f32);
        let r = rng.random_range(0.05..0.3) * scale;
        let is_disc = rng.random_bool(0.5);
        let (ry, rx) = (r * rng.random_range(0.4..1.0), r * rng.random_range(0.4..1.0));
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (y as f32 + 0.5 - cy, x as f32 + 0.5 - cx);
                // Signed distance to the boundary, negative inside.
                let d = if is_disc {
                    (py * py + px * px).sqrt() - r
                } else {
                    (py.abs() - ry).max(px.abs() - rx)
                };
                let cover = alpha * (1.0 - smoothstep(-0.75, 0.75, d));
                if cover > 0.0 {
                    for (c, &cv) in col.iter().enumerate() {
                        let v = img.get(y, x, c);
                        img.set(y, x, c, v * (1.0 - cover) + cv * cover);
                    }
                }
            }
        }
    }
    for v in img.data_mut() {
        *v += rng.random_range(-0.02f32..0.02);
    }
    img.clamp();
    img
}

pub const CHECKPOINT_VERSION: u32 = 1;
const EMBEDDER_BLOB: &str = "embedder.bin";
const DETECTOR_BLOB: &str = "detector.bin";
const META_FILE: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub embedder_config: EmbedderConfig,
    pub detector_config: DetectorConfig,
    pub embedder_chain: Vec<LayerSpec>,
    pub detector_chain: Vec<LayerSpec>,
    pub embedder_rf: usize,
    pub detector_rf: usize,
    pub watermark_manifest_hash: String,
    pub watermark_size: WatermarkSize,
    pub phase: Phase,
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
    /// Adam moments are not stored; each phase starts from fresh moments.
    pub optimizer_reset_between_phases: bool,
    pub training: Option<TrainingConfig>,
    pub metrics: Option<MetricReport>,
    pub blobs: BTreeMap<String, BlobInfo>,
}

/// Provenance recorded alongside the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointInfo {
    pub watermark_manifest_hash: String,
    pub watermark_size: WatermarkSize,
    pub seed: u64,
    pub training: Option<TrainingConfig>,
    pub metrics: Option<MetricReport>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub path: PathBuf,
    pub meta: CheckpointMeta,
}

pub struct LoadedCheckpoint {
    pub embedder: Embedder<f32>,
    pub detector: Detector<f32>,
    pub meta: CheckpointMeta,
}

impl LoadedCheckpoint {
    pub fn into_state(self, adam: AdamConfig) -> TrainingState {
        let mut state = TrainingState::new(self.embedder, self.detector, adam);
        state.phase = self.meta.phase;
        state.epoch = self.meta.epoch;
        state.step = self.meta.step;
        state
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes weights and metadata to a sibling temp directory, then renames it into place.
pub fn save_checkpoint(
    embedder: &Embedder<f32>,
    detector: &Detector<f32>,
    phase: Phase,
    epoch: usize,
    step: u64,
    info: &CheckpointInfo,
    path: &Path,
) -> Result<Checkpoint> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no directory name", path.display())))?
        .to_string_lossy()
        .into_owned();
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;

    let mut blobs = BTreeMap::new();
    for (key, file, net) in [
        ("embedder", EMBEDDER_BLOB, &embedder.net),
        ("detector", DETECTOR_BLOB, &detector.net),
    ] {
        let bytes = encode_state(&net.state());
        let p = tmp.join(file);
        std::fs::write(&p, &bytes).map_err(|e| Error::io(&p, e))?;
        blobs.insert(
            key.to_string(),
            BlobInfo {
                file: file.to_string(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            },
        );
    }
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        embedder_config: embedder.config.clone(),
        detector_config: detector.config.clone(),
        embedder_chain: embedder.layer_chain(),
        detector_chain: detector.layer_chain(),
        embedder_rf: embedder.rf,
        detector_rf: detector.rf,
        watermark_manifest_hash: info.watermark_manifest_hash.clone(),
        watermark_size: info.watermark_size,
        phase,
        epoch,
        step,
        seed: info.seed,
        optimizer_reset_between_phases: true,
        training: info.training.clone(),
        metrics: info.metrics.clone(),
        blobs,
    };
    let meta_path = tmp.join(META_FILE);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;

    let old = parent.join(format!(".{name}.old-{}", std::process::id()));
    let had_old = path.exists();
    if had_old {
        std::fs::rename(path, &old).map_err(|e| Error::io(path, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    if had_old {
        std::fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    }
    Ok(Checkpoint {
        path: path.to_path_buf(),
        meta,
    })
}

pub fn save_state(state: &TrainingState, info: &CheckpointInfo, path: &Path) -> Result<Checkpoint> {
    save_checkpoint(&state.embedder, &state.detector, state.phase, state.epoch, state.step, info, path)
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let meta_path = path.join(META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(serde_json::from_value(value)?)
}

fn load_blob(dir: &Path, info: &BlobInfo, net: &mut Sequential<f32>) -> Result<()> {
    let p = dir.join(&info.file);
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    let digest = sha256_hex(&bytes);
    if bytes.len() as u64 != info.bytes || digest != info.sha256 {
        return Err(Error::Integrity {
            path: p,
            reason: format!(
                "expected {} bytes with sha256 {}, found {} bytes with {digest}",
                info.bytes,
                info.sha256,
                bytes.len()
            ),
        });
    }
    let state = decode_state::<f32>(&bytes).map_err(|e| Error::Integrity {
        path: p.clone(),
        reason: e.to_string(),
    })?;
    net.load_state(&state).map_err(|e| Error::Integrity {
        path: p,
        reason: e.to_string(),
    })
}

/// Verifies digests and receptive fields, then rebuilds both networks.
/// A different watermark manifest is an error unless `force` is set.
pub fn load_checkpoint(path: &Path, expected_manifest: Option<&str>, force: bool) -> Result<LoadedCheckpoint> {
    let meta = read_meta(path)?;
    if let Some(expected) = expected_manifest {
        if expected != meta.watermark_manifest_hash {
            if !force {
                return Err(Error::ManifestMismatch {
                    checkpoint: meta.watermark_manifest_hash.clone(),
                    supplied: expected.to_string(),
                });
            }
            log::warn!(
                "loading {} with watermark manifest {} although it was trained with {}",
                path.display(),
                expected,
                meta.watermark_manifest_hash
            );
        }
    }
    let rf_check = |what: &str, recorded: usize, chain: &[LayerSpec], cfg_chain: Vec<LayerSpec>, rf: usize| {
        if chain != cfg_chain.as_slice() || rf != recorded {
            Err(Error::Integrity {
                path: path.join(META_FILE),
                reason: format!("{what} receptive field {recorded} does not match its configuration ({rf})"),
            })
        } else {
            Ok(())
        }
    };
    rf_check(
        "embedder",
        meta.embedder_rf,
        &meta.embedder_chain,
        meta.embedder_config.layer_chain(),
        meta.embedder_config.receptive_field()?,
    )?;
    rf_check(
        "detector",
        meta.detector_rf,
        &meta.detector_chain,
        meta.detector_config.layer_chain(),
        meta.detector_config.receptive_field()?,
    )?;
    let mut embedder = build_embedder::<f32>(&meta.embedder_config, 0)?;
    let mut detector = build_detector::<f32>(&meta.detector_config, 0)?;
    let blob = |key: &str| {
        meta.blobs.get(key).ok_or_else(|| Error::Integrity {
            path: path.join(META_FILE),
            reason: format!("no {key} blob listed"),
        })
    };
    load_blob(path, blob("embedder")?, &mut embedder.net)?;
    load_blob(path, blob("detector")?, &mut detector.net)?;
    Ok(LoadedCheckpoint {
        embedder,
        detector,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::psnr;

    #[test]
    fn synthetic_frames_are_deterministic_and_varied() {
        let a = synthetic_frame(64, 48, 1);
        assert_eq!(a, synthetic_frame(64, 48, 1));
        assert!(a.in_range());
        let b = synthetic_frame(64, 48, 2);
        assert!(psnr(&a, &b).unwrap() < 30.0);
        let mean = a.data().iter().map(|&v| v as f64).sum::<f64>() / a.data().len() as f64;
        let var = a.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / a.data().len() as f64;
        assert!(var > 1e-3);
    }

    #[test]
    fn ingest_and_split() {
        let ds = ingest(&FrameSource::Synthetic, 50, (16, 16), 3).unwrap();
        assert_eq!(ds, ingest(&FrameSource::Synthetic, 50, (16, 16), 3).unwrap());
        assert!(ingest(&FrameSource::Synthetic, 0, (16, 16), 3).is_err());
        let s = split(ds.clone(), Heldout::Fraction(0.2), 4).unwrap();
        assert_eq!((s.split.train.len(), s.split.heldout.len()), (40, 10));
        assert!(s.split.heldout.iter().all(|i| !s.split.train.contains(i)));
        assert_eq!(s, split(ds.clone(), Heldout::Fraction(0.2), 4).unwrap());
        assert!(split(ds.clone(), Heldout::Count(50), 4).is_err());
        let none = split(ds, Heldout::Count(0), 4).unwrap();
        assert_eq!((none.split.train.len(), none.split.heldout.len()), (50, 0));
    }

    #[test]
    fn paper_sized_split() {
        let ds = ingest(&FrameSource::Synthetic, 5000, (8, 8), 0).unwrap();
        let s = split(ds, Heldout::Count(1000), 1).unwrap();
        assert_eq!((s.split.train.len(), s.split.heldout.len()), (4000, 1000));
    }

    #[test]
    fn image_directory_ingest() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..12 {
            synthetic_frame(20, 30, i).save(&dir.path().join(format!("img{i:03}.png"))).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "skip").unwrap();
        let src = FrameSource::ImageDir {
            path: dir.path().to_path_buf(),
        };
        let ds = ingest(&src, 12, (16, 24), 5).unwrap();
        assert_eq!(ds.frames.len(), 12);
        assert_eq!(ds, ingest(&src, 12, (16, 24), 5).unwrap());
        assert_eq!(ds.load_frame(3).unwrap().dims(), (16, 24, 3));
        assert!(ingest(&src, 13, (16, 24), 5).is_err());
        let path = dir.path().join("dataset.json");
        ds.save(&path).unwrap();
        assert_eq!(FrameDataset::open(&path).unwrap(), ds);
    }
}
