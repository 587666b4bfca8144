//! Attack suite applied between embedding and detection, the fine-tuning
//! sampler, and the gradient rules used to train through each attack.

use std::fmt;
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::ImageTensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    Identity,
    Cropout,
    Dropout,
    Jpeg,
    Quantization,
    CollusionAvg,
    CollusionAlt,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 7] = [
        DistortionKind::Identity,
        DistortionKind::Cropout,
        DistortionKind::Dropout,
        DistortionKind::Jpeg,
        DistortionKind::Quantization,
        DistortionKind::CollusionAvg,
        DistortionKind::CollusionAlt,
    ];

    /// JPEG and alternate-pixel collusion.
    pub const SOPHISTICATED: [DistortionKind; 2] = [DistortionKind::Jpeg, DistortionKind::CollusionAlt];

    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::Identity => "identity",
            DistortionKind::Cropout => "cropout",
            DistortionKind::Dropout => "dropout",
            DistortionKind::Jpeg => "jpeg",
            DistortionKind::Quantization => "quantization",
            DistortionKind::CollusionAvg => "collusion_avg",
            DistortionKind::CollusionAlt => "collusion_alt",
        }
    }

    pub fn needs_partner(self) -> bool {
        matches!(self, DistortionKind::CollusionAvg | DistortionKind::CollusionAlt)
    }

    pub fn is_sophisticated(self) -> bool {
        Self::SOPHISTICATED.contains(&self)
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown distortion kind {s:?}")))
    }
}

/// How the cropped region is returned to full resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropoutMode {
    /// Crop, then bilinearly resize back to `(H, W)`.
    #[default]
    Resize,
    /// Keep the crop in place and fill the rest from the original image.
    Patch,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollusionPattern {
    /// `(y + x)` even from the first image.
    #[default]
    Checkerboard,
    /// Even rows from the first image.
    RowInterleave,
}

impl CollusionPattern {
    #[inline]
    pub fn takes_first(self, y: usize, x: usize) -> bool {
        match self {
            CollusionPattern::Checkerboard => (y + x).is_multiple_of(2),
            CollusionPattern::RowInterleave => y.is_multiple_of(2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollusionMode {
    Average,
    Alternate(CollusionPattern),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionConfig {
    Identity,
    Cropout {
        area_fraction: f64,
        seed: u64,
        #[serde(default)]
        mode: CropoutMode,
    },
    Dropout {
        p: f64,
        seed: u64,
    },
    Jpeg {
        quality: u8,
    },
    Quantization {
        bits: u8,
    },
    CollusionAvg {
        #[serde(default)]
        partner: Option<usize>,
        seed: u64,
    },
    CollusionAlt {
        #[serde(default)]
        partner: Option<usize>,
        seed: u64,
        #[serde(default)]
        pattern: CollusionPattern,
    },
}

impl DistortionConfig {
    pub fn kind(&self) -> DistortionKind {
        match self {
            DistortionConfig::Identity => DistortionKind::Identity,
            DistortionConfig::Cropout { .. } => DistortionKind::Cropout,
            DistortionConfig::Dropout { .. } => DistortionKind::Dropout,
            DistortionConfig::Jpeg { .. } => DistortionKind::Jpeg,
            DistortionConfig::Quantization { .. } => DistortionKind::Quantization,
            DistortionConfig::CollusionAvg { .. } => DistortionKind::CollusionAvg,
            DistortionConfig::CollusionAlt { .. } => DistortionKind::CollusionAlt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match *self {
            DistortionConfig::Cropout { area_fraction, .. } if !(area_fraction > 0.0 && area_fraction <= 1.0) => {
                bad(format!("cropout area fraction {area_fraction} outside (0, 1]"))
            }
            DistortionConfig::Dropout { p, .. } if !(0.0..=1.0).contains(&p) => {
                bad(format!("dropout probability {p} outside [0, 1]"))
            }
            DistortionConfig::Jpeg { quality } if !(1..=100).contains(&quality) => {
                bad(format!("jpeg quality {quality} outside [1, 100]"))
            }
            DistortionConfig::Quantization { bits } if !(1..=8).contains(&bits) => {
                bad(format!("quantization bits {bits} outside [1, 8]"))
            }
            _ => Ok(()),
        }
    }

    /// Same attack with a different seed; used to vary stochastic attacks per frame.
    pub fn reseeded(&self, new_seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            DistortionConfig::Cropout { seed, .. }
            | DistortionConfig::Dropout { seed, .. }
            | DistortionConfig::CollusionAvg { seed, .. }
            | DistortionConfig::CollusionAlt { seed, .. } => *seed = new_seed,
            _ => {}
        }
        out
    }

    /// Partner watermark id for collusion: the configured one, or a seeded
    /// uniform choice among the other `count - 1` ids.
    pub fn partner_for(&self, label: usize, count: usize) -> Result<Option<usize>> {
        let (partner, seed) = match *self {
            DistortionConfig::CollusionAvg { partner, seed } => (partner, seed),
            DistortionConfig::CollusionAlt { partner, seed, .. } => (partner, seed),
            _ => return Ok(None),
        };
        if count < 2 {
            return Err(Error::Config("collusion needs at least two watermarks".into()));
        }
        match partner {
            Some(p) if p == label || p >= count => Err(Error::Config(format!(
                "collusion partner {p} must differ from label {label} and be below {count}"
            ))),
            Some(p) => Ok(Some(p)),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
                let draw = rng.random_range(0..count - 1);
                Ok(Some(if draw >= label { draw + 1 } else { draw }))
            }
        }
    }

    /// Short parameter description, recorded in reports.
    pub fn describe(&self) -> String {
        match self {
            DistortionConfig::Identity => "identity".into(),
            DistortionConfig::Cropout { area_fraction, mode, .. } => {
                format!("cropout(area={area_fraction}, mode={mode:?})")
            }
            DistortionConfig::Dropout { p, .. } => format!("dropout(p={p})"),
            DistortionConfig::Jpeg { quality } => format!("jpeg(quality={quality})"),
            DistortionConfig::Quantization { bits } => format!("quantization(bits={bits})"),
            DistortionConfig::CollusionAvg { partner, .. } => format!("collusion_avg(partner={partner:?})"),
            DistortionConfig::CollusionAlt { partner, pattern, .. } => {
                format!("collusion_alt(partner={partner:?}, pattern={pattern:?})")
            }
        }
    }
}

/// Inputs an attack may draw on besides the watermarked image.
#[derive(Clone, Copy, Debug)]
pub struct DistortionContext<'a> {
    pub augmented: &'a ImageTensor,
    pub original: Option<&'a ImageTensor>,
    pub partner_augmented: Option<&'a ImageTensor>,
}

impl<'a> DistortionContext<'a> {
    pub fn new(augmented: &'a ImageTensor) -> Self {
        Self {
            augmented,
            original: None,
            partner_augmented: None,
        }
    }

    pub fn with_original(mut self, original: &'a ImageTensor) -> Self {
        self.original = Some(original);
        self
    }

    pub fn with_partner(mut self, partner: &'a ImageTensor) -> Self {
        self.partner_augmented = Some(partner);
        self
    }

    fn original(&self, what: &str) -> Result<&'a ImageTensor> {
        let o = self
            .original
            .ok_or_else(|| Error::InvalidArgument(format!("{what} needs the original image")))?;
        self.augmented.ensure_same_dims(o, what)?;
        Ok(o)
    }

    fn partner(&self, what: &str) -> Result<&'a ImageTensor> {
        let p = self
            .partner_augmented
            .ok_or_else(|| Error::InvalidArgument(format!("{what} needs a partner image")))?;
        self.augmented.ensure_same_dims(p, what)?;
        Ok(p)
    }
}

/// Axis-aligned crop rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Bookkeeping needed to push a gradient back through an applied attack.
#[derive(Clone, Debug, PartialEq)]
pub enum Trace {
    /// Identity backward. Used for identity, JPEG and quantization.
    PassThrough,
    Resize(CropRect),
    Patch(CropRect),
    /// `true` where the original pixel replaced the watermarked one.
    Dropout(Vec<bool>),
    Average,
    Alternate(CollusionPattern),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Distorted {
    pub image: ImageTensor,
    pub trace: Trace,
}

/// Gradient split between the watermarked image and the collusion partner.
#[derive(Clone, Debug, PartialEq)]
pub struct DistortionGrad {
    pub augmented: ImageTensor,
    pub partner: Option<ImageTensor>,
}

impl Trace {
    /// Maps `d loss / d output` to the inputs. JPEG and quantization use the
    /// straight-through estimator.
    pub fn backward(&self, grad: &ImageTensor) -> DistortionGrad {
        let (h, w, c) = grad.dims();
        let only = |augmented| DistortionGrad {
            augmented,
            partner: None,
        };
        match self {
            Trace::PassThrough => only(grad.clone()),
            Trace::Resize(rect) => {
                let mut out = ImageTensor::filled(h, w, c, 0.0);
                let rows = resize_taps(rect.height, h);
                let cols = resize_taps(rect.width, w);
                for (y, ry) in rows.iter().enumerate() {
                    for (x, rx) in cols.iter().enumerate() {
                        for ch in 0..c {
                            let g = grad.get(y, x, ch);
                            for &(sy, wy) in ry.iter() {
                                for &(sx, wx) in rx.iter() {
                                    let (yy, xx) = (rect.top + sy, rect.left + sx);
                                    let v = out.get(yy, xx, ch) + g * wy * wx;
                                    out.set(yy, xx, ch, v);
                                }
                            }
                        }
                    }
                }
                only(out)
            }
            Trace::Patch(rect) => only(ImageTensor::from_fn(h, w, c, |y, x, ch| {
                if in_rect(rect, y, x) {
                    grad.get(y, x, ch)
                } else {
                    0.0
                }
            })),
            Trace::Dropout(mask) => only(ImageTensor::from_fn(h, w, c, |y, x, ch| {
                if mask[y * w + x] {
                    0.0
                } else {
                    grad.get(y, x, ch)
                }
            })),
            Trace::Average => {
                let half = ImageTensor::from_fn(h, w, c, |y, x, ch| 0.5 * grad.get(y, x, ch));
                DistortionGrad {
                    augmented: half.clone(),
                    partner: Some(half),
                }
            }
            Trace::Alternate(pattern) => {
                let pick = |first: bool| {
                    ImageTensor::from_fn(h, w, c, |y, x, ch| {
                        if pattern.takes_first(y, x) == first {
                            grad.get(y, x, ch)
                        } else {
                            0.0
                        }
                    })
                };
                DistortionGrad {
                    augmented: pick(true),
                    partner: Some(pick(false)),
                }
            }
        }
    }
}

fn in_rect(r: &CropRect, y: usize, x: usize) -> bool {
    y >= r.top && y < r.top + r.height && x >= r.left && x < r.left + r.width
}

/// Applies `config` to `ctx.augmented`, keeping what the backward pass needs.
pub fn apply_traced(config: &DistortionConfig, ctx: &DistortionContext<'_>) -> Result<Distorted> {
    config.validate()?;
    let aug = ctx.augmented;
    let done = |image, trace| Ok(Distorted { image, trace });
    match *config {
        DistortionConfig::Identity => done(aug.clone(), Trace::PassThrough),
        DistortionConfig::Cropout {
            area_fraction,
            seed,
            mode,
        } => {
            let rect = crop_rect(aug.height(), aug.width(), area_fraction, seed)?;
            match mode {
                CropoutMode::Resize => done(crop_resize(aug, rect), Trace::Resize(rect)),
                CropoutMode::Patch => {
                    let orig = ctx.original("cropout patch mode")?;
                    let (h, w, c) = aug.dims();
                    let img = ImageTensor::from_fn(h, w, c, |y, x, ch| {
                        if in_rect(&rect, y, x) {
                            aug.get(y, x, ch)
                        } else {
                            orig.get(y, x, ch)
                        }
                    });
                    done(img, Trace::Patch(rect))
                }
            }
        }
        DistortionConfig::Dropout { p, seed } => {
            let orig = ctx.original("dropout")?;
            let mask = dropout_mask(aug.height() * aug.width(), p, seed);
            let img = mix_by_mask(aug, orig, &mask);
            done(img, Trace::Dropout(mask))
        }
        DistortionConfig::Jpeg { quality } => done(apply_jpeg(aug, quality)?, Trace::PassThrough),
        DistortionConfig::Quantization { bits } => done(apply_quantization(aug, bits)?, Trace::PassThrough),
        DistortionConfig::CollusionAvg { .. } => {
            let partner = ctx.partner("collusion")?;
            done(collude(aug, partner, CollusionMode::Average)?, Trace::Average)
        }
        DistortionConfig::CollusionAlt { pattern, .. } => {
            let partner = ctx.partner("collusion")?;
            done(collude(aug, partner, CollusionMode::Alternate(pattern))?, Trace::Alternate(pattern))
        }
    }
}

pub fn apply(config: &DistortionConfig, ctx: &DistortionContext<'_>) -> Result<ImageTensor> {
    apply_traced(config, ctx).map(|d| d.image)
}

/// Seeded rectangle of relative area `area_fraction` with the frame's aspect ratio.
pub fn crop_rect(height: usize, width: usize, area_fraction: f64, seed: u64) -> Result<CropRect> {
    if !(area_fraction > 0.0 && area_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cropout area fraction {area_fraction} outside (0, 1]"
        )));
    }
    let side = area_fraction.sqrt();
    let ch = (height as f64 * side).round() as usize;
    let cw = (width as f64 * side).round() as usize;
    if ch == 0 || cw == 0 {
        return Err(Error::InvalidArgument(format!(
            "cropout area {area_fraction} of {height}x{width} leaves an empty crop"
        )));
    }
    let (ch, cw) = (ch.min(height), cw.min(width));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(CropRect {
        top: rng.random_range(0..=height - ch),
        left: rng.random_range(0..=width - cw),
        height: ch,
        width: cw,
    })
}

/// Bilinear taps (half-pixel centres, edge-clamped) mapping `dst` samples onto `src`.
fn resize_taps(src: usize, dst: usize) -> Vec<Vec<(usize, f32)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            let frac = (s - lo as f64) as f32;
            if hi == lo || frac == 0.0 {
                vec![(lo, 1.0)]
            } else {
                vec![(lo, 1.0 - frac), (hi, frac)]
            }
        })
        .collect()
}

/// Crops `rect` and resizes it back to the full frame.
pub fn crop_resize(img: &ImageTensor, rect: CropRect) -> ImageTensor {
    let (h, w, c) = img.dims();
    let rows = resize_taps(rect.height, h);
    let cols = resize_taps(rect.width, w);
    let mut out = ImageTensor::from_fn(h, w, c, |y, x, ch| {
        let mut acc = 0.0f32;
        for &(sy, wy) in &rows[y] {
            for &(sx, wx) in &cols[x] {
                acc += wy * wx * img.get(rect.top + sy, rect.left + sx, ch);
            }
        }
        acc
    });
    out.clamp();
    out
}

pub fn apply_cropout(aug: &ImageTensor, area_fraction: f64, seed: u64) -> Result<ImageTensor> {
    let rect = crop_rect(aug.height(), aug.width(), area_fraction, seed)?;
    Ok(crop_resize(aug, rect))
}

/// Per-pixel Bernoulli(p) replacement mask.
pub fn dropout_mask(pixels: usize, p: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pixels).map(|_| rng.random::<f64>() < p).collect()
}

fn mix_by_mask(aug: &ImageTensor, orig: &ImageTensor, mask: &[bool]) -> ImageTensor {
    let (h, w, c) = aug.dims();
    ImageTensor::from_fn(h, w, c, |y, x, ch| {
        if mask[y * w + x] {
            orig.get(y, x, ch)
        } else {
            aug.get(y, x, ch)
        }
    })
}

pub fn apply_dropout(aug: &ImageTensor, orig: &ImageTensor, p: f64, seed: u64) -> Result<ImageTensor> {
    aug.ensure_same_dims(orig, "dropout")?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0, 1]")));
    }
    Ok(mix_by_mask(aug, orig, &dropout_mask(aug.height() * aug.width(), p, seed)))
}

/// Baseline JPEG round trip through the `image` codec at the given quality.
pub fn apply_jpeg(aug: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidArgument(format!("jpeg quality {quality} outside [1, 100]")));
    }
    let rgb = aug.to_rgb8()?;
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(&rgb)
        .map_err(|e| Error::Codec(format!("jpeg encode: {e}")))?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)
        .map_err(|e| Error::Codec(format!("jpeg decode: {e}")))?;
    Ok(ImageTensor::from_rgb8(&decoded.to_rgb8()))
}

/// Value of level `idx` on a uniform `levels`-point grid over [-1, 1].
/// At 256 levels this coincides bit-for-bit with the 8-bit decoding.
#[inline]
pub fn quantization_level(idx: u32, levels: u32) -> f32 {
    idx as f32 / ((levels - 1) as f32 / 2.0) - 1.0
}

/// Nearest grid level; ties go to the lower level.
#[inline]
pub fn quantize_value(v: f32, bits: u8) -> f32 {
    let levels = 1u32 << bits;
    let half = (levels - 1) as f32 / 2.0;
    let pos = ((v.clamp(-1.0, 1.0) + 1.0) * half).floor();
    let lo = (pos.max(0.0) as u32).min(levels - 1);
    let hi = (lo + 1).min(levels - 1);
    let (a, b) = (quantization_level(lo, levels), quantization_level(hi, levels));
    if (v - b).abs() < (v - a).abs() {
        b
    } else {
        a
    }
}

pub fn apply_quantization(aug: &ImageTensor, bits: u8) -> Result<ImageTensor> {
    if !(1..=8).contains(&bits) {
        return Err(Error::InvalidArgument(format!("quantization bits {bits} outside [1, 8]")));
    }
    let (h, w, c) = aug.dims();
    let data = aug.data().iter().map(|&v| quantize_value(v, bits)).collect();
    ImageTensor::new(h, w, c, data)
}

/// Merges two copies of the same frame carrying different watermarks.
pub fn collude(a: &ImageTensor, b: &ImageTensor, mode: CollusionMode) -> Result<ImageTensor> {
    a.ensure_same_dims(b, "collusion")?;
    let (h, w, c) = a.dims();
    Ok(match mode {
        CollusionMode::Average => ImageTensor::from_fn(h, w, c, |y, x, ch| (a.get(y, x, ch) + b.get(y, x, ch)) * 0.5),
        CollusionMode::Alternate(pattern) => ImageTensor::from_fn(h, w, c, |y, x, ch| {
            if pattern.takes_first(y, x) {
                a.get(y, x, ch)
            } else {
                b.get(y, x, ch)
            }
        }),
    })
}

/// Enabled attacks and the parameter ranges the fine-tuning sampler draws from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistortionSchedule {
    pub kinds: Vec<DistortionKind>,
    pub cropout_area: (f64, f64),
    pub dropout_p: (f64, f64),
    pub jpeg_quality: (u8, u8),
    pub quantization_bits: (u8, u8),
    pub cropout_mode: CropoutMode,
    pub collusion_pattern: CollusionPattern,
}

impl Default for DistortionSchedule {
    fn default() -> Self {
        Self {
            kinds: DistortionKind::ALL.to_vec(),
            cropout_area: (0.5, 0.95),
            dropout_p: (0.1, 0.5),
            jpeg_quality: (50, 90),
            quantization_bits: (3, 6),
            cropout_mode: CropoutMode::Resize,
            collusion_pattern: CollusionPattern::Checkerboard,
        }
    }
}

impl DistortionSchedule {
    pub fn only(kind: DistortionKind) -> Self {
        Self {
            kinds: vec![kind],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::Config("no distortion kinds enabled".into()));
        }
        let (a0, a1) = self.cropout_area;
        let (p0, p1) = self.dropout_p;
        let (q0, q1) = self.jpeg_quality;
        let (b0, b1) = self.quantization_bits;
        let ok = a0 > 0.0
            && a0 <= a1
            && a1 <= 1.0
            && (0.0..=p1).contains(&p0)
            && p1 <= 1.0
            && q0 >= 1
            && q0 <= q1
            && q1 <= 100
            && b0 >= 1
            && b0 <= b1
            && b1 <= 8;
        if !ok {
            return Err(Error::Config(format!("distortion ranges out of bounds: {self:?}")));
        }
        Ok(())
    }

    /// Fine-tuning additionally requires identity in the pool.
    pub fn validate_for_finetune(&self) -> Result<()> {
        self.validate()?;
        if !self.kinds.contains(&DistortionKind::Identity) {
            return Err(Error::Config(
                "identity must stay in the fine-tuning pool so clean detection is not forgotten".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform draw over the enabled kinds, parameters uniform over the configured ranges.
pub fn sample_distortion(seed: u64, schedule: &DistortionSchedule) -> Result<DistortionConfig> {
    if schedule.kinds.is_empty() {
        return Err(Error::Config("no distortion kinds enabled".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = schedule.kinds[rng.random_range(0..schedule.kinds.len())];
    let child: u64 = rng.random();
    Ok(match kind {
        DistortionKind::Identity => DistortionConfig::Identity,
        DistortionKind::Cropout => DistortionConfig::Cropout {
            area_fraction: rng.random_range(schedule.cropout_area.0..=schedule.cropout_area.1),
            seed: child,
            mode: schedule.cropout_mode,
        },
        DistortionKind::Dropout => DistortionConfig::Dropout {
            p: rng.random_range(schedule.dropout_p.0..=schedule.dropout_p.1),
            seed: child,
        },
        DistortionKind::Jpeg => DistortionConfig::Jpeg {
            quality: rng.random_range(schedule.jpeg_quality.0..=schedule.jpeg_quality.1),
        },
        DistortionKind::Quantization => DistortionConfig::Quantization {
            bits: rng.random_range(schedule.quantization_bits.0..=schedule.quantization_bits.1),
        },
        DistortionKind::CollusionAvg => DistortionConfig::CollusionAvg {
            partner: None,
            seed: child,
        },
        DistortionKind::CollusionAlt => DistortionConfig::CollusionAlt {
            partner: None,
            seed: child,
            pattern: schedule.collusion_pattern,
        },
    })
}

/// Fixed-strength attacks used for held-out evaluation, one per kind.
pub fn evaluation_suite(seed: u64) -> Vec<DistortionConfig> {
    vec![
        DistortionConfig::Identity,
        DistortionConfig::Cropout {
            area_fraction: 0.7,
            seed,
            mode: CropoutMode::Resize,
        },
        DistortionConfig::Dropout { p: 0.3, seed },
        DistortionConfig::Jpeg { quality: 50 },
        DistortionConfig::Quantization { bits: 4 },
        DistortionConfig::CollusionAvg { partner: None, seed },
        DistortionConfig::CollusionAlt {
            partner: None,
            seed,
            pattern: CollusionPattern::Checkerboard,
        },
    ]
}

/// Evaluation attack for a single kind at the suite's strength.
pub fn evaluation_config(kind: DistortionKind, seed: u64) -> DistortionConfig {
    evaluation_suite(seed)
        .into_iter()
        .find(|c| c.kind() == kind)
        .expect("suite covers every kind")
}
