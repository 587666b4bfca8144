//! Letter-glyph watermark sets, upper-left-anchored tiling and the RGBW overlay.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::font::{glyph, GLYPH_HEIGHT, GLYPH_WIDTH};
use crate::imaging::ImageTensor;
use crate::{Error, Result};

pub const MIN_WATERMARK_EXTENT: usize = 4;

/// Watermark extent. Written `WxH`, like frame sizes (`64x60` is 64 wide, 60 tall).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WatermarkSize {
    pub width: usize,
    pub height: usize,
}

impl WatermarkSize {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub const fn square(extent: usize) -> Self {
        Self::new(extent, extent)
    }

    /// `(height, width)`.
    pub fn hw(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl fmt::Display for WatermarkSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for WatermarkSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (w, h) = parse_wxh(s)?;
        Ok(Self::new(w, h))
    }
}

/// Parses `WxH` (also accepts `×` and a bare `N` for squares).
pub fn parse_wxh(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("expected WxH, got {s:?}"));
    let parts: Vec<&str> = s.split(['x', 'X', '×']).map(str::trim).collect();
    match parts.as_slice() {
        [n] => {
            let n = n.parse().map_err(|_| bad())?;
            Ok((n, n))
        }
        [w, h] => Ok((w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Watermark {
    pub id: usize,
    pub glyph: char,
    pub size: WatermarkSize,
    /// Row-major `height × width`, values in {-1, +1}.
    pub bitmap: Vec<f32>,
}

impl Watermark {
    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.bitmap[y * self.size.width + x]
    }

    pub fn to_image(&self) -> ImageTensor {
        ImageTensor::new(self.size.height, self.size.width, 1, self.bitmap.clone()).expect("non-empty bitmap")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WatermarkSet {
    pub watermarks: Vec<Watermark>,
    pub size: WatermarkSize,
    pub manifest_hash: String,
}

impl WatermarkSet {
    pub fn len(&self) -> usize {
        self.watermarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.watermarks.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&Watermark> {
        self.watermarks
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("watermark id {id} outside 0..{}", self.len())))
    }

    pub fn letters(&self) -> Vec<char> {
        self.watermarks.iter().map(|w| w.glyph).collect()
    }

    pub fn manifest(&self) -> WatermarkManifest {
        WatermarkManifest {
            width: self.size.width,
            height: self.size.height,
            letters: self.letters().iter().map(|c| c.to_string()).collect(),
            ids: self.watermarks.iter().map(|w| w.id).collect(),
            digest: self.manifest_hash.clone(),
            files: self.watermarks.iter().map(file_name).collect(),
        }
    }

    /// One grayscale PNG per watermark plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for wm in &self.watermarks {
            wm.to_image().save(&dir.join(file_name(wm)))?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, manifest).map_err(|e| Error::io(path, e))
    }

    /// Reads a set written by [`WatermarkSet::save`] and checks the digest.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: WatermarkManifest = serde_json::from_str(&text)?;
        let size = WatermarkSize::new(manifest.width, manifest.height);
        let mut watermarks = Vec::with_capacity(manifest.ids.len());
        for (i, (letter, file)) in manifest.letters.iter().zip(&manifest.files).enumerate() {
            let img = image::open(dir.join(file))
                .map_err(|e| Error::Codec(format!("{file}: {e}")))?
                .to_luma8();
            if (img.width() as usize, img.height() as usize) != (size.width, size.height) {
                return Err(Error::WatermarkSet(format!("{file} is not {size}")));
            }
            let glyph = letter
                .chars()
                .next()
                .ok_or_else(|| Error::WatermarkSet("empty letter in manifest".into()))?;
            let bitmap = img.as_raw().iter().map(|&p| if p >= 128 { 1.0 } else { -1.0 }).collect();
            watermarks.push(Watermark {
                id: i,
                glyph,
                size,
                bitmap,
            });
        }
        let digest = set_digest(size, &watermarks);
        if digest != manifest.digest {
            return Err(Error::Integrity {
                path,
                reason: format!("digest {digest} does not match manifest {}", manifest.digest),
            });
        }
        Ok(Self {
            watermarks,
            size,
            manifest_hash: digest,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WatermarkManifest {
    pub width: usize,
    pub height: usize,
    pub letters: Vec<String>,
    pub ids: Vec<usize>,
    pub digest: String,
    pub files: Vec<String>,
}

fn file_name(wm: &Watermark) -> String {
    format!("wm_{:02}_{}.png", wm.id, wm.glyph)
}

fn set_digest(size: WatermarkSize, watermarks: &[Watermark]) -> String {
    let mut h = Sha256::new();
    h.update(b"rfmark-watermarks-v1");
    h.update((size.width as u64).to_le_bytes());
    h.update((size.height as u64).to_le_bytes());
    for wm in watermarks {
        h.update((wm.id as u64).to_le_bytes());
        h.update(wm.glyph.to_string().as_bytes());
        h.update(wm.bitmap.iter().map(|&v| u8::from(v > 0.0)).collect::<Vec<_>>());
    }
    hex::encode(h.finalize())
}

/// Nearest-neighbour scale of the glyph to `size`, sampling at pixel centres.
fn render_glyph(letter: char, size: WatermarkSize) -> Result<Vec<f32>> {
    let mask = glyph(letter)
        .ok_or_else(|| Error::WatermarkSet(format!("no glyph for {letter:?} (letters A-Z only)")))?;
    let mut out = Vec::with_capacity(size.width * size.height);
    for y in 0..size.height {
        let gy = ((2 * y + 1) * GLYPH_HEIGHT) / (2 * size.height);
        for x in 0..size.width {
            let gx = ((2 * x + 1) * GLYPH_WIDTH) / (2 * size.width);
            out.push(if mask[gy][gx] { 1.0 } else { -1.0 });
        }
    }
    Ok(out)
}

/// Renders one watermark per letter; ids follow the order of `letters`.
pub fn generate_letter_set(letters: &[char], size: WatermarkSize) -> Result<WatermarkSet> {
    if letters.len() < 2 {
        return Err(Error::WatermarkSet(format!(
            "need at least 2 letters, got {}",
            letters.len()
        )));
    }
    if size.width < MIN_WATERMARK_EXTENT || size.height < MIN_WATERMARK_EXTENT {
        return Err(Error::WatermarkSet(format!(
            "size {size} is below {MIN_WATERMARK_EXTENT}x{MIN_WATERMARK_EXTENT}; glyphs are unrenderable"
        )));
    }
    let mut watermarks: Vec<Watermark> = Vec::with_capacity(letters.len());
    for (id, &letter) in letters.iter().enumerate() {
        let letter = letter.to_ascii_uppercase();
        if let Some(prev) = watermarks.iter().find(|w| w.glyph == letter) {
            return Err(Error::WatermarkSet(format!(
                "duplicate letter {letter:?} (ids {} and {id})",
                prev.id
            )));
        }
        let bitmap = render_glyph(letter, size)?;
        if bitmap.iter().all(|&v| v == bitmap[0]) {
            return Err(Error::WatermarkSet(format!("{letter:?} renders constant at {size}")));
        }
        if let Some(prev) = watermarks.iter().find(|w| w.bitmap == bitmap) {
            return Err(Error::WatermarkSet(format!(
                "{letter:?} and {:?} render identically at {size}",
                prev.glyph
            )));
        }
        watermarks.push(Watermark {
            id,
            glyph: letter,
            size,
            bitmap,
        });
    }
    let manifest_hash = set_digest(size, &watermarks);
    Ok(WatermarkSet {
        watermarks,
        size,
        manifest_hash,
    })
}

/// Parses `A..J`, `A-J`, `ABC` or `A,B,C`.
pub fn parse_letters(spec: &str) -> Result<Vec<char>> {
    let s = spec.trim();
    let range = s.split_once("..").or_else(|| s.split_once('-'));
    if let Some((a, b)) = range {
        let (a, b) = (a.trim(), b.trim());
        if a.chars().count() == 1 && b.chars().count() == 1 {
            let (a, b) = (a.chars().next().unwrap(), b.chars().next().unwrap());
            if a > b {
                return Err(Error::InvalidArgument(format!("empty letter range {spec:?}")));
            }
            return Ok((a..=b).collect());
        }
    }
    Ok(s.chars().filter(|c| !c.is_whitespace() && *c != ',').collect())
}

/// Repeats the bitmap over an `H × W` plane from the upper-left corner; edge tiles are cropped.
pub fn tile(wm: &Watermark, frame: (usize, usize)) -> Result<ImageTensor> {
    let (h, w) = frame;
    if h < wm.size.height || w < wm.size.width {
        return Err(Error::FrameTooSmall {
            frame,
            watermark: wm.size.hw(),
        });
    }
    let (wh, ww) = wm.size.hw();
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        let row = &wm.bitmap[(y % wh) * ww..(y % wh + 1) * ww];
        data.extend((0..w).map(|x| row[x % ww]));
    }
    ImageTensor::new(h, w, 1, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WatermarkOverlay {
    pub rgb: ImageTensor,
    pub wm_channel: ImageTensor,
    pub label: usize,
}

impl WatermarkOverlay {
    /// The 4-channel RGBW tensor fed to the Embedder.
    pub fn to_rgbw(&self) -> ImageTensor {
        self.rgb
            .stack_channels(&self.wm_channel)
            .expect("overlay planes share dimensions")
    }

    pub fn strip(self) -> ImageTensor {
        self.rgb
    }
}

pub fn overlay(image: &ImageTensor, wm: &Watermark) -> Result<WatermarkOverlay> {
    if image.channels() != 3 {
        return Err(Error::Shape(format!(
            "overlay expects an RGB image, got {} channels",
            image.channels()
        )));
    }
    let wm_channel = tile(wm, (image.height(), image.width()))?;
    Ok(WatermarkOverlay {
        rgb: image.clone(),
        wm_channel,
        label: wm.id,
    })
}
