//! Image tensors in `[-1, 1]` and the quality / detection metrics.
//!
//! PSNR and SSIM are computed on the 8-bit-equivalent scale: a value `v` maps
//! to `(v + 1) · 127.5` (no rounding), and `MAX = 255`.

use std::collections::BTreeMap;
use std::path::Path;

use rfmark_nn::{Scalar, Shape4, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// H×W×C floating-point image, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!("empty image {height}×{width}×{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {height}×{width}×{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels]).expect("positive dims")
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data).expect("positive dims")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// All channel values of one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn clamp(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(-1.0, 1.0);
        }
    }

    pub fn in_range(&self) -> bool {
        self.data.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    pub fn ensure_same_dims(&self, other: &ImageTensor, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// Appends the channels of `other` (same height and width).
    pub fn stack_channels(&self, other: &ImageTensor) -> Result<ImageTensor> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape(format!(
                "channel stack: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let c = self.channels + other.channels;
        let mut data = Vec::with_capacity(self.height * self.width * c);
        for (a, b) in self.data.chunks(self.channels).zip(other.data.chunks(other.channels)) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        ImageTensor::new(self.height, self.width, c, data)
    }

    /// Channels `range` as a new image.
    pub fn select_channels(&self, range: std::ops::Range<usize>) -> Result<ImageTensor> {
        if range.is_empty() || range.end > self.channels {
            return Err(Error::Shape(format!(
                "channel range {range:?} of a {}-channel image",
                self.channels
            )));
        }
        let data = self
            .data
            .chunks(self.channels)
            .flat_map(|px| px[range.clone()].iter().copied())
            .collect();
        ImageTensor::new(self.height, self.width, range.len(), data)
    }

    /// Writes this image as item `n` of an NCHW tensor.
    pub fn write_chw<T: Scalar>(&self, out: &mut Tensor<T>, n: usize) {
        let s = out.shape();
        debug_assert_eq!((s.c, s.h, s.w), (self.channels, self.height, self.width));
        let plane = self.height * self.width;
        let item = out.item_mut(n);
        for (p, px) in self.data.chunks(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                item[c * plane + p] = T::from_f64_lossy(v as f64);
            }
        }
    }

    pub fn batch_to_chw<T: Scalar>(images: &[&ImageTensor]) -> Result<Tensor<T>> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
        let mut t = Tensor::zeros(Shape4::new(images.len(), first.channels, first.height, first.width));
        for (n, img) in images.iter().enumerate() {
            first.ensure_same_dims(img, "image batch")?;
            img.write_chw(&mut t, n);
        }
        Ok(t)
    }

    /// Item `n` of an NCHW tensor as an HWC image.
    pub fn from_chw<T: Scalar>(t: &Tensor<T>, n: usize) -> ImageTensor {
        let s = t.shape();
        let plane = s.plane();
        let item = t.item(n);
        let mut data = Vec::with_capacity(s.item_len());
        for p in 0..plane {
            for c in 0..s.c {
                data.push(item[c * plane + p].as_f64() as f32);
            }
        }
        ImageTensor::new(s.h, s.w, s.c, data).expect("tensor dims are positive")
    }

    pub fn batch_from_chw<T: Scalar>(t: &Tensor<T>) -> Vec<ImageTensor> {
        (0..t.shape().n).map(|n| Self::from_chw(t, n)).collect()
    }

    pub fn from_rgb8(img: &image::RgbImage) -> ImageTensor {
        let data = img.as_raw().iter().map(|&p| to_unit(p)).collect();
        ImageTensor::new(img.height() as usize, img.width() as usize, 3, data).expect("decoded image is non-empty")
    }

    /// Quantizes to 8 bits; values are clamped first.
    pub fn to_rgb8(&self) -> Result<image::RgbImage> {
        if self.channels != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {}", self.channels)));
        }
        let raw = self.data.iter().map(|&v| to_byte(v)).collect();
        Ok(image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer length matches"))
    }

    pub fn to_gray8(&self) -> Result<image::GrayImage> {
        if self.channels != 1 {
            return Err(Error::Shape(format!("expected 1 channel, got {}", self.channels)));
        }
        let raw = self.data.iter().map(|&v| to_byte(v)).collect();
        Ok(image::GrayImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer length matches"))
    }

    pub fn load(path: &Path) -> Result<ImageTensor> {
        let img = image::open(path).map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Triangle-filtered resize of an RGB image, passing through 8-bit pixels.
    pub fn resized(&self, height: usize, width: usize) -> Result<ImageTensor> {
        if (height, width) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let img = image::imageops::resize(
            &self.to_rgb8()?,
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        );
        Ok(Self::from_rgb8(&img))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let res = match self.channels {
            1 => self.to_gray8()?.save(path),
            _ => self.to_rgb8()?.save(path),
        };
        res.map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
    }
}

/// `[0, 255] → [-1, 1]`.
pub fn to_unit(p: u8) -> f32 {
    p as f32 / 127.5 - 1.0
}

/// `[-1, 1] → [0, 255]`, rounded and clamped.
pub fn to_byte(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn to_8bit_scale(v: f32) -> f64 {
    (v as f64 + 1.0) * 127.5
}

pub const PSNR_MAX: f64 = 255.0;

/// Peak signal-to-noise ratio in dB. Identical inputs give `f64::INFINITY`,
/// returned explicitly rather than through a division by zero.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_dims(b, "psnr")?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (to_8bit_scale(x) - to_8bit_scale(y)).powi(2))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PSNR_MAX * PSNR_MAX / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - center).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-region separable filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03,
/// dynamic range 255, over valid window positions, averaged over channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_dims(b, "ssim")?;
    let (h, w, ch) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {h}×{w}"
        )));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * PSNR_MAX).powi(2);
    let c2 = (SSIM_K2 * PSNR_MAX).powi(2);
    let mut total = 0.0;
    for c in 0..ch {
        let pa: Vec<f64> = (0..h * w).map(|i| to_8bit_scale(a.data[i * ch + c])).collect();
        let pb: Vec<f64> = (0..h * w).map(|i| to_8bit_scale(b.data[i * ch + c])).collect();
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(&pa, h, w, &k);
        let mu_b = filter_valid(&pb, h, w, &k);
        let s_aa = filter_valid(&aa, h, w, &k);
        let s_bb = filter_valid(&bb, h, w, &k);
        let s_ab = filter_valid(&ab, h, w, &k);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = s_aa[i] - ma * ma;
            let vb = s_bb[i] - mb * mb;
            let cov = s_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / ch as f64)
}

/// Fraction of positions where the predicted id equals the label.
pub fn detection_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// How per-image PSNR values are combined in a report.
pub const PSNR_AGGREGATION: &str = "mean of per-image PSNR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `None` when every augmented image equals its original (infinite PSNR).
    pub psnr_db: Option<f64>,
    pub ssim: f64,
    pub detection_accuracy: f64,
    pub per_distortion: BTreeMap<String, f64>,
    pub psnr_aggregation: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // from_fn takes Fn, so build the buffer directly instead.
    fn random_img(h: usize, w: usize, c: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * c).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
        ImageTensor::new(h, w, c, data).unwrap()
    }

    #[test]
    fn psnr_edge_cases() {
        let x = random_img(8, 8, 3, 1);
        assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
        let lo = ImageTensor::filled(4, 4, 3, -1.0);
        let hi = ImageTensor::filled(4, 4, 3, 1.0);
        assert!(psnr(&lo, &hi).unwrap().abs() < 1e-12);
        assert!(psnr(&lo, &ImageTensor::filled(4, 5, 3, 1.0)).is_err());
    }

    #[test]
    fn psnr_is_symmetric_and_decreases_with_noise() {
        let base = random_img(32, 32, 3, 2);
        let mut last = f64::INFINITY;
        for (i, amp) in [0.01f32, 0.03, 0.1, 0.3].iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + i as u64);
            let mut noisy = base.clone();
            for v in noisy.data_mut() {
                *v += amp * rng.random_range(-1.0f32..=1.0);
            }
            let p = psnr(&base, &noisy).unwrap();
            assert_eq!(p, psnr(&noisy, &base).unwrap());
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_self_and_inverse() {
        let x = random_img(24, 24, 3, 3);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let mut inv = x.clone();
        inv.data_mut().iter_mut().for_each(|v| *v = -*v);
        assert!(ssim(&x, &inv).unwrap() < 0.5);
        assert!(ssim(&ImageTensor::filled(8, 8, 1, 0.0), &ImageTensor::filled(8, 8, 1, 0.0)).is_err());
    }

    #[test]
    fn ssim_offset_invariance() {
        // A checkerboard has (numerically) zero local mean under the Gaussian
        // window, so `a` and `b` share local means and only then is the
        // luminance term exactly shift-invariant.
        let a = ImageTensor::new(
            20,
            20,
            1,
            random_img(20, 20, 1, 4).data().iter().map(|v| v * 0.4).collect(),
        )
        .unwrap();
        let b = ImageTensor::from_fn(20, 20, 1, |y, x, _| {
            a.get(y, x, 0) + if (y + x) % 2 == 0 { 0.2 } else { -0.2 }
        });
        let shift = |img: &ImageTensor, t: f32| {
            ImageTensor::new(20, 20, 1, img.data().iter().map(|v| v + t).collect()).unwrap()
        };
        let s0 = ssim(&a, &b).unwrap();
        for t in [-0.3f32, 0.1, 0.35] {
            let s1 = ssim(&shift(&a, t), &shift(&b, t)).unwrap();
            assert!((s0 - s1).abs() < 1e-6, "{s0} vs {s1}");
        }
        assert!((ssim(&b, &a).unwrap() - s0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(detection_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(detection_accuracy(&[1, 2, 3], &[4, 5, 6]).unwrap(), 0.0);
        let acc = detection_accuracy(&[1, 2, 3, 4, 5, 6], &[1, 2, 3, 4, 0, 0]).unwrap();
        assert!((acc - 4.0 / 6.0).abs() < 1e-15);
        assert!(detection_accuracy(&[1], &[1, 2]).is_err());
        assert!(detection_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn chw_round_trip() {
        let imgs = [random_img(5, 7, 4, 6), random_img(5, 7, 4, 7)];
        let t: Tensor<f32> = ImageTensor::batch_to_chw(&[&imgs[0], &imgs[1]]).unwrap();
        assert_eq!(ImageTensor::batch_from_chw(&t), imgs.to_vec());
    }

    #[test]
    fn byte_mapping_round_trips() {
        for p in 0..=255u8 {
            assert_eq!(to_byte(to_unit(p)), p);
        }
    }
}
