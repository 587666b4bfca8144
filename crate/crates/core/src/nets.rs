//! Embedder (RGBW → RGB autoencoder with sub-pixel upsampling) and Detector
//! (conv/pool classifier over watermark ids).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfmark_nn::{
    Activation, BatchNorm2d, Conv2d, Layer, Linear, MaxPool2d, Mode, Scalar, Sequential, Shape4, Tensor,
};
use serde::{Deserialize, Serialize};

use crate::imaging::ImageTensor;
use crate::rfcalc::{chain_rf, valid_watermark_range, LayerSpec, SizeRange};
use crate::watermarks::WatermarkOverlay;
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

/// One strided convolution of the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvUnit {
    pub depth: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvUnit {
    pub const fn new(depth: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            depth,
            kernel,
            stride,
            padding,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    /// `(H, W)` of the RGBW input.
    pub input: (usize, usize),
    pub encoder: Vec<ConvUnit>,
    /// Channel count after each ×`upscale_factor` pixel-shuffle stage.
    pub decoder_depths: Vec<usize>,
    pub kernel: usize,
    pub upscale_factor: usize,
    #[serde(default = "default_leaky")]
    pub leaky_slope: f64,
}

fn default_leaky() -> f64 {
    LEAKY_SLOPE
}

impl EmbedderConfig {
    /// 1280×720 frames, encoder RF 16.
    pub fn full_scale() -> Self {
        Self {
            input: (720, 1280),
            encoder: vec![ConvUnit::new(16, 4, 4, 0), ConvUnit::new(64, 4, 2, 1)],
            decoder_depths: vec![64, 128, 256],
            kernel: 3,
            upscale_factor: 2,
            leaky_slope: LEAKY_SLOPE,
        }
    }

    /// 128×128 frames, encoder RF 8.
    pub fn desk() -> Self {
        Self {
            input: (128, 128),
            encoder: vec![ConvUnit::new(16, 2, 2, 0), ConvUnit::new(64, 4, 2, 1)],
            decoder_depths: vec![64, 32],
            kernel: 3,
            upscale_factor: 2,
            leaky_slope: LEAKY_SLOPE,
        }
    }

    pub fn with_input(mut self, height: usize, width: usize) -> Self {
        self.input = (height, width);
        self
    }

    pub fn downscale(&self) -> usize {
        self.encoder.iter().map(|u| u.stride).product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.encoder.is_empty() || self.decoder_depths.is_empty() {
            return bad("embedder needs at least one encoder and one decoder unit".into());
        }
        if self.encoder.iter().any(|u| u.depth == 0 || u.kernel == 0 || u.stride == 0)
            || self.decoder_depths.contains(&0)
        {
            return bad("embedder depths, kernels and strides must be positive".into());
        }
        if self.kernel.is_multiple_of(2) || self.upscale_factor < 2 {
            return bad(format!(
                "decoder kernel must be odd and upscale ≥ 2 (got {} and {})",
                self.kernel, self.upscale_factor
            ));
        }
        let down = self.downscale();
        let up = self.upscale_factor.pow(self.decoder_depths.len() as u32);
        if down != up {
            return bad(format!("encoder downscales by {down} but decoder upscales by {up}"));
        }
        let (h, w) = self.input;
        if h == 0 || w == 0 || h % down != 0 || w % down != 0 {
            return bad(format!("input {w}x{h} is not divisible by the encoder downscale {down}"));
        }
        Ok(())
    }

    /// RF-bearing description of the encode path.
    pub fn layer_chain(&self) -> Vec<LayerSpec> {
        let mut chain = Vec::new();
        for (i, u) in self.encoder.iter().enumerate() {
            chain.push(LayerSpec::conv(&format!("enc{}.conv", i + 1), u.kernel, u.stride, u.padding));
            chain.push(LayerSpec::norm(&format!("enc{}.bn", i + 1)));
            chain.push(LayerSpec::activation(&format!("enc{}.leaky_relu", i + 1)));
        }
        chain
    }

    pub fn receptive_field(&self) -> Result<usize> {
        let (h, w) = self.input;
        Ok(chain_rf(&self.layer_chain(), (w, h))?.network_rf)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorStage {
    pub depth: usize,
    pub conv: (usize, usize, usize),
    /// `(kernel, stride)`.
    pub pool: (usize, usize),
}

impl DetectorStage {
    pub const fn new(depth: usize, conv: (usize, usize, usize), pool: (usize, usize)) -> Self {
        Self { depth, conv, pool }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// `(H, W)` of the RGB input.
    pub input: (usize, usize),
    pub stages: Vec<DetectorStage>,
    /// Number of watermark ids `M`.
    pub classes: usize,
}

impl DetectorConfig {
    /// 1280×720 frames, RF 161.
    pub fn full_scale(classes: usize) -> Self {
        Self {
            input: (720, 1280),
            stages: vec![
                DetectorStage::new(16, (5, 3, 1), (5, 3)),
                DetectorStage::new(32, (5, 3, 1), (5, 3)),
            ],
            classes,
        }
    }

    /// 128×128 frames, RF 41.
    pub fn desk(classes: usize) -> Self {
        Self {
            input: (128, 128),
            stages: vec![
                DetectorStage::new(16, (5, 2, 1), (3, 2)),
                DetectorStage::new(32, (5, 2, 1), (3, 2)),
            ],
            classes,
        }
    }

    pub fn with_input(mut self, height: usize, width: usize) -> Self {
        self.input = (height, width);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("detector needs M ≥ 2 classes, got {}", self.classes)));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("detector needs at least one conv stage".into()));
        }
        if self
            .stages
            .iter()
            .any(|s| s.depth == 0 || s.conv.0 == 0 || s.conv.1 == 0 || s.pool.0 == 0 || s.pool.1 == 0)
        {
            return Err(Error::Config("detector depths, kernels and strides must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_chain(&self) -> Vec<LayerSpec> {
        let mut chain = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            let (k, st, p) = s.conv;
            chain.push(LayerSpec::conv(&format!("det{}.conv", i + 1), k, st, p));
            chain.push(LayerSpec::activation(&format!("det{}.relu", i + 1)));
            chain.push(LayerSpec::pool(&format!("det{}.pool", i + 1), s.pool.0, s.pool.1));
        }
        chain.push(LayerSpec::dense("fc"));
        chain
    }

    pub fn receptive_field(&self) -> Result<usize> {
        let (h, w) = self.input;
        Ok(chain_rf(&self.layer_chain(), (w, h))?.network_rf)
    }

    /// Spatial extent `(H, W)` feeding the fully connected head.
    pub fn feature_extent(&self) -> Result<(usize, usize)> {
        let (h, w) = self.input;
        let report = chain_rf(&self.layer_chain(), (w, h))?;
        let (fw, fh) = report.final_state().n;
        Ok((fh, fw))
    }
}

/// Admissible watermark extents for a network pair.
pub fn watermark_window(embedder: &EmbedderConfig, detector: &DetectorConfig) -> Result<SizeRange> {
    let (eh, ew) = embedder.input;
    let (dh, dw) = detector.input;
    let e = chain_rf(&embedder.layer_chain(), (ew, eh))?;
    let d = chain_rf(&detector.layer_chain(), (dw, dh))?;
    valid_watermark_range(&e, &d)
}

#[derive(Clone, Debug)]
pub struct Embedder<T = f32> {
    pub config: EmbedderConfig,
    pub net: Sequential<T>,
    pub rf: usize,
}

#[derive(Clone, Debug)]
pub struct Detector<T = f32> {
    pub config: DetectorConfig,
    pub net: Sequential<T>,
    pub rf: usize,
}

/// Seeded initialization; equal seeds give bit-identical weights.
pub fn build_embedder<T: Scalar>(config: &EmbedderConfig, seed: u64) -> Result<Embedder<T>> {
    config.validate()?;
    let rf = config.receptive_field()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slope = config.leaky_slope;
    let mut layers = Vec::new();
    let mut channels = 4;
    for (i, u) in config.encoder.iter().enumerate() {
        let name = format!("enc{}", i + 1);
        layers.push(Layer::Conv(Conv2d::new(
            &format!("{name}.conv"),
            channels,
            u.depth,
            u.kernel,
            u.stride,
            u.padding,
            &mut rng,
        )));
        layers.push(Layer::BatchNorm(BatchNorm2d::new(&format!("{name}.bn"), u.depth)));
        layers.push(Layer::act(Activation::LeakyRelu(slope)));
        channels = u.depth;
    }
    let r = config.upscale_factor;
    let pad = config.kernel / 2;
    for (i, &d) in config.decoder_depths.iter().enumerate() {
        let name = format!("dec{}", i + 1);
        layers.push(Layer::Conv(Conv2d::new(
            &format!("{name}.conv"),
            channels,
            d * r * r,
            config.kernel,
            1,
            pad,
            &mut rng,
        )));
        layers.push(Layer::shuffle(r));
        layers.push(Layer::act(Activation::LeakyRelu(slope)));
        layers.push(Layer::BatchNorm(BatchNorm2d::new(&format!("{name}.bn"), d)));
        channels = d;
    }
    layers.push(Layer::Conv(Conv2d::new("out.conv", channels, 3, config.kernel, 1, pad, &mut rng)));
    layers.push(Layer::act(Activation::Tanh));
    let net = Sequential::new(layers);
    let (h, w) = config.input;
    let out = net.output_shape(Shape4::new(1, 4, h, w))?;
    if (out.c, out.h, out.w) != (3, h, w) {
        return Err(Error::Config(format!(
            "embedder maps {w}x{h} to {}x{}x{}",
            out.w, out.h, out.c
        )));
    }
    Ok(Embedder { config: config.clone(), net, rf })
}

pub fn build_detector<T: Scalar>(config: &DetectorConfig, seed: u64) -> Result<Detector<T>> {
    config.validate()?;
    let rf = config.receptive_field()?;
    let (fh, fw) = config.feature_extent()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut channels = 3;
    for (i, s) in config.stages.iter().enumerate() {
        let (k, st, p) = s.conv;
        layers.push(Layer::Conv(Conv2d::new(
            &format!("det{}.conv", i + 1),
            channels,
            s.depth,
            k,
            st,
            p,
            &mut rng,
        )));
        layers.push(Layer::act(Activation::Relu));
        layers.push(Layer::MaxPool(MaxPool2d::new(s.pool.0, s.pool.1)));
        channels = s.depth;
    }
    layers.push(Layer::Linear(Linear::new("fc", channels * fh * fw, config.classes, &mut rng)));
    let net = Sequential::new(layers);
    let (h, w) = config.input;
    net.output_shape(Shape4::new(1, 3, h, w))?;
    Ok(Detector { config: config.clone(), net, rf })
}

impl<T: Scalar> Embedder<T> {
    pub fn layer_chain(&self) -> Vec<LayerSpec> {
        self.config.layer_chain()
    }

    /// `(N, 4, H, W)` → `(N, 3, H, W)`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.c != 4 || (s.h, s.w) != self.config.input {
            return Err(Error::Shape(format!(
                "embedder expects (N, 4, {}, {}), got {s:?}",
                self.config.input.0, self.config.input.1
            )));
        }
        Ok(self.net.forward(x, mode)?)
    }

    /// Inference on a batch of overlays; outputs are the watermarked RGB images.
    pub fn embed(&mut self, overlays: &[WatermarkOverlay]) -> Result<Vec<ImageTensor>> {
        if overlays.is_empty() {
            return Ok(Vec::new());
        }
        let rgbw: Vec<ImageTensor> = overlays.iter().map(WatermarkOverlay::to_rgbw).collect();
        let refs: Vec<&ImageTensor> = rgbw.iter().collect();
        let x = ImageTensor::batch_to_chw::<T>(&refs)?;
        let y = self.forward(&x, Mode::Eval)?;
        self.net.clear_cache();
        Ok(ImageTensor::batch_from_chw(&y))
    }
}

impl<T: Scalar> Detector<T> {
    pub fn layer_chain(&self) -> Vec<LayerSpec> {
        self.config.layer_chain()
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    /// `(N, 3, H, W)` → logits `(N, M, 1, 1)`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.c != 3 || (s.h, s.w) != self.config.input {
            return Err(Error::Shape(format!(
                "detector expects (N, 3, {}, {}), got {s:?}",
                self.config.input.0, self.config.input.1
            )));
        }
        Ok(self.net.forward(x, mode)?)
    }

    /// Row-wise class probabilities.
    pub fn detect(&mut self, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let x = ImageTensor::batch_to_chw::<T>(images)?;
        let logits = self.forward(&x, Mode::Eval)?;
        self.net.clear_cache();
        Ok(softmax_rows(&logits))
    }

    pub fn predict(&mut self, images: &[&ImageTensor]) -> Result<Vec<usize>> {
        Ok(self.detect(images)?.iter().map(|p| argmax(p)).collect())
    }
}

/// Max-shifted softmax of each item's flattened logits.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..logits.shape().n)
        .map(|n| {
            let row: Vec<f64> = logits.item(n).iter().map(|v| v.as_f64()).collect();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        })
        .collect()
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}
