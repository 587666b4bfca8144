//! Held-out evaluation: embed every frame, attack it, detect.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfmark_nn::Mode;

use crate::distortions::{apply, DistortionConfig, DistortionContext, DistortionKind};
use crate::imaging::{detection_accuracy, psnr, ssim, ImageTensor, MetricReport, PSNR_AGGREGATION};
use crate::nets::{Detector, Embedder};
use crate::training::{derive_seed, rgbw_batch, WatermarkPlanes};
use crate::watermarks::WatermarkSet;
use crate::{Error, Result};

/// Frames per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 16;

/// Watermark id assigned to each held-out frame.
pub fn heldout_labels(frames: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames).map(|_| rng.random_range(0..classes)).collect()
}

/// Embeds `frames[i]` with watermark `labels[i]`, in eval mode.
pub fn embed_frames(
    embedder: &mut Embedder<f32>,
    frames: &[&ImageTensor],
    labels: &[usize],
    planes: &WatermarkPlanes,
) -> Result<Vec<ImageTensor>> {
    let mut out = Vec::with_capacity(frames.len());
    for (fchunk, lchunk) in frames.chunks(EVAL_CHUNK).zip(labels.chunks(EVAL_CHUNK)) {
        let pairs: Vec<(&ImageTensor, &ImageTensor)> =
            fchunk.iter().zip(lchunk).map(|(f, &l)| (*f, &planes.planes[l])).collect();
        let x = rgbw_batch::<f32>(&pairs)?;
        let y = embedder.forward(&x, Mode::Eval)?;
        out.extend(ImageTensor::batch_from_chw(&y));
    }
    embedder.net.clear_cache();
    Ok(out)
}

pub fn predict_frames(detector: &mut Detector<f32>, images: &[ImageTensor]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_CHUNK) {
        let refs: Vec<&ImageTensor> = chunk.iter().collect();
        out.extend(detector.predict(&refs)?);
    }
    Ok(out)
}

/// Mean over the per-attack accuracies, or the clean accuracy when none were run.
pub fn mean_accuracy(report: &MetricReport) -> f64 {
    if report.per_distortion.is_empty() {
        report.detection_accuracy
    } else {
        report.per_distortion.values().sum::<f64>() / report.per_distortion.len() as f64
    }
}

/// Accuracy under each attack in `suite` plus clean PSNR/SSIM of the
/// watermarked frames against the originals. Stochastic attacks are
/// reseeded per frame from `seed`.
pub fn evaluate(
    embedder: &mut Embedder<f32>,
    detector: &mut Detector<f32>,
    frames: &[ImageTensor],
    set: &WatermarkSet,
    suite: &[DistortionConfig],
    seed: u64,
) -> Result<MetricReport> {
    if frames.is_empty() {
        return Err(Error::Dataset("no held-out frames to evaluate".into()));
    }
    if set.len() != detector.classes() {
        return Err(Error::Config(format!(
            "detector has {} classes but the watermark set has {}",
            detector.classes(),
            set.len()
        )));
    }
    let planes = WatermarkPlanes::new(set, embedder.config.input)?;
    let labels = heldout_labels(frames.len(), set.len(), seed);
    let refs: Vec<&ImageTensor> = frames.iter().collect();
    let augmented = embed_frames(embedder, &refs, &labels, &planes)?;

    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for (o, a) in frames.iter().zip(&augmented) {
        psnr_sum += psnr(o, a)?;
        ssim_sum += ssim(o, a)?;
    }
    let n = frames.len() as f64;
    let psnr_mean = psnr_sum / n;
    let clean = detection_accuracy(&predict_frames(detector, &augmented)?, &labels)?;

    let mut partner_cache: HashMap<(usize, usize), ImageTensor> = HashMap::new();
    let mut per_distortion = BTreeMap::new();
    for (k, config) in suite.iter().enumerate() {
        let configs: Vec<DistortionConfig> = (0..frames.len())
            .map(|i| config.reseeded(derive_seed(seed ^ (k as u64 + 1), i as u64)))
            .collect();
        if config.kind().needs_partner() {
            let mut wanted = Vec::new();
            for (i, c) in configs.iter().enumerate() {
                let p = c.partner_for(labels[i], set.len())?.expect("collusion has a partner");
                if !partner_cache.contains_key(&(i, p)) && !wanted.contains(&(i, p)) {
                    wanted.push((i, p));
                }
            }
            let fr: Vec<&ImageTensor> = wanted.iter().map(|&(i, _)| &frames[i]).collect();
            let lb: Vec<usize> = wanted.iter().map(|&(_, p)| p).collect();
            for (key, img) in wanted.into_iter().zip(embed_frames(embedder, &fr, &lb, &planes)?) {
                partner_cache.insert(key, img);
            }
        }
        let mut attacked = Vec::with_capacity(frames.len());
        for (i, c) in configs.iter().enumerate() {
            let mut ctx = DistortionContext::new(&augmented[i]).with_original(&frames[i]);
            if let Some(p) = c.partner_for(labels[i], set.len())? {
                ctx = ctx.with_partner(&partner_cache[&(i, p)]);
            }
            attacked.push(apply(c, &ctx)?);
        }
        let acc = if config.kind() == DistortionKind::Identity {
            clean
        } else {
            detection_accuracy(&predict_frames(detector, &attacked)?, &labels)?
        };
        per_distortion.insert(config.kind().name().to_string(), acc);
    }
    Ok(MetricReport {
        psnr_db: psnr_mean.is_finite().then_some(psnr_mean),
        ssim: ssim_sum / n,
        detection_accuracy: clean,
        per_distortion,
        psnr_aggregation: PSNR_AGGREGATION.to_string(),
    })
}
