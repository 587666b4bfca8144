//! Losses, the joint training step and the pre-training / fine-tuning loops.

use std::ops::ControlFlow;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfmark_nn::{Adam, AdamConfig, Mode, Scalar, Shape4, Tensor};
use serde::{Deserialize, Serialize};

use crate::distortions::{
    apply_traced, evaluation_config, sample_distortion, DistortionConfig, DistortionContext, DistortionKind,
    DistortionSchedule,
};
use crate::evaluation::{evaluate, mean_accuracy};
use crate::imaging::{ImageTensor, MetricReport};
use crate::nets::{watermark_window, Detector, Embedder};
use crate::watermarks::{tile, WatermarkSet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    /// Held-out evaluations without improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma_imp: f64,
    pub gamma_det: f64,
    pub epochs: usize,
    pub phase: Phase,
    pub seed: u64,
    /// Attack pool; only read in the fine-tuning phase.
    pub distortions: DistortionSchedule,
    pub early_stopping: Option<EarlyStopping>,
    /// Epochs between held-out evaluations; 0 evaluates only at the end.
    pub eval_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 6,
            learning_rate: 1e-4,
            gamma_imp: 0.95,
            gamma_det: 0.05,
            epochs: 400,
            phase: Phase::Pretrain,
            seed: 0,
            distortions: DistortionSchedule::default(),
            early_stopping: None,
            eval_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        for (name, g) in [("gamma_imp", self.gamma_imp), ("gamma_det", self.gamma_det)] {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("{name} = {g} must be a non-negative number")));
            }
        }
        if self.phase == Phase::Finetune {
            self.distortions.validate_for_finetune()?;
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Stateless 64-bit mix of a base seed and a counter.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x6a09_e667_f3bc_c909);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mean squared error over all elements.
pub fn imperceptibility_loss(orig: &[ImageTensor], aug: &[ImageTensor]) -> Result<f64> {
    if orig.len() != aug.len() || orig.is_empty() {
        return Err(Error::Shape(format!("{} originals vs {} augmented", orig.len(), aug.len())));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (o, a) in orig.iter().zip(aug) {
        o.ensure_same_dims(a, "imperceptibility loss")?;
        sum += o
            .data()
            .iter()
            .zip(a.data())
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum::<f64>();
        count += o.data().len();
    }
    Ok(sum / count as f64)
}

/// MSE and its gradient with respect to `output`.
pub fn mse_with_grad<T: Scalar>(output: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if output.shape() != target.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", output.shape(), target.shape())));
    }
    let n = output.data().len() as f64;
    let mut sum = 0.0f64;
    let scale = T::from_f64_lossy(2.0 / n);
    let grad: Vec<T> = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(&y, &t)| {
            let d = y - t;
            sum += d.as_f64() * d.as_f64();
            d * scale
        })
        .collect();
    Ok((sum / n, Tensor::from_vec(output.shape(), grad)?))
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(l) => Err(Error::InvalidArgument(format!("label {l} outside 0..{classes}"))),
        None => Ok(()),
    }
}

/// Cross-entropy `-mean log p[label]` from probability rows.
pub fn detection_loss(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::Shape(format!("{} rows vs {} labels", probs.len(), labels.len())));
    }
    check_labels(labels, probs[0].len())?;
    Ok(-probs.iter().zip(labels).map(|(p, &l)| p[l].ln()).sum::<f64>() / labels.len() as f64)
}

/// Cross-entropy from logits via log-sum-exp, with `d loss / d logits`.
pub fn detection_loss_from_logits<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let s = logits.shape();
    if s.n != labels.len() || s.n == 0 {
        return Err(Error::Shape(format!("{} rows vs {} labels", s.n, labels.len())));
    }
    let m = s.item_len();
    check_labels(labels, m)?;
    let n = s.n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(s.len());
    for (i, &label) in labels.iter().enumerate() {
        let row: Vec<f64> = logits.item(i).iter().map(|v| v.as_f64()).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        for (c, v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            let onehot = if c == label { 1.0 } else { 0.0 };
            grad.push(T::from_f64_lossy((p - onehot) / n));
        }
    }
    Ok((loss / n, Tensor::from_vec(s, grad)?))
}

/// `γ1·L_imp + γ2·L_det`.
pub fn embedder_loss(l_imp: f64, l_det: f64, config: &TrainingConfig) -> Result<f64> {
    if !l_imp.is_finite() || !l_det.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite losses {l_imp}, {l_det}")));
    }
    Ok(config.gamma_imp * l_imp + config.gamma_det * l_det)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub epoch: usize,
    pub phase: Phase,
    pub l_imp: f64,
    pub l_det: f64,
    pub l_e: f64,
    pub accuracy: f64,
}

pub struct TrainingState {
    pub embedder: Embedder<f32>,
    pub detector: Detector<f32>,
    pub embedder_opt: Adam<f32>,
    pub detector_opt: Adam<f32>,
    pub phase: Phase,
    pub epoch: usize,
    pub step: u64,
    pub curves: Vec<CurvePoint>,
}

impl TrainingState {
    pub fn new(embedder: Embedder<f32>, detector: Detector<f32>, adam: AdamConfig) -> Self {
        Self {
            embedder,
            detector,
            embedder_opt: Adam::new(adam),
            detector_opt: Adam::new(adam),
            phase: Phase::Pretrain,
            epoch: 0,
            step: 0,
            curves: Vec::new(),
        }
    }

    /// Switches phase with fresh optimizer moments.
    pub fn begin_phase(&mut self, phase: Phase, adam: AdamConfig) {
        self.phase = phase;
        self.embedder_opt = Adam::new(adam);
        self.detector_opt = Adam::new(adam);
    }

    pub fn frame_dims(&self) -> (usize, usize) {
        self.embedder.config.input
    }
}

/// Tiled watermark planes for one frame size, indexed by watermark id.
pub struct WatermarkPlanes {
    pub planes: Vec<ImageTensor>,
}

impl WatermarkPlanes {
    pub fn new(set: &WatermarkSet, frame: (usize, usize)) -> Result<Self> {
        Ok(Self {
            planes: set.watermarks.iter().map(|wm| tile(wm, frame)).collect::<Result<_>>()?,
        })
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }
}

/// NCHW batch of `[rgb, watermark plane]` inputs.
pub fn rgbw_batch<T: Scalar>(pairs: &[(&ImageTensor, &ImageTensor)]) -> Result<Tensor<T>> {
    let (first, _) = pairs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let plane = h * w;
    let mut t = Tensor::zeros(Shape4::new(pairs.len(), 4, h, w));
    for (n, (rgb, wm)) in pairs.iter().enumerate() {
        if rgb.dims() != (h, w, 3) || wm.dims() != (h, w, 1) {
            return Err(Error::Shape(format!(
                "overlay item {n}: rgb {:?}, watermark {:?}, expected ({h}, {w})",
                rgb.dims(),
                wm.dims()
            )));
        }
        let item = t.item_mut(n);
        for (p, px) in rgb.data().chunks(3).enumerate() {
            for c in 0..3 {
                item[c * plane + p] = T::from_f64_lossy(px[c] as f64);
            }
        }
        for (p, &v) in wm.data().iter().enumerate() {
            item[3 * plane + p] = T::from_f64_lossy(v as f64);
        }
    }
    Ok(t)
}

/// Weights of the two losses in the gradients handed to each network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub embedder_imp: f64,
    pub embedder_det: f64,
    pub detector_det: f64,
}

impl LossWeights {
    pub fn training(config: &TrainingConfig) -> Self {
        Self {
            embedder_imp: config.gamma_imp,
            embedder_det: config.gamma_det,
            detector_det: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub l_imp: f64,
    pub l_det: f64,
    pub accuracy: f64,
    pub labels: Vec<usize>,
    pub kinds: Vec<DistortionKind>,
}

struct ItemPlan {
    label: usize,
    distortion: DistortionConfig,
    partner: Option<usize>,
}

/// Draws labels, distortions and collusion partners for one batch.
fn plan_batch(
    count: usize,
    classes: usize,
    phase: Phase,
    schedule: &DistortionSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ItemPlan>> {
    (0..count)
        .map(|_| {
            let label = rng.random_range(0..classes);
            let distortion = match phase {
                Phase::Pretrain => DistortionConfig::Identity,
                Phase::Finetune => sample_distortion(rng.random(), schedule)?,
            };
            let partner = distortion.partner_for(label, classes)?;
            Ok(ItemPlan {
                label,
                distortion,
                partner,
            })
        })
        .collect()
}

/// Forward and backward through embedder, attack and detector. Leaves the
/// gradients in both networks' parameters without applying an update.
pub fn accumulate_gradients(
    state: &mut TrainingState,
    frames: &[&ImageTensor],
    planes: &WatermarkPlanes,
    config: &TrainingConfig,
    weights: LossWeights,
) -> Result<StepStats> {
    if frames.is_empty() {
        return Err(Error::Dataset("empty batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, state.step));
    let plan = plan_batch(frames.len(), planes.len(), state.phase, &config.distortions, &mut rng)?;

    // Primary items first, then one extra embedding per collusion partner.
    let mut pairs: Vec<(&ImageTensor, &ImageTensor)> =
        plan.iter().zip(frames).map(|(p, f)| (*f, &planes.planes[p.label])).collect();
    let mut partner_slot = vec![None; plan.len()];
    for (i, p) in plan.iter().enumerate() {
        if let Some(pid) = p.partner {
            partner_slot[i] = Some(pairs.len());
            pairs.push((frames[i], &planes.planes[pid]));
        }
    }
    let x = rgbw_batch::<f32>(&pairs)?;
    let originals: Vec<&ImageTensor> = pairs.iter().map(|(f, _)| *f).collect();
    let target = ImageTensor::batch_to_chw::<f32>(&originals)?;

    state.embedder.net.zero_grad();
    state.detector.net.zero_grad();
    let y = state.embedder.forward(&x, Mode::Train)?;
    let (l_imp, g_imp) = mse_with_grad(&y, &target)?;

    let outputs = ImageTensor::batch_from_chw(&y);
    let mut traces = Vec::with_capacity(plan.len());
    let mut distorted = Vec::with_capacity(plan.len());
    for (i, p) in plan.iter().enumerate() {
        let mut ctx = DistortionContext::new(&outputs[i]).with_original(frames[i]);
        if let Some(slot) = partner_slot[i] {
            ctx = ctx.with_partner(&outputs[slot]);
        }
        let d = apply_traced(&p.distortion, &ctx)?;
        distorted.push(d.image);
        traces.push(d.trace);
    }
    let refs: Vec<&ImageTensor> = distorted.iter().collect();
    let d_in = ImageTensor::batch_to_chw::<f32>(&refs)?;
    let logits = state.detector.forward(&d_in, Mode::Train)?;
    let labels: Vec<usize> = plan.iter().map(|p| p.label).collect();
    let (l_det, g_logits) = detection_loss_from_logits(&logits, &labels)?;
    if !l_imp.is_finite() || !l_det.is_finite() {
        state.embedder.net.clear_cache();
        state.detector.net.clear_cache();
        return Err(Error::NonFiniteLoss {
            step: state.step,
            l_imp,
            l_det,
        });
    }
    let hits = (0..labels.len())
        .filter(|&i| argmax_row(logits.item(i)) == labels[i])
        .count();

    let g_d = state
        .detector
        .net
        .backward(&g_logits, true)?
        .expect("input gradient requested");
    if weights.detector_det != 1.0 {
        for p in state.detector.net.params_mut() {
            p.grad.iter_mut().for_each(|g| *g *= weights.detector_det as f32);
        }
    }

    let mut g_y = g_imp;
    g_y.scale(weights.embedder_imp as f32);
    let det_w = weights.embedder_det as f32;
    let plane = y.shape().item_len();
    for (i, trace) in traces.iter().enumerate() {
        let back = trace.backward(&ImageTensor::from_chw(&g_d, i));
        add_image_grad(&mut g_y.data_mut()[i * plane..(i + 1) * plane], &back.augmented, det_w);
        if let (Some(slot), Some(pg)) = (partner_slot[i], back.partner.as_ref()) {
            add_image_grad(&mut g_y.data_mut()[slot * plane..(slot + 1) * plane], pg, det_w);
        }
    }
    state.embedder.net.backward(&g_y, false)?;

    Ok(StepStats {
        l_imp,
        l_det,
        accuracy: hits as f64 / labels.len() as f64,
        labels,
        kinds: plan.iter().map(|p| p.distortion.kind()).collect(),
    })
}

fn add_image_grad(dst: &mut [f32], g: &ImageTensor, scale: f32) {
    let (h, w, c) = g.dims();
    let plane = h * w;
    for (p, px) in g.data().chunks(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            dst[ch * plane + p] += scale * v;
        }
    }
}

fn argmax_row<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// One optimizer update of both networks; appends to the curves.
pub fn train_step(
    state: &mut TrainingState,
    frames: &[&ImageTensor],
    planes: &WatermarkPlanes,
    config: &TrainingConfig,
) -> Result<StepStats> {
    let stats = accumulate_gradients(state, frames, planes, config, LossWeights::training(config))?;
    state.detector_opt.step(&mut state.detector.net.params_mut());
    state.embedder_opt.step(&mut state.embedder.net.params_mut());
    state.curves.push(CurvePoint {
        step: state.step,
        epoch: state.epoch,
        phase: state.phase,
        l_imp: stats.l_imp,
        l_det: stats.l_det,
        l_e: embedder_loss(stats.l_imp, stats.l_det, config)?,
        accuracy: stats.accuracy,
    });
    state.step += 1;
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    pub l_imp: f64,
    pub l_det: f64,
    pub accuracy: f64,
    pub heldout: Option<MetricReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: Phase,
    pub epochs_run: usize,
    pub steps: u64,
    pub stopped_early: bool,
    /// The epoch hook asked to stop.
    #[serde(default)]
    pub stopped_by_hook: bool,
    pub best_epoch: Option<usize>,
    pub heldout: Option<MetricReport>,
}

/// Attacks evaluated on held-out frames for a phase: identity alone in
/// pre-training, every enabled kind at evaluation strength in fine-tuning.
pub fn heldout_suite(config: &TrainingConfig) -> Vec<DistortionConfig> {
    match config.phase {
        Phase::Pretrain => vec![DistortionConfig::Identity],
        Phase::Finetune => config
            .distortions
            .kinds
            .iter()
            .map(|&k| evaluation_config(k, derive_seed(config.seed, 0xe7a1)))
            .collect(),
    }
}

/// Called after every epoch; `Break` ends the phase after that epoch.
pub type EpochHook<'a> = dyn FnMut(&TrainingState, &EpochReport) -> Result<ControlFlow<()>> + 'a;

fn run_phase(
    state: &mut TrainingState,
    train: &[ImageTensor],
    heldout: &[ImageTensor],
    set: &WatermarkSet,
    config: &TrainingConfig,
    hook: &mut EpochHook<'_>,
) -> Result<PhaseReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("no training frames".into()));
    }
    if set.len() != state.detector.classes() {
        return Err(Error::Config(format!(
            "detector has {} classes but the watermark set has {}",
            state.detector.classes(),
            set.len()
        )));
    }
    let window = watermark_window(&state.embedder.config, &state.detector.config)?;
    if !window.contains_dims(set.size.hw()) {
        log::warn!(
            "watermark size {} lies outside the receptive-field window [{}, {}]",
            set.size,
            window.lower,
            window.upper
        );
    }
    let planes = WatermarkPlanes::new(set, state.frame_dims())?;
    state.begin_phase(config.phase, config.adam());
    let suite = heldout_suite(config);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, Embedder<f32>, Detector<f32>)> = None;
    let mut stale = 0usize;
    let mut stopped_early = false;
    let mut stopped_by_hook = false;
    let mut epochs_run = 0;
    let mut last_heldout = None;
    for epoch in 0..config.epochs {
        state.epoch = epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed ^ 0x005e_ed0f_e90c, epoch as u64));
        order.shuffle(&mut rng);
        let (mut li, mut ld, mut acc, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let frames: Vec<&ImageTensor> = chunk.iter().map(|&i| &train[i]).collect();
            let s = train_step(state, &frames, &planes, config)?;
            li += s.l_imp;
            ld += s.l_det;
            acc += s.accuracy;
            steps += 1;
        }
        epochs_run = epoch + 1;
        let due = config.eval_every > 0 && epochs_run % config.eval_every == 0;
        let heldout_report = if due && !heldout.is_empty() {
            Some(evaluate(
                &mut state.embedder,
                &mut state.detector,
                heldout,
                set,
                &suite,
                derive_seed(config.seed, 0x4e1d),
            )?)
        } else {
            None
        };
        let report = EpochReport {
            epoch,
            steps,
            l_imp: li / steps as f64,
            l_det: ld / steps as f64,
            accuracy: acc / steps as f64,
            heldout: heldout_report.clone(),
        };
        log::info!(
            "{} epoch {epoch}: L_imp {:.5} L_det {:.4} acc {:.3}{}",
            config.phase.name(),
            report.l_imp,
            report.l_det,
            report.accuracy,
            heldout_report
                .as_ref()
                .map(|m| format!(" heldout {:.3}", mean_accuracy(m)))
                .unwrap_or_default()
        );
        let flow = hook(state, &report)?;
        if let (Some(es), Some(m)) = (config.early_stopping, heldout_report.as_ref()) {
            let score = mean_accuracy(m);
            let improved = best.as_ref().is_none_or(|(b, ..)| score > b + es.min_delta);
            if improved {
                best = Some((score, epoch, state.embedder.clone(), state.detector.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= es.patience {
                    stopped_early = true;
                    last_heldout = heldout_report;
                    break;
                }
            }
        }
        last_heldout = heldout_report.or(last_heldout);
        if flow.is_break() {
            stopped_by_hook = true;
            break;
        }
    }
    let mut best_epoch = None;
    if let Some((score, epoch, emb, det)) = best {
        let current = last_heldout.as_ref().map(mean_accuracy).unwrap_or(f64::NEG_INFINITY);
        if score > current {
            state.embedder = emb;
            state.detector = det;
        }
        best_epoch = Some(epoch);
    }
    state.embedder.net.clear_cache();
    state.detector.net.clear_cache();
    let heldout_final = if heldout.is_empty() {
        None
    } else {
        Some(evaluate(
            &mut state.embedder,
            &mut state.detector,
            heldout,
            set,
            &suite,
            derive_seed(config.seed, 0x4e1d),
        )?)
    };
    Ok(PhaseReport {
        phase: config.phase,
        epochs_run,
        steps: state.step,
        stopped_early,
        stopped_by_hook,
        best_epoch,
        heldout: heldout_final,
    })
}

/// Phase one: embedder and detector trained jointly on clean images.
pub fn pretrain(
    state: &mut TrainingState,
    train: &[ImageTensor],
    heldout: &[ImageTensor],
    set: &WatermarkSet,
    config: &TrainingConfig,
    hook: &mut EpochHook<'_>,
) -> Result<PhaseReport> {
    if config.phase != Phase::Pretrain {
        return Err(Error::Config("pretrain called with a fine-tuning config".into()));
    }
    run_phase(state, train, heldout, set, config, hook)
}

/// Phase two: the same loop with a sampled attack between embedder and detector.
pub fn finetune(
    state: &mut TrainingState,
    train: &[ImageTensor],
    heldout: &[ImageTensor],
    set: &WatermarkSet,
    config: &TrainingConfig,
    hook: &mut EpochHook<'_>,
) -> Result<PhaseReport> {
    if config.phase != Phase::Finetune {
        return Err(Error::Config("finetune called with a pre-training config".into()));
    }
    run_phase(state, train, heldout, set, config, hook)
}

pub fn curves_csv(curves: &[CurvePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in curves {
        w.serialize(c)?;
    }
    if curves.is_empty() {
        w.write_record(["step", "epoch", "phase", "l_imp", "l_det", "l_e", "accuracy"])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_curves_csv(path: &Path, curves: &[CurvePoint]) -> Result<()> {
    std::fs::write(path, curves_csv(curves)?).map_err(|e| Error::io(path, e))
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<CurvePoint>, csv::Error> = r.deserialize().collect();
    Ok(rows?)
}
