//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `cargo test -p rfmark-core --test acceptance -- 1 2 7` runs a subset.
//! Criteria 4 to 6 share one desk-scale training run and take hours on CPU.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfmark_core::dataio::{
    ingest, load_checkpoint, save_state, split, synthetic_frame, CheckpointInfo, FrameSource, Heldout,
};
use rfmark_core::distortions::{
    apply, apply_cropout, apply_dropout, collude, quantization_level, quantize_value, sample_distortion,
    CollusionMode, CollusionPattern, DistortionConfig, DistortionContext, DistortionKind, DistortionSchedule,
};
use rfmark_core::evaluation::embed_frames;
use rfmark_core::experiments::{kind_mean, run_evaluate, run_sweep, SweepConfig};
use rfmark_core::imaging::{psnr, ssim, ImageTensor};
use rfmark_core::nets::{build_detector, build_embedder, watermark_window, DetectorConfig, EmbedderConfig};
use rfmark_core::rfcalc::{chain_rf, reference_detector_chain, reference_embedder_chain, valid_watermark_range};
use rfmark_core::training::{
    derive_seed, detection_loss, detection_loss_from_logits, finetune, imperceptibility_loss, mse_with_grad, pretrain,
    EarlyStopping, Phase, PhaseReport, TrainingConfig, TrainingState, WatermarkPlanes,
};
use rfmark_core::watermarks::{generate_letter_set, tile, WatermarkSet, WatermarkSize};
use rfmark_core::{Error, MetricReport};
use rfmark_nn::{AdamConfig, Mode, Shape4, Tensor};

/// Failed sub-checks and informational notes for one criterion.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageTensor {
    let data = (0..h * w * c).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
    ImageTensor::new(h, w, c, data).unwrap()
}

// ---------------------------------------------------------------- criterion 1

struct GoldenRow {
    name: &'static str,
    n: (usize, usize),
    j: usize,
    r: usize,
}

const fn row(name: &'static str, w: usize, h: usize, j: usize, r: usize) -> GoldenRow {
    GoldenRow { name, n: (w, h), j, r }
}

const EMBEDDER_TABLE: [GoldenRow; 7] = [
    row("Input", 1280, 720, 1, 1),
    row("Conv", 320, 180, 4, 4),
    row("BatchNorm", 320, 180, 4, 4),
    row("LeakyReLU", 320, 180, 4, 4),
    row("Conv", 160, 90, 8, 16),
    row("BatchNorm", 160, 90, 8, 16),
    row("LeakyReLU", 160, 90, 8, 16),
];

const DETECTOR_TABLE: [GoldenRow; 7] = [
    row("Input", 1280, 720, 1, 1),
    row("Conv", 426, 240, 3, 5),
    row("ReLU", 426, 240, 3, 5),
    row("MaxPool2d", 141, 79, 9, 17),
    row("Conv", 47, 26, 27, 53),
    row("ReLU", 47, 26, 27, 53),
    row("MaxPool2d", 15, 8, 81, 161),
];

fn compare_table(c: &mut Checks, what: &str, rows: &[rfmark_core::rfcalc::RfRow], golden: &[GoldenRow]) {
    c.check(rows.len() >= golden.len(), format!("{what}: {} rows, expected {}", rows.len(), golden.len()));
    for (i, (got, want)) in rows.iter().zip(golden).enumerate() {
        let ok = got.n == want.n && got.j == want.j && got.r == want.r;
        c.check(
            ok,
            format!(
                "{what} row {i} ({}): got {:?} j={} r={}, expected {:?} j={} r={}",
                want.name, got.n, got.j, got.r, want.n, want.j, want.r
            ),
        );
    }
}

fn criterion_1(c: &mut Checks) {
    let emb = chain_rf(&reference_embedder_chain(), (1280, 720)).unwrap();
    let det = chain_rf(&reference_detector_chain(), (1280, 720)).unwrap();
    compare_table(c, "embedder", &emb.rows, &EMBEDDER_TABLE);
    compare_table(c, "detector", &det.rows, &DETECTOR_TABLE);
    c.check(emb.network_rf == 16, format!("embedder RF {}", emb.network_rf));
    c.check(det.network_rf == 161, format!("detector RF {}", det.network_rf));
    let window = valid_watermark_range(&emb, &det).unwrap();
    c.check(
        (window.lower, window.upper) == (16, 161),
        format!("window [{}, {}]", window.lower, window.upper),
    );
    // The configured full-scale networks describe the same chains.
    let full = watermark_window(&EmbedderConfig::full_scale(), &DetectorConfig::full_scale(10)).unwrap();
    c.check(
        (full.lower, full.upper) == (16, 161),
        format!("full-scale network window [{}, {}]", full.lower, full.upper),
    );
    c.note(format!("window [{}, {}]", window.lower, window.upper));
}

// ---------------------------------------------------------------- criterion 2

const INSTANCES: usize = 100;
const FLOAT_REL_TOL: f64 = 1e-9;
const SOFTMAX_REL_TOL: f64 = 1e-7;
const SSIM_TOL: f64 = 1e-6;

fn oracle_mse(a: &[ImageTensor], b: &[ImageTensor]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (h, w, ch) = x.dims();
        for yy in 0..h {
            for xx in 0..w {
                for cc in 0..ch {
                    let d = x.get(yy, xx, cc) as f64 - y.get(yy, xx, cc) as f64;
                    sum += d * d;
                    count += 1.0;
                }
            }
        }
    }
    sum / count
}

/// Softmax without the max shift; logits are kept small enough that exp is exact enough.
fn oracle_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &l) in logits.iter().zip(labels) {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[l].exp() / z).ln();
    }
    total / labels.len() as f64
}

fn byte_scale(v: f32) -> f64 {
    (v as f64 + 1.0) * 255.0 / 2.0
}

fn oracle_psnr(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let (h, w, ch) = a.dims();
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let d = byte_scale(a.get(y, x, c)) - byte_scale(b.get(y, x, c));
                sum += d * d;
            }
        }
    }
    let mse = sum / (h * w * ch) as f64;
    20.0 * 255.0f64.log10() - 10.0 * mse.log10()
}

/// Direct 2-D weighted window statistics at every valid position.
#[allow(clippy::needless_range_loop)]
fn oracle_ssim(a: &ImageTensor, b: &ImageTensor) -> f64 {
    const N: usize = 11;
    let sigma = 1.5f64;
    let mut weights = [[0.0f64; N]; N];
    let mut total = 0.0;
    for (dy, row) in weights.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (fy, fx) = (dy as f64 - 5.0, dx as f64 - 5.0);
            *v = (-(fy * fy + fx * fx) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let (h, w, ch) = a.dims();
    let mut per_channel = 0.0;
    for c in 0..ch {
        let mut sum = 0.0;
        let mut positions = 0.0;
        for y0 in 0..=h - N {
            for x0 in 0..=w - N {
                let (mut ma, mut mb) = (0.0, 0.0);
                for dy in 0..N {
                    for dx in 0..N {
                        let wgt = weights[dy][dx] / total;
                        ma += wgt * byte_scale(a.get(y0 + dy, x0 + dx, c));
                        mb += wgt * byte_scale(b.get(y0 + dy, x0 + dx, c));
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for dy in 0..N {
                    for dx in 0..N {
                        let wgt = weights[dy][dx] / total;
                        let pa = byte_scale(a.get(y0 + dy, x0 + dx, c)) - ma;
                        let pb = byte_scale(b.get(y0 + dy, x0 + dx, c)) - mb;
                        va += wgt * pa * pa;
                        vb += wgt * pb * pb;
                        cov += wgt * pa * pb;
                    }
                }
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                positions += 1.0;
            }
        }
        per_channel += sum / positions;
    }
    per_channel / ch as f64
}

/// Exhaustive nearest level, ties to the lower one.
fn oracle_quantize_index(v: f32, bits: u8) -> u32 {
    let levels = 1u32 << bits;
    let v = v.clamp(-1.0, 1.0);
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for i in 0..levels {
        let d = (v - quantization_level(i, levels)).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn criterion_2(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc2);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut track = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };

    for i in 0..INSTANCES {
        // L_imp on image batches and on the tensor path used in training.
        let n = rng.random_range(1..=3);
        let (h, w) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let a: Vec<ImageTensor> = (0..n).map(|_| random_image(&mut rng, h, w, 3)).collect();
        let b: Vec<ImageTensor> = (0..n).map(|_| random_image(&mut rng, h, w, 3)).collect();
        let e = rel_err(imperceptibility_loss(&a, &b).unwrap(), oracle_mse(&a, &b));
        track("l_imp", e);
        c.check(e <= FLOAT_REL_TOL, format!("L_imp instance {i}: rel err {e:.2e}"));
        let ta = ImageTensor::batch_to_chw::<f64>(&a.iter().collect::<Vec<_>>()).unwrap();
        let tb = ImageTensor::batch_to_chw::<f64>(&b.iter().collect::<Vec<_>>()).unwrap();
        let e = rel_err(mse_with_grad(&ta, &tb).unwrap().0, oracle_mse(&a, &b));
        track("l_imp_tensor", e);
        c.check(e <= FLOAT_REL_TOL, format!("L_imp tensor instance {i}: rel err {e:.2e}"));

        // L_det from logits and from probabilities.
        let rows = rng.random_range(1..=6);
        let classes = rng.random_range(2..=12);
        let logits: Vec<Vec<f64>> = (0..rows).map(|_| (0..classes).map(|_| rng.random_range(-8.0..8.0)).collect()).collect();
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        let want = oracle_cross_entropy(&logits, &labels);
        let flat: Vec<f64> = logits.iter().flatten().copied().collect();
        let t = Tensor::from_vec(Shape4::new(rows, classes, 1, 1), flat).unwrap();
        let e = rel_err(detection_loss_from_logits(&t, &labels).unwrap().0, want);
        track("l_det_logits", e);
        c.check(e <= SOFTMAX_REL_TOL, format!("L_det (logits) instance {i}: rel err {e:.2e}"));
        let probs: Vec<Vec<f64>> = logits
            .iter()
            .map(|r| {
                let z: f64 = r.iter().map(|v| v.exp()).sum();
                r.iter().map(|v| v.exp() / z).collect()
            })
            .collect();
        let e = rel_err(detection_loss(&probs, &labels).unwrap(), want);
        track("l_det_probs", e);
        c.check(e <= SOFTMAX_REL_TOL, format!("L_det (probabilities) instance {i}: rel err {e:.2e}"));

        // PSNR.
        let (h, w) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let x = random_image(&mut rng, h, w, 3);
        let mut y = x.clone();
        let amp = rng.random_range(0.001f32..0.5);
        for v in y.data_mut() {
            *v = (*v + rng.random_range(-amp..=amp)).clamp(-1.0, 1.0);
        }
        if x == y {
            c.check(psnr(&x, &y).unwrap() == f64::INFINITY, "PSNR of identical images is infinite");
        } else {
            let e = rel_err(psnr(&x, &y).unwrap(), oracle_psnr(&x, &y));
            track("psnr", e);
            c.check(e <= FLOAT_REL_TOL, format!("PSNR instance {i}: rel err {e:.2e}"));
        }

        // SSIM against the direct windowed reference.
        let (h, w) = (rng.random_range(11..=20), rng.random_range(11..=20));
        let ch = if i % 4 == 0 { 1 } else { 3 };
        let x = random_image(&mut rng, h, w, ch);
        let mut y = x.clone();
        let amp = rng.random_range(0.0f32..1.0);
        for v in y.data_mut() {
            *v = (*v + rng.random_range(-amp..=amp)).clamp(-1.0, 1.0);
        }
        let e = (ssim(&x, &y).unwrap() - oracle_ssim(&x, &y)).abs();
        track("ssim", e);
        c.check(e <= SSIM_TOL, format!("SSIM instance {i}: abs err {e:.2e}"));

        // Quantization: chosen level index is exact, including exact midpoints.
        let bits: u8 = rng.random_range(1..=8);
        let levels = 1u32 << bits;
        for k in 0..32 {
            let v = match k % 4 {
                0 => {
                    let lo = rng.random_range(0..levels - 1);
                    (quantization_level(lo, levels) + quantization_level(lo + 1, levels)) / 2.0
                }
                1 => rng.random_range(-1.3f32..1.3),
                2 => quantization_level(rng.random_range(0..levels), levels),
                _ => rng.random_range(-1.0f32..=1.0),
            };
            let got = quantize_value(v, bits);
            let want = quantization_level(oracle_quantize_index(v, bits), levels);
            c.check(got.to_bits() == want.to_bits(), format!("quantize({v}, {bits} bits) = {got}, oracle {want}"));
        }
        let j = rng.random_range(0..levels);
        let grid = -1.0 + 2.0 * j as f64 / (levels - 1) as f64;
        c.check(
            (quantization_level(j, levels) as f64 - grid).abs() <= 1e-6,
            format!("grid level {j}/{levels} off the uniform grid"),
        );

        // Collusion, both modes, exact.
        let (h, w) = (rng.random_range(1..=9), rng.random_range(1..=9));
        let a = random_image(&mut rng, h, w, 3);
        let b = random_image(&mut rng, h, w, 3);
        let avg = collude(&a, &b, CollusionMode::Average).unwrap();
        let cb = collude(&a, &b, CollusionMode::Alternate(CollusionPattern::Checkerboard)).unwrap();
        let rows_alt = collude(&a, &b, CollusionMode::Alternate(CollusionPattern::RowInterleave)).unwrap();
        let mut ok = true;
        for yy in 0..h {
            for xx in 0..w {
                for cc in 0..3 {
                    let (pa, pb) = (a.get(yy, xx, cc), b.get(yy, xx, cc));
                    ok &= avg.get(yy, xx, cc) == (pa + pb) / 2.0;
                    let cb_want = if (yy + xx) & 1 == 0 { pa } else { pb };
                    ok &= cb.get(yy, xx, cc) == cb_want;
                    let row_want = if yy & 1 == 0 { pa } else { pb };
                    ok &= rows_alt.get(yy, xx, cc) == row_want;
                }
            }
        }
        c.check(ok, format!("collusion instance {i} differs from the oracle"));

        // Tiling, exact.
        let size = WatermarkSize::square(rng.random_range(4..=8));
        let set = generate_letter_set(&['A', 'Q', 'Z'], size).unwrap();
        let wm = &set.watermarks[i % 3];
        let (fh, fw) = (rng.random_range(size.height..=40), rng.random_range(size.width..=40));
        let plane = tile(wm, (fh, fw)).unwrap();
        let mut ok = plane.dims() == (fh, fw, 1);
        for yy in 0..fh {
            for xx in 0..fw {
                let (mut ty, mut tx) = (yy, xx);
                while ty >= size.height {
                    ty -= size.height;
                }
                while tx >= size.width {
                    tx -= size.width;
                }
                ok &= plane.get(yy, xx, 0) == wm.bitmap[ty * size.width + tx];
            }
        }
        c.check(ok, format!("tiling instance {i} differs from the oracle"));
    }
    for (k, v) in worst {
        c.note(format!("{k} {v:.1e}"));
    }
}

// ---------------------------------------------------------------- criterion 3

const FD_STEP: f64 = 1e-5;
const LOSS_GRAD_TOL: f64 = 1e-4;
const NET_GRAD_TOL: f64 = 1e-3;
/// Gradients below this magnitude are compared absolutely against it. Central
/// differences of the toy embedder objective carry roughly 1e-9 of rounding
/// noise at this step, so exactly-zero gradients (a conv bias ahead of batch
/// norm) would otherwise fail on noise alone.
const GRAD_FLOOR: f64 = 1e-5;

fn grad_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape4, amp: f64) -> Tensor<f64> {
    let data = (0..shape.len()).map(|_| rng.random_range(-amp..amp)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn criterion_3(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc3);

    // L_imp with respect to the augmented image.
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let shape = Shape4::new(2, 3, 5, 4);
        let y = random_tensor(&mut rng, shape, 1.0);
        let t = random_tensor(&mut rng, shape, 1.0);
        let (_, grad) = mse_with_grad(&y, &t).unwrap();
        for i in 0..shape.len() {
            let mut p = y.clone();
            p.data_mut()[i] += FD_STEP;
            let mut m = y.clone();
            m.data_mut()[i] -= FD_STEP;
            let fd = (mse_with_grad(&p, &t).unwrap().0 - mse_with_grad(&m, &t).unwrap().0) / (2.0 * FD_STEP);
            worst = worst.max(grad_err(grad.data()[i], fd));
        }
    }
    c.check(worst <= LOSS_GRAD_TOL, format!("L_imp gradient rel err {worst:.2e}"));
    c.note(format!("L_imp {worst:.1e}"));

    // L_det with respect to the logits.
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let shape = Shape4::new(3, 10, 1, 1);
        let z = random_tensor(&mut rng, shape, 4.0);
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..10)).collect();
        let (_, grad) = detection_loss_from_logits(&z, &labels).unwrap();
        for i in 0..shape.len() {
            let mut p = z.clone();
            p.data_mut()[i] += FD_STEP;
            let mut m = z.clone();
            m.data_mut()[i] -= FD_STEP;
            let fd = (detection_loss_from_logits(&p, &labels).unwrap().0
                - detection_loss_from_logits(&m, &labels).unwrap().0)
                / (2.0 * FD_STEP);
            worst = worst.max(grad_err(grad.data()[i], fd));
        }
    }
    c.check(worst <= LOSS_GRAD_TOL, format!("L_det gradient rel err {worst:.2e}"));
    c.note(format!("L_det {worst:.1e}"));

    // Toy 16x16 embedder: d(sum r*y)/d(input) and d/d(parameters), batch-norm in training mode.
    let cfg = EmbedderConfig::desk().with_input(16, 16);
    let mut emb = build_embedder::<f64>(&cfg, 31).unwrap();
    let x_shape = Shape4::new(2, 4, 16, 16);
    let x = random_tensor(&mut rng, x_shape, 1.0);
    let r = random_tensor(&mut rng, Shape4::new(2, 3, 16, 16), 1.0);
    let objective = |emb: &mut rfmark_core::nets::Embedder<f64>, x: &Tensor<f64>| -> f64 {
        let y = emb.forward(x, Mode::Train).unwrap();
        emb.net.clear_cache();
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    emb.net.zero_grad();
    emb.forward(&x, Mode::Train).unwrap();
    let dx = emb.net.backward(&r, true).unwrap().expect("input gradient requested");
    emb.net.clear_cache();

    let mut worst_x = 0.0f64;
    for _ in 0..64 {
        let i = rng.random_range(0..x_shape.len());
        let mut p = x.clone();
        p.data_mut()[i] += FD_STEP;
        let mut m = x.clone();
        m.data_mut()[i] -= FD_STEP;
        let fd = (objective(&mut emb, &p) - objective(&mut emb, &m)) / (2.0 * FD_STEP);
        worst_x = worst_x.max(grad_err(dx.data()[i], fd));
    }
    c.check(worst_x <= NET_GRAD_TOL, format!("embedder input gradient rel err {worst_x:.2e}"));

    let analytic: Vec<(String, Vec<f64>)> = emb.net.params().iter().map(|p| (p.name.clone(), p.grad.clone())).collect();
    let mut worst_p = 0.0f64;
    let mut checked = 0;
    for (k, (name, grad)) in analytic.iter().enumerate() {
        for _ in 0..12 {
            let i = rng.random_range(0..grad.len());
            let nudge = |emb: &mut rfmark_core::nets::Embedder<f64>, d: f64| {
                emb.net.params_mut()[k].value[i] += d;
            };
            nudge(&mut emb, FD_STEP);
            let lp = objective(&mut emb, &x);
            nudge(&mut emb, -2.0 * FD_STEP);
            let lm = objective(&mut emb, &x);
            nudge(&mut emb, FD_STEP);
            let e = grad_err(grad[i], (lp - lm) / (2.0 * FD_STEP));
            c.check(e <= NET_GRAD_TOL, format!("embedder {name}[{i}] gradient rel err {e:.2e}"));
            worst_p = worst_p.max(e);
            checked += 1;
        }
    }
    c.note(format!("embedder input {worst_x:.1e}, {checked} parameters {worst_p:.1e}"));
}

// ---------------------------------------------------------------- criteria 4 to 6

const DESK_FRAMES: usize = 250;
const DESK_HELDOUT: usize = 50;
const DESK_RESOLUTION: (usize, usize) = (128, 128);
const DESK_WATERMARK: usize = 16;
const DATA_SEED: u64 = 1;
const SPLIT_SEED: u64 = 2;
const TRAIN_SEED: u64 = 7;
const EVAL_SEED: u64 = 11;
const PRETRAIN_MAX_EPOCHS: usize = 1000;
const PRETRAIN_EVAL_EVERY: usize = 5;
const CPU_BUDGET: Duration = Duration::from_secs(8 * 3600);
const CLEAN_ACCURACY_TARGET: f64 = 0.95;
const PSNR_TARGET_DB: f64 = 28.0;
/// Training stops once the periodic held-out check clears the targets by
/// this margin; the final measurement uses a different label draw.
const STOP_PSNR_MARGIN_DB: f64 = 0.25;
const STOP_ACCURACY: f64 = 0.98;
const FINETUNE_MAX_EPOCHS: usize = 150;
const FINETUNE_PATIENCE: usize = 15;
const SWEEP_SIZES: [usize; 4] = [4, 16, 32, 128];

struct DeskRun {
    train: Vec<ImageTensor>,
    heldout: Vec<ImageTensor>,
    set: WatermarkSet,
    embedder: EmbedderConfig,
    detector: DetectorConfig,
    pretrain_cfg: TrainingConfig,
    state: TrainingState,
    pretrain: PhaseReport,
    pretrain_time: Duration,
    metrics: MetricReport,
}

fn letters() -> Vec<char> {
    ('A'..='J').collect()
}

fn desk_networks() -> (EmbedderConfig, DetectorConfig) {
    let (h, w) = DESK_RESOLUTION;
    (EmbedderConfig::desk().with_input(h, w), DetectorConfig::desk(10).with_input(h, w))
}

fn desk_pretrain() -> DeskRun {
    let ds = ingest(&FrameSource::Synthetic, DESK_FRAMES, DESK_RESOLUTION, DATA_SEED).unwrap();
    let ds = split(ds, Heldout::Count(DESK_HELDOUT), SPLIT_SEED).unwrap();
    let train = ds.train_frames().unwrap();
    let heldout = ds.heldout_frames().unwrap();
    let set = generate_letter_set(&letters(), WatermarkSize::square(DESK_WATERMARK)).unwrap();
    let (embedder, detector) = desk_networks();
    let pretrain_cfg = TrainingConfig {
        epochs: PRETRAIN_MAX_EPOCHS,
        batch_size: 6,
        learning_rate: 1e-4,
        gamma_imp: 0.95,
        gamma_det: 0.05,
        phase: Phase::Pretrain,
        seed: TRAIN_SEED,
        eval_every: PRETRAIN_EVAL_EVERY,
        early_stopping: None,
        ..TrainingConfig::default()
    };
    // Same initial weights as the sweep gives every size.
    let emb = build_embedder(&embedder, derive_seed(TRAIN_SEED, 1)).unwrap();
    let det = build_detector(&detector, derive_seed(TRAIN_SEED, 2)).unwrap();
    let mut state = TrainingState::new(emb, det, pretrain_cfg.adam());
    let started = Instant::now();
    let pretrain = pretrain(&mut state, &train, &heldout, &set, &pretrain_cfg, &mut |_, r| {
        if let Some(m) = &r.heldout {
            println!(
                "  pretrain epoch {}: L_imp {:.5} L_det {:.4} held-out accuracy {:.3} PSNR {:.2} dB ({:.0} s)",
                r.epoch + 1,
                r.l_imp,
                r.l_det,
                m.detection_accuracy,
                m.psnr_db.unwrap_or(f64::INFINITY),
                started.elapsed().as_secs_f64()
            );
            let psnr_ok = m.psnr_db.is_none_or(|p| p >= PSNR_TARGET_DB + STOP_PSNR_MARGIN_DB);
            if m.detection_accuracy >= STOP_ACCURACY && psnr_ok {
                return Ok(ControlFlow::Break(()));
            }
        }
        Ok(if started.elapsed() >= CPU_BUDGET { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
    })
    .unwrap();
    let pretrain_time = started.elapsed();
    let metrics = run_evaluate(
        &mut state.embedder,
        &mut state.detector,
        &heldout,
        &set,
        &DistortionKind::ALL,
        EVAL_SEED,
    )
    .unwrap();
    DeskRun {
        train,
        heldout,
        set,
        embedder,
        detector,
        pretrain_cfg,
        state,
        pretrain,
        pretrain_time,
        metrics,
    }
}

fn accuracy(m: &MetricReport, kind: DistortionKind) -> f64 {
    m.per_distortion.get(kind.name()).copied().unwrap_or(f64::NAN)
}

fn criterion_4(c: &mut Checks, run: &DeskRun) {
    let window = watermark_window(&run.embedder, &run.detector).unwrap();
    c.check(run.train.len() >= 200, format!("{} training frames", run.train.len()));
    c.check(run.heldout.len() >= 50, format!("{} held-out frames", run.heldout.len()));
    c.check(run.set.len() == 10, format!("{} watermarks", run.set.len()));
    c.check(
        window.contains_dims(run.set.size.hw()),
        format!("watermark {} outside [{}, {}]", run.set.size, window.lower, window.upper),
    );
    let cfg = &run.pretrain_cfg;
    c.check(
        cfg.batch_size == 6 && cfg.learning_rate == 1e-4 && (cfg.gamma_imp, cfg.gamma_det) == (0.95, 0.05),
        "pinned hyperparameters",
    );
    let acc = run.metrics.detection_accuracy;
    let psnr_db = run.metrics.psnr_db.unwrap_or(f64::INFINITY);
    c.check(acc >= CLEAN_ACCURACY_TARGET, format!("held-out clean accuracy {acc:.3} < {CLEAN_ACCURACY_TARGET}"));
    c.check(psnr_db >= PSNR_TARGET_DB, format!("held-out PSNR {psnr_db:.2} dB < {PSNR_TARGET_DB}"));
    c.check(
        run.pretrain_time <= CPU_BUDGET,
        format!("training took {:.1} h", run.pretrain_time.as_secs_f64() / 3600.0),
    );
    c.note(format!(
        "window [{}, {}], {} epochs in {:.0} s, accuracy {acc:.3}, PSNR {psnr_db:.2} dB, SSIM {:.3}",
        window.lower,
        window.upper,
        run.pretrain.epochs_run,
        run.pretrain_time.as_secs_f64(),
        run.metrics.ssim
    ));
}

fn criterion_5(c: &mut Checks, run: &DeskRun) {
    let cfg = TrainingConfig {
        epochs: FINETUNE_MAX_EPOCHS,
        phase: Phase::Finetune,
        eval_every: 1,
        early_stopping: Some(EarlyStopping {
            patience: FINETUNE_PATIENCE,
            min_delta: 0.0,
        }),
        distortions: DistortionSchedule::default(),
        ..run.pretrain_cfg.clone()
    };
    let mut state = TrainingState::new(run.state.embedder.clone(), run.state.detector.clone(), cfg.adam());
    let started = Instant::now();
    let report = finetune(&mut state, &run.train, &run.heldout, &run.set, &cfg, &mut |_, r| {
        if let Some(m) = &r.heldout {
            let parts: Vec<String> = m.per_distortion.iter().map(|(k, v)| format!("{k} {v:.2}")).collect();
            println!(
                "  finetune epoch {}: L_imp {:.5} L_det {:.4} {} ({:.0} s)",
                r.epoch + 1,
                r.l_imp,
                r.l_det,
                parts.join(", "),
                started.elapsed().as_secs_f64()
            );
        }
        Ok(ControlFlow::Continue(()))
    })
    .unwrap();
    let after = run_evaluate(
        &mut state.embedder,
        &mut state.detector,
        &run.heldout,
        &run.set,
        &DistortionKind::ALL,
        EVAL_SEED,
    )
    .unwrap();
    let before = &run.metrics;
    for kind in DistortionKind::SOPHISTICATED {
        let (b, a) = (accuracy(before, kind), accuracy(&after, kind));
        c.check(a - b >= 0.20, format!("{} {:.3} -> {:.3}, gain below 20 points", kind.name(), b, a));
    }
    for kind in &cfg.distortions.kinds {
        let a = accuracy(&after, *kind);
        c.check(a >= 0.90, format!("{} accuracy {a:.3} after fine-tuning < 0.90", kind.name()));
    }
    let (cb, ca) = (before.detection_accuracy, after.detection_accuracy);
    c.check((ca - cb).abs() <= 0.02 + 1e-12, format!("clean accuracy {cb:.3} -> {ca:.3}"));
    let row = |m: &MetricReport| {
        DistortionKind::ALL.iter().map(|k| format!("{} {:.2}", k.name(), accuracy(m, *k))).collect::<Vec<_>>().join(", ")
    };
    c.note(format!(
        "{} epochs (best {:?}), PSNR {:.2} dB; before: {}; after: {}",
        report.epochs_run,
        report.best_epoch.map(|e| e + 1),
        after.psnr_db.unwrap_or(f64::INFINITY),
        row(before),
        row(&after)
    ));
}

fn criterion_6(c: &mut Checks, run: &DeskRun) {
    let window = watermark_window(&run.embedder, &run.detector).unwrap();
    let sizes: Vec<WatermarkSize> = SWEEP_SIZES.iter().map(|&s| WatermarkSize::square(s)).collect();
    let below = sizes.iter().filter(|s| s.width < window.lower).count();
    let inside = sizes.iter().filter(|s| window.contains_dims(s.hw())).count();
    let above = sizes.iter().filter(|s| s.width > window.upper).count();
    c.check(below >= 1 && inside >= 2 && above >= 1, format!("sizes {SWEEP_SIZES:?} against window {window:?}"));

    // Every size trains for as many epochs as the shared model, from the same
    // initial weights; that model is the sweep's entry for its own size.
    let pretrain_cfg = TrainingConfig {
        epochs: run.pretrain.epochs_run,
        eval_every: 0,
        ..run.pretrain_cfg.clone()
    };
    let others: Vec<WatermarkSize> = sizes.iter().copied().filter(|s| s.width != DESK_WATERMARK).collect();
    let config = SweepConfig {
        sizes: others,
        letters: letters(),
        embedder: run.embedder.clone(),
        detector: run.detector.clone(),
        pretrain: pretrain_cfg,
        finetune: None,
        kinds: DistortionKind::ALL.to_vec(),
        evaluation_seed: EVAL_SEED,
    };
    let started = Instant::now();
    let report = run_sweep(&config, &run.train, &run.heldout, &mut |size, r| {
        if (r.epoch + 1) % 25 == 0 {
            println!(
                "  sweep {size} epoch {}: L_imp {:.5} L_det {:.4} ({:.0} s)",
                r.epoch + 1,
                r.l_imp,
                r.l_det,
                started.elapsed().as_secs_f64()
            );
        }
    })
    .unwrap();
    for f in &report.failures {
        c.check(false, format!("size {} failed: {}", f.size, f.error));
    }
    let mut scores: Vec<(usize, bool, f64)> = report
        .results
        .iter()
        .map(|r| (r.size.width, r.in_window, r.sophisticated_mean.unwrap_or(f64::NAN)))
        .collect();
    scores.push((
        DESK_WATERMARK,
        true,
        kind_mean(&run.metrics, &DistortionKind::SOPHISTICATED).unwrap_or(f64::NAN),
    ));
    scores.sort_by_key(|s| s.0);
    let lowest_inside = scores.iter().filter(|s| s.1).map(|s| s.2).fold(f64::INFINITY, f64::min);
    let highest_outside = scores.iter().filter(|s| !s.1).map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    c.check(
        lowest_inside > highest_outside,
        format!("lowest in-window mean {lowest_inside:.3} is not above highest out-of-window mean {highest_outside:.3}"),
    );
    let parts: Vec<String> = scores
        .iter()
        .map(|(s, inside, m)| format!("{s}{} {m:.3}", if *inside { "*" } else { "" }))
        .collect();
    c.note(format!("sophisticated mean by size (* in window): {}", parts.join(", ")));
}

// ---------------------------------------------------------------- criterion 7

const UNIFORMITY_DRAWS: u64 = 70_000;
const UNIFORMITY_TOL: f64 = 0.01;

fn criterion_7(c: &mut Checks) {
    let schedule = DistortionSchedule::default();
    let mut counts: BTreeMap<DistortionKind, u64> = BTreeMap::new();
    for i in 0..UNIFORMITY_DRAWS {
        let d = sample_distortion(derive_seed(0xacc7, i), &schedule).unwrap();
        *counts.entry(d.kind()).or_default() += 1;
    }
    let expected = 1.0 / schedule.kinds.len() as f64;
    let mut worst = 0.0f64;
    for kind in &schedule.kinds {
        let f = *counts.get(kind).unwrap_or(&0) as f64 / UNIFORMITY_DRAWS as f64;
        worst = worst.max((f - expected).abs());
        c.check((f - expected).abs() <= UNIFORMITY_TOL, format!("{} drawn {f:.4}, expected {expected:.4}", kind.name()));
    }
    c.note(format!("largest kind deviation {worst:.4}"));

    // Replacement fraction within three standard deviations of p.
    let (h, w) = (128, 128);
    let aug = ImageTensor::filled(h, w, 3, 1.0);
    let orig = ImageTensor::filled(h, w, 3, -1.0);
    let mut worst_sigma = 0.0f64;
    for (k, &p) in [0.1, 0.3, 0.5, 0.9].iter().enumerate() {
        for s in 0..5u64 {
            let out = apply_dropout(&aug, &orig, p, derive_seed(k as u64, s)).unwrap();
            let replaced = out.data().chunks(3).filter(|px| px.iter().all(|&v| v == -1.0)).count();
            let kept = out.data().chunks(3).filter(|px| px.iter().all(|&v| v == 1.0)).count();
            c.check(replaced + kept == h * w, "dropout mixes channels within a pixel");
            let n = (h * w) as f64;
            let sigma = (p * (1.0 - p) / n).sqrt();
            let z = (replaced as f64 / n - p).abs() / sigma;
            worst_sigma = worst_sigma.max(z);
            c.check(z <= 3.0, format!("dropout p={p}: fraction {:.4} is {z:.2} sigma away", replaced as f64 / n));
        }
    }
    c.note(format!("dropout worst {worst_sigma:.2} sigma"));

    // Fixed seed, fixed output.
    let mut runner = TestRunner::new_with_rng(
        PropConfig {
            cases: 128,
            failure_persistence: None,
            ..PropConfig::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let strategy = (any::<u64>(), 8usize..40, 8usize..40, 0.05f64..1.0, 0.0f64..1.0, any::<u64>());
    let result = runner.run(&strategy, |(seed, h, w, area, p, img_seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(img_seed);
        let aug = random_image(&mut rng, h, w, 3);
        let orig = random_image(&mut rng, h, w, 3);
        let partner = random_image(&mut rng, h, w, 3);
        prop_assert_eq!(apply_cropout(&aug, area, seed).unwrap(), apply_cropout(&aug, area, seed).unwrap());
        prop_assert_eq!(apply_dropout(&aug, &orig, p, seed).unwrap(), apply_dropout(&aug, &orig, p, seed).unwrap());
        for config in [
            DistortionConfig::CollusionAvg { partner: None, seed },
            DistortionConfig::CollusionAlt {
                partner: None,
                seed,
                pattern: CollusionPattern::Checkerboard,
            },
        ] {
            let label = (seed % 10) as usize;
            let p1 = config.partner_for(label, 10).unwrap();
            prop_assert_eq!(p1, config.partner_for(label, 10).unwrap());
            prop_assert!(p1.is_some_and(|p| p != label && p < 10));
            let ctx = DistortionContext::new(&aug).with_original(&orig).with_partner(&partner);
            prop_assert_eq!(apply(&config, &ctx).unwrap(), apply(&config, &ctx).unwrap());
        }
        let sampled = sample_distortion(seed, &DistortionSchedule::default()).unwrap();
        prop_assert_eq!(&sampled, &sample_distortion(seed, &DistortionSchedule::default()).unwrap());
        Ok(())
    });
    c.check(result.is_ok(), format!("determinism property: {result:?}"));
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8(c: &mut Checks) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt");
    let (h, w) = (32, 32);
    let set = generate_letter_set(&['A', 'B', 'C'], WatermarkSize::square(8)).unwrap();
    let emb_cfg = EmbedderConfig::desk().with_input(h, w);
    let det_cfg = DetectorConfig::desk(3).with_input(h, w);
    let emb = build_embedder(&emb_cfg, 3).unwrap();
    let det = build_detector(&det_cfg, 4).unwrap();
    let frames: Vec<ImageTensor> = (0..6).map(|i| synthetic_frame(h, w, 100 + i)).collect();
    let cfg = TrainingConfig {
        epochs: 2,
        seed: 8,
        ..TrainingConfig::default()
    };
    let mut state = TrainingState::new(emb, det, AdamConfig::default());
    pretrain(&mut state, &frames, &[], &set, &cfg, &mut |_, _| Ok(ControlFlow::Continue(()))).unwrap();
    let info = CheckpointInfo {
        watermark_manifest_hash: set.manifest_hash.clone(),
        watermark_size: set.size,
        seed: cfg.seed,
        training: Some(cfg.clone()),
        metrics: None,
    };
    save_state(&state, &info, &path).unwrap();

    let planes = WatermarkPlanes::new(&set, (h, w)).unwrap();
    let probe: Vec<&ImageTensor> = frames.iter().take(4).collect();
    let labels = [0, 1, 2, 1];
    let outputs = |emb: &mut rfmark_core::nets::Embedder<f32>, det: &mut rfmark_core::nets::Detector<f32>| {
        let marked = embed_frames(emb, &probe, &labels, &planes).unwrap();
        let probs = det.detect(&marked.iter().collect::<Vec<_>>()).unwrap();
        (marked, probs)
    };
    let before = outputs(&mut state.embedder, &mut state.detector);
    let mut loaded = load_checkpoint(&path, Some(&set.manifest_hash), false).unwrap();
    let after = outputs(&mut loaded.embedder, &mut loaded.detector);
    c.check(before == after, "probe batch outputs changed across save/load");
    c.check(
        loaded.embedder.net.state() == state.embedder.net.state() && loaded.detector.net.state() == state.detector.net.state(),
        "weights changed across save/load",
    );

    // Any corrupted blob must fail closed.
    for blob in ["embedder.bin", "detector.bin"] {
        let file = path.join(blob);
        let original = std::fs::read(&file).unwrap();
        let mut flipped = original.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        for (what, bytes) in [("flipped byte", flipped), ("truncated", original[..original.len() - 7].to_vec())] {
            std::fs::write(&file, &bytes).unwrap();
            let r = load_checkpoint(&path, Some(&set.manifest_hash), false);
            c.check(matches!(r, Err(Error::Integrity { .. })), format!("{blob} {what}: {:?}", r.err()));
            let forced = load_checkpoint(&path, None, true);
            c.check(matches!(forced, Err(Error::Integrity { .. })), format!("{blob} {what} loaded when forced"));
        }
        std::fs::write(&file, &original).unwrap();
    }
    c.check(load_checkpoint(&path, Some(&set.manifest_hash), false).is_ok(), "restored checkpoint loads");

    // A checkpoint trained on another watermark set is refused unless forced.
    let other = generate_letter_set(&['A', 'B', 'D'], WatermarkSize::square(8)).unwrap();
    let r = load_checkpoint(&path, Some(&other.manifest_hash), false);
    c.check(matches!(r, Err(Error::ManifestMismatch { .. })), format!("manifest guard: {:?}", r.err()));
    c.check(load_checkpoint(&path, Some(&other.manifest_hash), true).is_ok(), "forced load with another manifest");
    c.check(Path::new(&path).join("meta.json").exists(), "meta.json written");
}

// ---------------------------------------------------------------- runner

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
}

const CRITERIA: [Criterion; 8] = [
    Criterion { id: 1, name: "RF golden reproduction", limit: Some(Duration::from_secs(1)) },
    Criterion { id: 2, name: "loss/metric oracle equivalence", limit: Some(Duration::from_secs(60)) },
    Criterion { id: 3, name: "gradient checks", limit: Some(Duration::from_secs(300)) },
    Criterion { id: 4, name: "desk-scale pre-training", limit: None },
    Criterion { id: 5, name: "fine-tuning robustness ordering", limit: None },
    Criterion { id: 6, name: "RF-window size sweep", limit: None },
    Criterion { id: 7, name: "distortion statistical properties", limit: Some(Duration::from_secs(60)) },
    Criterion { id: 8, name: "persistence integrity", limit: Some(Duration::from_secs(60)) },
];

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: u32| selected.is_empty() || selected.contains(&id);
    if !args.is_empty() && selected.is_empty() {
        // A libtest-style name filter that matches nothing here.
        return;
    }

    let mut desk: Option<Result<DeskRun, String>> = None;
    let mut failed = 0;
    for crit in &CRITERIA {
        if !wanted(crit.id) {
            continue;
        }
        if (4..=6).contains(&crit.id) && desk.is_none() {
            println!("criterion {}: desk-scale pre-training (shared by criteria 4 to 6)", crit.id);
            desk = Some(catch_unwind(desk_pretrain).map_err(panic_message));
        }
        let mut checks = Checks::default();
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| match crit.id {
            1 => criterion_1(&mut checks),
            2 => criterion_2(&mut checks),
            3 => criterion_3(&mut checks),
            4..=6 => match desk.as_ref().expect("desk run prepared") {
                Ok(run) if crit.id == 4 => criterion_4(&mut checks, run),
                Ok(run) if crit.id == 5 => criterion_5(&mut checks, run),
                Ok(run) => criterion_6(&mut checks, run),
                Err(e) => checks.check(false, format!("desk pre-training panicked: {e}")),
            },
            7 => criterion_7(&mut checks),
            8 => criterion_8(&mut checks),
            _ => unreachable!(),
        }));
        let elapsed = started.elapsed();
        if let Err(e) = outcome {
            checks.check(false, format!("panicked: {}", panic_message(e)));
        }
        if let Some(limit) = crit.limit {
            checks.check(
                elapsed <= limit,
                format!("runtime {:.2} s over the {} s limit", elapsed.as_secs_f64(), limit.as_secs()),
            );
        }
        let status = if checks.failures.is_empty() { "PASS" } else { "FAIL" };
        let mut detail = checks.notes.join("; ");
        if !checks.failures.is_empty() {
            let shown: Vec<&str> = checks.failures.iter().take(8).map(String::as_str).collect();
            let more = checks.failures.len().saturating_sub(shown.len());
            detail = format!(
                "{}{}{}",
                shown.join("; "),
                if more > 0 { format!("; {more} more") } else { String::new() },
                if detail.is_empty() { String::new() } else { format!(" [{detail}]") }
            );
        }
        println!(
            "{status} criterion {} ({}, {:.2} s): {detail}",
            crit.id,
            crit.name,
            elapsed.as_secs_f64()
        );
        if status == "FAIL" {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
