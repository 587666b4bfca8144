//! Watermark-size sweeps, checkpoint evaluation and report charts.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::distortions::{evaluation_config, DistortionKind};
use crate::evaluation::evaluate;
use crate::imaging::{ImageTensor, MetricReport};
use crate::nets::{build_detector, build_embedder, watermark_window, Detector, DetectorConfig, Embedder, EmbedderConfig};
use crate::plot::{LineChart, Marker, Series, BLACK, BLUE, GREEN, RED};
use crate::rfcalc::SizeRange;
use crate::training::{
    derive_seed, finetune, pretrain, CurvePoint, EpochReport, Phase, PhaseReport, TrainingConfig, TrainingState,
};
use crate::watermarks::{generate_letter_set, WatermarkSet, WatermarkSize};
use crate::{Error, Result};

/// Mean accuracy over the given kinds, skipping kinds absent from the report.
pub fn kind_mean(metrics: &MetricReport, kinds: &[DistortionKind]) -> Option<f64> {
    let vals: Vec<f64> = kinds
        .iter()
        .filter_map(|k| metrics.per_distortion.get(k.name()).copied())
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Mean over every attack in the report, identity included.
pub fn all_mean(metrics: &MetricReport) -> Option<f64> {
    let n = metrics.per_distortion.len();
    (n > 0).then(|| metrics.per_distortion.values().sum::<f64>() / n as f64)
}

/// One `distortion,accuracy` row per attack in the report.
pub fn metrics_csv(metrics: &MetricReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["distortion", "accuracy"])?;
    for (kind, acc) in &metrics.per_distortion {
        w.write_record([kind.clone(), acc.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Builds the evaluation suite for `kinds`, always including identity.
pub fn evaluation_suite_for(kinds: &[DistortionKind], seed: u64) -> Vec<crate::distortions::DistortionConfig> {
    let mut ordered = vec![DistortionKind::Identity];
    for k in DistortionKind::ALL {
        if k != DistortionKind::Identity && kinds.contains(&k) {
            ordered.push(k);
        }
    }
    ordered.into_iter().map(|k| evaluation_config(k, seed)).collect()
}

/// Embed, attack and detect every held-out frame under each kind.
pub fn run_evaluate(
    embedder: &mut Embedder<f32>,
    detector: &mut Detector<f32>,
    heldout: &[ImageTensor],
    set: &WatermarkSet,
    kinds: &[DistortionKind],
    seed: u64,
) -> Result<MetricReport> {
    evaluate(embedder, detector, heldout, set, &evaluation_suite_for(kinds, seed), seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub sizes: Vec<WatermarkSize>,
    pub letters: Vec<char>,
    pub embedder: EmbedderConfig,
    pub detector: DetectorConfig,
    pub pretrain: TrainingConfig,
    /// Optional second phase applied to every size before evaluation.
    pub finetune: Option<TrainingConfig>,
    pub kinds: Vec<DistortionKind>,
    pub evaluation_seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::Config("sweep needs at least one watermark size".into()));
        }
        if self.pretrain.phase != Phase::Pretrain {
            return Err(Error::Config("sweep pretrain config must be in the pretrain phase".into()));
        }
        if let Some(ft) = &self.finetune {
            if ft.phase != Phase::Finetune {
                return Err(Error::Config("sweep finetune config must be in the finetune phase".into()));
            }
        }
        self.embedder.validate()?;
        self.detector.validate()?;
        self.pretrain.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeResult {
    pub size: WatermarkSize,
    pub in_window: bool,
    pub pretrain: PhaseReport,
    pub finetune: Option<PhaseReport>,
    pub metrics: MetricReport,
    pub all_mean: f64,
    pub sophisticated_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub size: WatermarkSize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: WatermarkSize,
    pub distortion: String,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub embedder_rf: usize,
    pub detector_rf: usize,
    pub window: SizeRange,
    pub results: Vec<SizeResult>,
    pub failures: Vec<SweepFailure>,
}

impl SweepReport {
    /// Rows in sweep order. A failed size keeps its rows with NaN accuracy.
    pub fn rows(&self) -> Vec<SweepRow> {
        let kinds: Vec<&str> = evaluation_suite_for(&self.config.kinds, 0)
            .iter()
            .map(|c| c.kind().name())
            .collect();
        let mut rows = Vec::new();
        for size in &self.config.sizes {
            let result = self.results.iter().find(|r| r.size == *size);
            for k in &kinds {
                rows.push(SweepRow {
                    size: *size,
                    distortion: k.to_string(),
                    accuracy: result
                        .and_then(|r| r.metrics.per_distortion.get(*k).copied())
                        .unwrap_or(f64::NAN),
                });
            }
        }
        rows
    }

    /// One `size,distortion,accuracy` row per trained size and attack.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["size", "distortion", "accuracy"])?;
        for row in self.rows() {
            w.write_record([row.size.to_string(), row.distortion, row.accuracy.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Accuracy against watermark width, with the two receptive fields marked.
    pub fn chart(&self) -> LineChart {
        let mut chart = LineChart::new("ACCURACY VS WATERMARK SIZE", "WATERMARK WIDTH PX", "ACCURACY");
        chart.log2_x = true;
        chart.y_range = Some((0.0, 1.0));
        let mut results: Vec<&SizeResult> = self.results.iter().collect();
        results.sort_by_key(|r| r.size.width);
        chart.series.push(Series {
            label: "ALL DISTORTIONS".into(),
            color: BLACK,
            points: results.iter().map(|r| (r.size.width as f64, r.all_mean)).collect(),
        });
        chart.series.push(Series {
            label: "SOPHISTICATED".into(),
            color: BLUE,
            points: results
                .iter()
                .filter_map(|r| r.sophisticated_mean.map(|s| (r.size.width as f64, s)))
                .collect(),
        });
        chart.markers.push(Marker {
            x: self.embedder_rf as f64,
            label: format!("EMBEDDER RF {}", self.embedder_rf),
            color: RED,
        });
        chart.markers.push(Marker {
            x: self.detector_rf as f64,
            label: format!("DETECTOR RF {}", self.detector_rf),
            color: RED,
        });
        chart
    }
}

pub type SweepHook<'a> = dyn FnMut(WatermarkSize, &EpochReport) + 'a;

/// Trains and evaluates one model per watermark size. A failing size is
/// recorded and the sweep moves on.
pub fn run_sweep(
    config: &SweepConfig,
    train: &[ImageTensor],
    heldout: &[ImageTensor],
    hook: &mut SweepHook<'_>,
) -> Result<SweepReport> {
    config.validate()?;
    let detector_cfg = DetectorConfig {
        classes: config.letters.len(),
        ..config.detector.clone()
    };
    let window = watermark_window(&config.embedder, &detector_cfg)?;
    let mut report = SweepReport {
        config: config.clone(),
        embedder_rf: config.embedder.receptive_field()?,
        detector_rf: detector_cfg.receptive_field()?,
        window,
        results: Vec::new(),
        failures: Vec::new(),
    };
    for &size in &config.sizes {
        match sweep_one(config, &detector_cfg, size, train, heldout, hook) {
            Ok(mut r) => {
                r.in_window = window.contains_dims(size.hw());
                report.results.push(r);
            }
            Err(e) => {
                log::error!("sweep size {size} failed: {e}");
                report.failures.push(SweepFailure {
                    size,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(report)
}

fn sweep_one(
    config: &SweepConfig,
    detector_cfg: &DetectorConfig,
    size: WatermarkSize,
    train: &[ImageTensor],
    heldout: &[ImageTensor],
    hook: &mut SweepHook<'_>,
) -> Result<SizeResult> {
    let set = generate_letter_set(&config.letters, size)?;
    // Every size starts from the same initial weights.
    let embedder = build_embedder(&config.embedder, derive_seed(config.pretrain.seed, 1))?;
    let detector = build_detector(detector_cfg, derive_seed(config.pretrain.seed, 2))?;
    let mut state = TrainingState::new(embedder, detector, config.pretrain.adam());
    let mut on_epoch = |_: &TrainingState, r: &EpochReport| {
        hook(size, r);
        Ok(ControlFlow::Continue(()))
    };
    let pre = pretrain(&mut state, train, heldout, &set, &config.pretrain, &mut on_epoch)?;
    let fine = match &config.finetune {
        Some(ft) => Some(finetune(&mut state, train, heldout, &set, ft, &mut on_epoch)?),
        None => None,
    };
    let metrics = run_evaluate(
        &mut state.embedder,
        &mut state.detector,
        heldout,
        &set,
        &config.kinds,
        config.evaluation_seed,
    )?;
    Ok(SizeResult {
        size,
        in_window: false,
        pretrain: pre,
        finetune: fine,
        all_mean: all_mean(&metrics).unwrap_or(metrics.detection_accuracy),
        sophisticated_mean: kind_mean(&metrics, &DistortionKind::SOPHISTICATED),
        metrics,
    })
}

/// Per-epoch means of the step curves, keyed by (phase order, epoch).
fn epoch_means(curves: &[CurvePoint]) -> Vec<(f64, f64, f64, f64)> {
    let mut acc: BTreeMap<(u8, usize), (f64, f64, f64, usize)> = BTreeMap::new();
    let mut last_step = BTreeMap::new();
    for p in curves {
        let key = (p.phase as u8, p.epoch);
        let e = acc.entry(key).or_default();
        e.0 += p.l_imp;
        e.1 += p.l_det;
        e.2 += p.accuracy;
        e.3 += 1;
        last_step.insert(key, p.step);
    }
    acc.into_iter()
        .map(|(k, (l_imp, l_det, accuracy, n))| {
            let n = n as f64;
            (last_step[&k] as f64 + 1.0, l_imp / n, l_det / n, accuracy / n)
        })
        .collect()
}

/// Loss and accuracy charts over training steps, averaged per epoch.
pub fn curve_charts(curves: &[CurvePoint]) -> Vec<(&'static str, LineChart)> {
    let means = epoch_means(curves);
    let mut losses = LineChart::new("TRAINING LOSSES", "STEP", "LOSS");
    losses.series.push(Series {
        label: "L IMP".into(),
        color: BLUE,
        points: means.iter().map(|m| (m.0, m.1)).collect(),
    });
    losses.series.push(Series {
        label: "L DET".into(),
        color: RED,
        points: means.iter().map(|m| (m.0, m.2)).collect(),
    });
    let mut accuracy = LineChart::new("BATCH DETECTION ACCURACY", "STEP", "ACCURACY");
    accuracy.y_range = Some((0.0, 1.0));
    accuracy.series.push(Series {
        label: "ACCURACY".into(),
        color: GREEN,
        points: means.iter().map(|m| (m.0, m.3)).collect(),
    });
    vec![("losses", losses), ("accuracy", accuracy)]
}
