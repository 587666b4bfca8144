use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use rfmark_core::dataio::{
    ingest as ingest_frames, load_checkpoint, save_state, split, CheckpointInfo, FrameDataset, FrameSource, Heldout,
    LoadedCheckpoint,
};
use rfmark_core::distortions::{apply, evaluation_config, DistortionConfig, DistortionContext, DistortionKind};
use rfmark_core::experiments::{curve_charts, metrics_csv, run_evaluate, run_sweep, SweepConfig};
use rfmark_core::nets::{build_detector, build_embedder, watermark_window, DetectorConfig, EmbedderConfig};
use rfmark_core::rfcalc::{chain_rf, valid_watermark_range};
use rfmark_core::training::{
    derive_seed, finetune as finetune_phase, pretrain, read_curves_csv, write_curves_csv, EpochReport, Phase,
    PhaseReport, TrainingConfig, TrainingState,
};
use rfmark_core::watermarks::{generate_letter_set, overlay, parse_letters, WatermarkSet};
use rfmark_core::{psnr, Error, ImageTensor, MetricReport};
use serde::Serialize;

use crate::args::*;
use crate::settings::*;
use crate::{CliError, CliResult};

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value).map_err(Error::from)?);
    Ok(())
}

fn data_err(msg: String) -> CliError {
    CliError::Core(Error::Dataset(msg))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn rf(a: RfArgs) -> CliResult<()> {
    let mut s: RfSettings = load(a.config.as_deref())?;
    set(&mut s.profile, a.profile);
    if let Some(i) = &a.input {
        s.input = Some(parse_frame(i)?);
    }
    let (emb, det) = match s.profile {
        Profile::Full => (EmbedderConfig::full_scale(), DetectorConfig::full_scale(2)),
        Profile::Desk => (EmbedderConfig::desk(), DetectorConfig::desk(2)),
    };
    let emb = s.embedder.clone().unwrap_or(emb);
    let det = s.detector.clone().unwrap_or(det);
    let (h, w) = s.input.unwrap_or(emb.input);
    let e = chain_rf(&emb.layer_chain(), (w, h))?;
    let d = chain_rf(&det.layer_chain(), (w, h))?;
    let window = valid_watermark_range(&e, &d)?;
    if a.json {
        return print_json(&serde_json::json!({
            "config": s,
            "embedder": e,
            "detector": d,
            "window": window,
        }));
    }
    println!("Embedder\n{}", e.to_table());
    println!("Detector\n{}", d.to_table());
    println!(
        "Watermark window: [{}, {}] (embedder RF {}, detector RF {})",
        window.lower, window.upper, e.network_rf, d.network_rf
    );
    Ok(())
}

pub fn gen_watermarks(a: GenWatermarksArgs) -> CliResult<()> {
    let mut s: GenWatermarksSettings = load(a.config.as_deref())?;
    set(&mut s.letters, a.letters);
    if let Some(sz) = &a.size {
        s.size = parse_size(sz)?;
    }
    set_opt(&mut s.out, a.out);
    let out = need(s.out.clone(), "out")?;
    let letters = parse_letters(&s.letters).map_err(|e| usage(e.to_string()))?;
    let set = generate_letter_set(&letters, s.size)?;
    set.save(&out)?;
    print_json(&serde_json::json!({
        "config": s,
        "count": set.len(),
        "manifest_hash": set.manifest_hash,
    }))
}

pub fn ingest(a: IngestArgs) -> CliResult<()> {
    let mut s: IngestSettings = load(a.config.as_deref())?;
    if a.synthetic {
        s.source = Some(FrameSource::Synthetic);
    }
    if let Some(path) = a.images {
        s.source = Some(FrameSource::ImageDir { path });
    }
    if let Some(path) = a.video {
        let frames_dir = a
            .frames_dir
            .unwrap_or_else(|| path.with_extension("frames"));
        s.source = Some(FrameSource::Video { path, frames_dir });
    }
    set(&mut s.count, a.count);
    if let Some(r) = &a.resolution {
        s.resolution = parse_frame(r)?;
    }
    if let Some(h) = &a.heldout {
        s.heldout = h.parse().map_err(|_| usage(format!("--heldout expects a number, got {h:?}")))?;
    }
    set(&mut s.seed, a.seed);
    set_opt(&mut s.out, a.out);
    let out = need(s.out.clone(), "out")?;
    let source = need(s.source.clone(), "synthetic, --images or --video")?;
    let heldout = if s.heldout < 1.0 {
        Heldout::Fraction(s.heldout)
    } else if s.heldout.fract() == 0.0 {
        Heldout::Count(s.heldout as usize)
    } else {
        return Err(usage(format!("--heldout {} is neither a fraction nor a count", s.heldout)));
    };
    let ds = ingest_frames(&source, s.count, s.resolution, s.seed)?;
    let ds = split(ds, heldout, derive_seed(s.seed, 1))?;
    ds.save(&out)?;
    print_json(&serde_json::json!({
        "config": s,
        "train": ds.split.train.len(),
        "heldout": ds.split.heldout.len(),
    }))
}

#[derive(Serialize)]
struct RunSummary<'a, C: Serialize> {
    config: &'a C,
    checkpoint: PathBuf,
    embedder_rf: usize,
    detector_rf: usize,
    window: (usize, usize),
    report: &'a PhaseReport,
}

/// Runs a phase, saving to `<out>/checkpoint` every `every` epochs and at the end.
#[allow(clippy::too_many_arguments)]
fn run_and_save<C: Serialize>(
    state: &mut TrainingState,
    ds: &FrameDataset,
    set: &WatermarkSet,
    cfg: &TrainingConfig,
    every: usize,
    out: &Path,
    echo: &C,
) -> CliResult<()> {
    let train = ds.train_frames()?;
    let heldout = ds.heldout_frames()?;
    create_dir(out)?;
    let ckpt = out.join("checkpoint");
    let info = |metrics: Option<MetricReport>| CheckpointInfo {
        watermark_manifest_hash: set.manifest_hash.clone(),
        watermark_size: set.size,
        seed: cfg.seed,
        training: Some(cfg.clone()),
        metrics,
    };
    let mut hook = |st: &TrainingState, r: &EpochReport| {
        if every > 0 && (r.epoch + 1).is_multiple_of(every) {
            save_state(st, &info(r.heldout.clone()), &ckpt)?;
        }
        Ok(ControlFlow::Continue(()))
    };
    let report = match cfg.phase {
        Phase::Pretrain => pretrain(state, &train, &heldout, set, cfg, &mut hook)?,
        Phase::Finetune => finetune_phase(state, &train, &heldout, set, cfg, &mut hook)?,
    };
    save_state(state, &info(report.heldout.clone()), &ckpt)?;
    write_curves_csv(&out.join("curves.csv"), &state.curves)?;
    let window = watermark_window(&state.embedder.config, &state.detector.config)?;
    let summary = RunSummary {
        config: echo,
        checkpoint: ckpt,
        embedder_rf: state.embedder.rf,
        detector_rf: state.detector.rf,
        window: (window.lower, window.upper),
        report: &report,
    };
    write_json(&out.join("summary.json"), &summary)?;
    if let Some(m) = &report.heldout {
        log::info!(
            "held-out accuracy {:.3}, PSNR {} dB, SSIM {:.3}",
            m.detection_accuracy,
            m.psnr_db.map_or("inf".into(), |p| format!("{p:.2}")),
            m.ssim
        );
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mut s: TrainSettings = load(a.config.as_deref())?;
    set_opt(&mut s.dataset, a.dataset);
    set_opt(&mut s.watermarks, a.watermarks);
    set_opt(&mut s.out, a.out);
    set(&mut s.profile, a.profile);
    set(&mut s.checkpoint_every, a.checkpoint_every);
    a.training.apply(&mut s.training);
    if s.training.phase != Phase::Pretrain {
        return Err(usage("train runs the pretrain phase; use finetune for the second phase"));
    }
    let ds = FrameDataset::open(&need(s.dataset.clone(), "dataset")?)?;
    let set = WatermarkSet::load(&need(s.watermarks.clone(), "watermarks")?)?;
    let out = need(s.out.clone(), "out")?;
    let (emb_cfg, det_cfg) = networks(s.profile, s.embedder.as_ref(), s.detector.as_ref(), set.len(), ds.resolution);
    let embedder = build_embedder(&emb_cfg, derive_seed(s.training.seed, 1))?;
    let detector = build_detector(&det_cfg, derive_seed(s.training.seed, 2))?;
    let mut state = TrainingState::new(embedder, detector, s.training.adam());
    run_and_save(&mut state, &ds, &set, &s.training, s.checkpoint_every, &out, &s)
}

fn open_checkpoint(path: &Path, set: Option<&WatermarkSet>, force: bool) -> CliResult<LoadedCheckpoint> {
    Ok(load_checkpoint(path, set.map(|s| s.manifest_hash.as_str()), force)?)
}

pub fn finetune(a: FinetuneArgs) -> CliResult<()> {
    let mut s: FinetuneSettings = load(a.config.as_deref())?;
    set_opt(&mut s.checkpoint, a.checkpoint);
    set_opt(&mut s.dataset, a.dataset);
    set_opt(&mut s.watermarks, a.watermarks);
    set_opt(&mut s.out, a.out);
    set(&mut s.checkpoint_every, a.checkpoint_every);
    s.force |= a.force;
    if let Some(k) = &a.kinds {
        let mut kinds = parse_kinds(k)?;
        if !kinds.contains(&DistortionKind::Identity) {
            kinds.insert(0, DistortionKind::Identity);
        }
        s.training.distortions.kinds = kinds;
    }
    a.training.apply(&mut s.training);
    s.training.phase = Phase::Finetune;
    let ds = FrameDataset::open(&need(s.dataset.clone(), "dataset")?)?;
    let set = WatermarkSet::load(&need(s.watermarks.clone(), "watermarks")?)?;
    let out = need(s.out.clone(), "out")?;
    let loaded = open_checkpoint(&need(s.checkpoint.clone(), "checkpoint")?, Some(&set), s.force)?;
    let mut state = loaded.into_state(s.training.adam());
    run_and_save(&mut state, &ds, &set, &s.training, s.checkpoint_every, &out, &s)
}

fn load_input(path: &Path, frame: (usize, usize), resize: bool) -> CliResult<ImageTensor> {
    let img = ImageTensor::load(path)?;
    if (img.height(), img.width()) == frame {
        Ok(img)
    } else if resize {
        Ok(img.resized(frame.0, frame.1)?)
    } else {
        Err(data_err(format!(
            "{} is {}x{} but the checkpoint expects {}x{}; pass --resize to fit it",
            path.display(),
            img.width(),
            img.height(),
            frame.1,
            frame.0
        )))
    }
}

fn resolve_id(set: &WatermarkSet, id: &str) -> CliResult<usize> {
    if let Ok(n) = id.parse::<usize>() {
        set.get(n)?;
        return Ok(n);
    }
    let mut chars = id.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if let Some(i) = set.letters().iter().position(|&l| l == c.to_ascii_uppercase()) {
            return Ok(i);
        }
    }
    Err(usage(format!("--id {id:?} names no watermark in the set")))
}

pub fn embed(a: EmbedArgs) -> CliResult<()> {
    let mut s: EmbedSettings = load(a.config.as_deref())?;
    set_opt(&mut s.checkpoint, a.checkpoint);
    set_opt(&mut s.watermarks, a.watermarks);
    set_opt(&mut s.image, a.image);
    set_opt(&mut s.id, a.id);
    set_opt(&mut s.out, a.out);
    s.resize |= a.resize;
    s.force |= a.force;
    let set = WatermarkSet::load(&need(s.watermarks.clone(), "watermarks")?)?;
    let mut ck = open_checkpoint(&need(s.checkpoint.clone(), "checkpoint")?, Some(&set), s.force)?;
    let image_path = need(s.image.clone(), "image")?;
    let out = need(s.out.clone(), "out")?;
    let id = resolve_id(&set, &need(s.id.clone(), "id")?)?;
    let image = load_input(&image_path, ck.embedder.config.input, s.resize)?;
    let ov = overlay(&image, set.get(id)?)?;
    let augmented = ck.embedder.embed(&[ov])?.remove(0);
    augmented.save(&out)?;
    let quality = psnr(&image, &augmented)?;
    print_json(&serde_json::json!({
        "config": s,
        "id": id,
        "letter": set.get(id)?.glyph.to_string(),
        "psnr_db": quality.is_finite().then_some(quality),
    }))
}

pub fn detect(a: DetectArgs) -> CliResult<()> {
    let mut s: DetectSettings = load(a.config.as_deref())?;
    set_opt(&mut s.checkpoint, a.checkpoint);
    set_opt(&mut s.watermarks, a.watermarks);
    if !a.image.is_empty() {
        s.images = a.image;
    }
    s.resize |= a.resize;
    s.force |= a.force;
    if s.images.is_empty() {
        return Err(usage("missing required --image"));
    }
    let set = s.watermarks.as_deref().map(WatermarkSet::load).transpose()?;
    let mut ck = open_checkpoint(&need(s.checkpoint.clone(), "checkpoint")?, set.as_ref(), s.force)?;
    let frame = ck.detector.config.input;
    let images = s
        .images
        .iter()
        .map(|p| load_input(p, frame, s.resize))
        .collect::<CliResult<Vec<_>>>()?;
    let refs: Vec<&ImageTensor> = images.iter().collect();
    let probs = ck.detector.detect(&refs)?;
    let results: Vec<_> = s
        .images
        .iter()
        .zip(&probs)
        .map(|(path, p)| {
            let id = (0..p.len()).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap_or(0);
            serde_json::json!({
                "image": path,
                "id": id,
                "letter": set.as_ref().and_then(|s| s.get(id).ok()).map(|w| w.glyph.to_string()),
                "confidence": p[id],
                "probabilities": p,
            })
        })
        .collect();
    print_json(&serde_json::json!({ "config": s, "detections": results }))
}

fn attack_config(kind: DistortionKind, s: &AttackSettings) -> DistortionConfig {
    let mut cfg = evaluation_config(kind, s.seed);
    match &mut cfg {
        DistortionConfig::Cropout { area_fraction, .. } => set(area_fraction, s.area),
        DistortionConfig::Dropout { p, .. } => set(p, s.p),
        DistortionConfig::Jpeg { quality } => set(quality, s.quality),
        DistortionConfig::Quantization { bits } => set(bits, s.bits),
        _ => {}
    }
    cfg
}

pub fn attack(a: AttackArgs) -> CliResult<()> {
    let mut s: AttackSettings = load(a.config.as_deref())?;
    set(&mut s.kind, a.kind);
    set_opt(&mut s.image, a.image);
    set_opt(&mut s.original, a.original);
    set_opt(&mut s.partner, a.partner);
    set_opt(&mut s.area, a.area);
    set_opt(&mut s.p, a.p);
    set_opt(&mut s.quality, a.quality);
    set_opt(&mut s.bits, a.bits);
    set_opt(&mut s.out, a.out);
    set(&mut s.seed, a.seed);
    let all = s.kind.eq_ignore_ascii_case("all");
    let kinds = parse_kinds(&s.kind)?;
    let image = ImageTensor::load(&need(s.image.clone(), "image")?)?;
    let original = s.original.as_deref().map(ImageTensor::load).transpose()?;
    let partner = s.partner.as_deref().map(ImageTensor::load).transpose()?;
    let out = need(s.out.clone(), "out")?;
    if all {
        create_dir(&out)?;
    }
    let mut written = Vec::new();
    for kind in kinds {
        if kind == DistortionKind::Dropout && original.is_none() || kind.needs_partner() && partner.is_none() {
            if all {
                log::warn!("skipping {}: it needs --{}", kind.name(), if kind.needs_partner() { "partner" } else { "original" });
                continue;
            }
            return Err(usage(format!(
                "{} needs --{}",
                kind.name(),
                if kind.needs_partner() { "partner" } else { "original" }
            )));
        }
        let cfg = attack_config(kind, &s);
        let mut ctx = DistortionContext::new(&image);
        if let Some(o) = &original {
            ctx = ctx.with_original(o);
        }
        if let Some(p) = &partner {
            ctx = ctx.with_partner(p);
        }
        let attacked = apply(&cfg, &ctx)?;
        let path = if all { out.join(format!("{}.png", kind.name())) } else { out.clone() };
        attacked.save(&path)?;
        written.push(serde_json::json!({ "kind": kind.name(), "config": cfg, "path": path }));
    }
    print_json(&serde_json::json!({ "config": s, "outputs": written }))
}

#[derive(Serialize)]
struct EvaluateReport<'a> {
    config: &'a EvaluateSettings,
    checkpoint_phase: Phase,
    checkpoint_epoch: usize,
    embedder_rf: usize,
    detector_rf: usize,
    #[serde(flatten)]
    metrics: MetricReport,
}

pub fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let mut s: EvaluateSettings = load(a.config.as_deref())?;
    set_opt(&mut s.checkpoint, a.checkpoint);
    set_opt(&mut s.dataset, a.dataset);
    set_opt(&mut s.watermarks, a.watermarks);
    if let Some(k) = &a.kinds {
        s.kinds = parse_kinds(k)?;
    }
    set(&mut s.seed, a.seed);
    set_opt(&mut s.out, a.out);
    set_opt(&mut s.csv, a.csv);
    s.force |= a.force;
    let ds = FrameDataset::open(&need(s.dataset.clone(), "dataset")?)?;
    let set = WatermarkSet::load(&need(s.watermarks.clone(), "watermarks")?)?;
    let mut ck = open_checkpoint(&need(s.checkpoint.clone(), "checkpoint")?, Some(&set), s.force)?;
    let heldout = ds.heldout_frames()?;
    let metrics = run_evaluate(&mut ck.embedder, &mut ck.detector, &heldout, &set, &s.kinds, s.seed)?;
    if let Some(path) = &s.csv {
        std::fs::write(path, metrics_csv(&metrics)?).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    }
    let report = EvaluateReport {
        config: &s,
        checkpoint_phase: ck.meta.phase,
        checkpoint_epoch: ck.meta.epoch,
        embedder_rf: ck.meta.embedder_rf,
        detector_rf: ck.meta.detector_rf,
        metrics,
    };
    match &s.out {
        Some(path) => {
            write_json(path, &report)?;
            log::info!("wrote {}", path.display());
            Ok(())
        }
        None => print_json(&report),
    }
}

#[derive(Serialize)]
struct SweepOutput<'a> {
    settings: &'a SweepSettings,
    #[serde(flatten)]
    report: &'a rfmark_core::experiments::SweepReport,
}

pub fn sweep(a: SweepArgs) -> CliResult<()> {
    let mut s: SweepSettings = load(a.config.as_deref())?;
    set_opt(&mut s.dataset, a.dataset);
    set_opt(&mut s.out, a.out);
    set(&mut s.profile, a.profile);
    if let Some(sizes) = &a.sizes {
        s.sizes = sizes.split(',').map(parse_size).collect::<CliResult<_>>()?;
    }
    set(&mut s.letters, a.letters);
    if let Some(k) = &a.kinds {
        s.kinds = parse_kinds(k)?;
    }
    set(&mut s.finetune.epochs, a.finetune_epochs);
    a.training.apply(&mut s.pretrain);
    if let Some(seed) = a.training.seed {
        s.finetune.seed = seed;
        s.evaluation_seed = seed;
    }
    s.finetune.phase = Phase::Finetune;
    let ds = FrameDataset::open(&need(s.dataset.clone(), "dataset")?)?;
    let out = need(s.out.clone(), "out")?;
    let letters = parse_letters(&s.letters).map_err(|e| usage(e.to_string()))?;
    let (embedder, detector) = networks(s.profile, s.embedder.as_ref(), s.detector.as_ref(), letters.len(), ds.resolution);
    let config = SweepConfig {
        sizes: s.sizes.clone(),
        letters,
        embedder,
        detector,
        pretrain: s.pretrain.clone(),
        finetune: (s.finetune.epochs > 0).then(|| s.finetune.clone()),
        kinds: s.kinds.clone(),
        evaluation_seed: s.evaluation_seed,
    };
    let train = ds.train_frames()?;
    let heldout = ds.heldout_frames()?;
    let report = run_sweep(&config, &train, &heldout, &mut |size, r| {
        log::info!("size {size} epoch {}: L_det {:.4} acc {:.3}", r.epoch, r.l_det, r.accuracy);
    })?;
    create_dir(&out)?;
    std::fs::write(out.join("sweep.csv"), report.to_csv()?).map_err(|e| data_err(e.to_string()))?;
    write_json(&out.join("sweep.json"), &SweepOutput { settings: &s, report: &report })?;
    report.chart().save(&out.join("sweep.png"))?;
    for f in &report.failures {
        log::warn!("size {} failed: {}", f.size, f.error);
    }
    Ok(())
}

pub fn report(a: ReportArgs) -> CliResult<()> {
    let mut s: ReportSettings = load(a.config.as_deref())?;
    if !a.curves.is_empty() {
        s.curves = a.curves;
    }
    set_opt(&mut s.sweep, a.sweep);
    set_opt(&mut s.out, a.out);
    let out = need(s.out.clone(), "out")?;
    if s.curves.is_empty() && s.sweep.is_none() {
        return Err(usage("nothing to report: pass --curves and/or --sweep"));
    }
    create_dir(&out)?;
    let mut written = Vec::new();
    for path in &s.curves {
        let curves = read_curves_csv(path)?;
        let stem = path
            .parent()
            .and_then(|p| p.file_name())
            .or_else(|| path.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "curves".into());
        for (name, chart) in curve_charts(&curves) {
            let target = out.join(format!("{stem}_{name}.png"));
            chart.save(&target)?;
            written.push(target);
        }
    }
    if let Some(path) = &s.sweep {
        let text = std::fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        let report: rfmark_core::experiments::SweepReport = serde_json::from_str(&text).map_err(Error::from)?;
        let target = out.join("sweep.png");
        report.chart().save(&target)?;
        written.push(target);
    }
    print_json(&serde_json::json!({ "config": s, "written": written }))
}
