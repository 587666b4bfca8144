use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rfmark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfmark"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = rfmark(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn code(args: &[&str]) -> i32 {
    rfmark(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn rf_reports_the_full_scale_window() {
    let v = ok(&["rf", "--profile", "full", "--json"]);
    assert_eq!(v["window"]["lower"], 16);
    assert_eq!(v["window"]["upper"], 161);
    let desk = ok(&["rf", "--json"]);
    assert_eq!(desk["embedder"]["network_rf"], 8);
    assert_eq!(desk["detector"]["network_rf"], 41);
    assert_eq!(desk["config"]["profile"], "desk");
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["gen-watermarks", "--letters", "A..C"]), 1);
    assert_eq!(code(&["evaluate", "--dataset", "/nonexistent/ds.json", "--watermarks", "/x", "--checkpoint", "/y"]), 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("wm");
    assert_eq!(code(&["gen-watermarks", "--letters", "A,A", "--out", s(&out)]), 2);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    let out = dir.path().join("wm");
    std::fs::write(&cfg, format!(r#"{{"letters": "A..E", "size": {{"width": 8, "height": 8}}, "out": "{}"}}"#, s(&out))).unwrap();
    let v = ok(&["gen-watermarks", "--config", s(&cfg), "--letters", "X,Y,Z"]);
    assert_eq!(v["count"], 3);
    assert_eq!(v["config"]["letters"], "X,Y,Z");
    assert_eq!(v["config"]["size"]["width"], 8);
    let unknown = dir.path().join("bad.json");
    std::fs::write(&unknown, r#"{"letterz": "A..E"}"#).unwrap();
    assert_eq!(code(&["gen-watermarks", "--config", s(&unknown)]), 2);
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ds = d.join("ds.json");
    let wm = d.join("wm");
    let other_wm = d.join("wm_other");
    let run = d.join("run");
    let ft = d.join("ft");

    let v = ok(&["ingest", "--synthetic", "--count", "10", "--resolution", "32x32", "--heldout", "4", "--seed", "3", "--out", s(&ds)]);
    assert_eq!(v["train"], 6);
    assert_eq!(v["heldout"], 4);
    ok(&["gen-watermarks", "--letters", "A..C", "--size", "8", "--out", s(&wm)]);
    ok(&["gen-watermarks", "--letters", "A..D", "--size", "8", "--out", s(&other_wm)]);

    ok(&["train", "--dataset", s(&ds), "--watermarks", s(&wm), "--out", s(&run), "--epochs", "1", "--seed", "5"]);
    let ckpt = run.join("checkpoint");
    assert!(ckpt.join("meta.json").exists());
    let curves = std::fs::read_to_string(run.join("curves.csv")).unwrap();
    assert!(curves.starts_with("step,epoch,phase,l_imp,l_det,l_e,accuracy"));
    assert_eq!(curves.lines().count(), 1 + 1);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["training"]["epochs"], 1);
    assert_eq!(summary["embedder_rf"], 8);

    let eval_args = ["evaluate", "--checkpoint", s(&ckpt), "--dataset", s(&ds), "--watermarks", s(&wm), "--seed", "9"];
    let e1 = ok(&eval_args);
    let e2 = ok(&eval_args);
    assert_eq!(e1, e2);
    assert_eq!(e1["per_distortion"].as_object().unwrap().len(), 7);
    assert_eq!(e1["per_distortion"]["identity"], e1["detection_accuracy"]);
    assert!(e1["psnr_db"].is_number());
    assert_eq!(e1["config"]["seed"], 9);
    let rows = d.join("eval.csv");
    let mut csv_args = eval_args.to_vec();
    csv_args.extend(["--csv", s(&rows)]);
    ok(&csv_args);
    let text = std::fs::read_to_string(&rows).unwrap();
    assert!(text.starts_with("distortion,accuracy\n"));
    assert_eq!(text.lines().count(), 1 + 7);

    // A different watermark set is refused unless forced.
    let mismatch = ["evaluate", "--checkpoint", s(&ckpt), "--dataset", s(&ds), "--watermarks", s(&other_wm)];
    assert_eq!(code(&mismatch), 2);

    let frame = d.join("frame.png");
    let marked = d.join("marked.png");
    let partner = d.join("partner.png");
    rfmark_core::dataio::synthetic_frame(32, 32, 1).save(&frame).unwrap();
    let emb = ok(&["embed", "--checkpoint", s(&ckpt), "--watermarks", s(&wm), "--image", s(&frame), "--id", "B", "--out", s(&marked)]);
    assert_eq!(emb["id"], 1);
    ok(&["embed", "--checkpoint", s(&ckpt), "--watermarks", s(&wm), "--image", s(&frame), "--id", "2", "--out", s(&partner)]);
    let det = ok(&["detect", "--checkpoint", s(&ckpt), "--watermarks", s(&wm), "--image", s(&marked), s(&partner)]);
    let dets = det["detections"].as_array().unwrap();
    assert_eq!(dets.len(), 2);
    let p: f64 = dets[0]["probabilities"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((p - 1.0).abs() < 1e-5);

    let attacked = d.join("attacked");
    let a = ok(&["attack", "--kind", "all", "--image", s(&marked), "--original", s(&frame), "--partner", s(&partner), "--seed", "4", "--out", s(&attacked)]);
    assert_eq!(a["outputs"].as_array().unwrap().len(), 7);
    for kind in ["identity", "cropout", "dropout", "jpeg", "quantization", "collusion_avg", "collusion_alt"] {
        assert!(attacked.join(format!("{kind}.png")).exists(), "{kind}");
    }
    let single = d.join("jpeg.png");
    ok(&["attack", "--kind", "jpeg", "--quality", "30", "--image", s(&marked), "--out", s(&single)]);
    assert_eq!(code(&["attack", "--kind", "dropout", "--image", s(&marked), "--out", s(&single)]), 1);

    ok(&["finetune", "--checkpoint", s(&ckpt), "--dataset", s(&ds), "--watermarks", s(&wm), "--out", s(&ft), "--epochs", "1", "--kinds", "jpeg,collusion_alt", "--seed", "6"]);
    let ft_summary: Value = serde_json::from_str(&std::fs::read_to_string(ft.join("summary.json")).unwrap()).unwrap();
    assert_eq!(ft_summary["report"]["phase"], "finetune");
    assert_eq!(ft_summary["config"]["training"]["distortions"]["kinds"], serde_json::json!(["identity", "jpeg", "collusion_alt"]));

    let charts = d.join("charts");
    let r = ok(&["report", "--curves", s(&run.join("curves.csv")), s(&ft.join("curves.csv")), "--out", s(&charts)]);
    assert_eq!(r["written"].as_array().unwrap().len(), 4);
    assert!(charts.join("run_losses.png").exists());
    assert!(charts.join("ft_accuracy.png").exists());
}

#[test]
fn sweep_writes_csv_json_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ds = d.join("ds.json");
    let out = d.join("sweep");
    ok(&["ingest", "--synthetic", "--count", "8", "--resolution", "32x32", "--heldout", "3", "--out", s(&ds)]);
    ok(&["sweep", "--dataset", s(&ds), "--sizes", "8,64", "--letters", "A..C", "--epochs", "1", "--seed", "2", "--out", s(&out)]);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 7);
    assert!(out.join("sweep.png").exists());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(report["failures"].as_array().unwrap().len(), 1);
    assert_eq!(report["settings"]["pretrain"]["epochs"], 1);
    let charts = d.join("charts");
    ok(&["report", "--sweep", s(&out.join("sweep.json")), "--out", s(&charts)]);
    assert!(charts.join("sweep.png").exists());
}
