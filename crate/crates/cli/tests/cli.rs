use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use osp_core::{load_tensor, save_tensor, Tensor4D};
use serde_json::Value;

fn osp(args: &[&str]) -> Output {
    osp_env(args, None)
}

fn osp_env(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_osp"));
    cmd.args(args).env_remove("OSP_SEED");
    if let Some(s) = seed {
        cmd.env("OSP_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn jsonl(out: &Output) -> Vec<Value> {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage() {
    let out = osp(&[]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stderr) + String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"));
}

#[test]
fn unknown_command_is_usage_error() {
    assert_eq!(osp(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(osp(&["bucket", "plan", "--max-token", "lots"]).status.code(), Some(2));
}

#[test]
fn domain_error_is_json_on_stderr() {
    let out = osp(&["bucket", "plan", "--max-token", "65536", "--ratios", "2:4"]);
    assert_eq!(out.status.code(), Some(2), "non-coprime ratio is rejected while parsing");
    let out = osp(&["skiparse", "plan", "--grid", "1,1,10", "--k", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "skiparse");
    assert!(err["error"]["message"].as_str().unwrap().contains("sparse ratio"));
}

#[test]
fn bucket_plan_and_assign() {
    let dir = tempfile::tempdir().unwrap();
    let plan = json(&osp(&["bucket", "plan", "--max-token", "65536", "--stride", "16", "--ratios", "1:1,3:4,9:16"]));
    assert_eq!(plan["min_token"], 36864);
    let plan_path = dir.path().join("plan.json");
    fs::write(&plan_path, serde_json::to_string(&plan).unwrap()).unwrap();
    let samples = dir.path().join("samples.jsonl");
    fs::write(
        &samples,
        concat!(
            r#"{"id": "wide", "height": 1080, "width": 1920, "frames": 120}"#,
            "\n",
            r#"{"id": 7, "height": 300, "width": 300, "frames": 40}"#,
            "\n",
            r#"{"id": "tiny", "height": 100, "width": 100, "frames": 40}"#,
            "\n"
        ),
    )
    .unwrap();
    let rows = jsonl(&osp(&["bucket", "assign", "--plan", p(&plan_path), "--samples", p(&samples)]));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["bucket"]["height"], 144);
    assert_eq!(rows[0]["bucket"]["width"], 256);
    assert_eq!(rows[0]["bucket"]["frames"], 93);
    assert_eq!(rows[1]["id"], "7");
    assert_eq!(rows[1]["bucket"]["height"], 256);
    assert_eq!(rows[2]["rejected"], "too-small");

    let as_array = json(&osp(&["--format", "json", "bucket", "assign", "--plan", p(&plan_path), "--samples", p(&samples)]));
    assert_eq!(as_array.as_array().unwrap().len(), 3);
}

#[test]
fn batches_are_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let plan_path = dir.path().join("plan.json");
    let plan = osp(&["bucket", "plan", "--max-token", "65536"]);
    fs::write(&plan_path, &plan.stdout).unwrap();
    let samples = dir.path().join("samples.jsonl");
    let lines: String = (0..40)
        .map(|i| format!("{{\"id\": \"s{i}\", \"height\": 720, \"width\": {}, \"frames\": 93}}\n", if i % 2 == 0 { 720 } else { 1280 }))
        .collect();
    fs::write(&samples, lines).unwrap();
    let args = |seed: &'static str| {
        vec!["--seed", seed, "bucket", "batches", "--plan", p(&plan_path), "--samples", p(&samples), "--global-batch", "4"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>()
    };
    let run = |seed| {
        let a = args(seed);
        osp(&a.iter().map(String::as_str).collect::<Vec<_>>()).stdout
    };
    assert_eq!(run("3"), run("3"));
    assert_ne!(run("3"), run("4"));
    let out: Value = serde_json::from_slice(&run("3")).unwrap();
    assert_eq!(out["batches"].as_array().unwrap().len(), 10);
}

#[test]
fn env_seed_overrides_flag() {
    let base = ["gradguard", "simulate", "--steps", "30", "--workers", "4"];
    let with = |seed: &'static str| [&["--seed", seed], &base[..]].concat();
    let flag2 = osp(&with("2")).stdout;
    let env2 = osp_env(&with("1"), Some("2")).stdout;
    assert_eq!(flag2, env2);
    assert_ne!(osp(&with("1")).stdout, flag2);
    assert_eq!(osp_env(&with("1"), Some("nope")).status.code(), Some(2));
}

#[test]
fn gradguard_simulate_trace() {
    let rows = jsonl(&osp(&["gradguard", "simulate", "--workers", "8", "--steps", "1000", "--inject", "600:3:100.0", "--seed", "7"]));
    assert_eq!(rows.len(), 1000);
    let discards: Vec<u64> = rows.iter().filter(|r| r["discarded"] != 0).map(|r| r["step"].as_u64().unwrap()).collect();
    assert_eq!(discards, vec![600]);
    for key in ["loss", "discarded", "upper_bound", "max_norm", "max_norm_var", "post_discard_max", "ema_gn", "ema_var"] {
        assert!(rows[500].get(key).is_some(), "missing {key}");
    }

    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let lines: String = (0..150).map(|s| format!("{{\"step\": {s}, \"norms\": [1.0, 1.0, 1.0]}}\n")).collect();
    fs::write(&trace, lines).unwrap();
    let rows = jsonl(&osp(&["gradguard", "simulate", "--trace", p(&trace), "--inject", "120:0:9.0"]));
    assert_eq!(rows[120]["flagged"], serde_json::json!([0]));
    assert_eq!(rows[120]["survivor_scale"], 1.5);
}

#[test]
fn gradguard_judge() {
    let out = json(&osp(&["gradguard", "judge", "--ema-gn", "1.0", "--ema-var", "0.01", "--norms", "1,1,1,5"]));
    assert_eq!(out["verdict"]["m"], 3);
    assert_eq!(out["verdict"]["normal"], serde_json::json!([true, true, true, false]));
}

#[test]
fn wavelet_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.ospt");
    let x = Tensor4D::from_fn([2, 8, 16, 16], |c, t, h, w| ((c * 7 + t * 5 + h * 3 + w) % 11) as f32 - 5.0).unwrap();
    save_tensor(&x, &input).unwrap();
    let pyr = dir.path().join("pyr");
    let summary = json(&osp(&["wavelet", "decompose", "--input", p(&input), "--out", p(&pyr)]));
    assert_eq!(summary["schedule"], serde_json::json!(["3d", "3d", "2d"]));
    assert!(pyr.join("manifest.json").exists());
    let output = dir.path().join("y.ospt");
    json(&osp(&["wavelet", "reconstruct", "--pyramid", p(&pyr), "--out", p(&output)]));
    let y = load_tensor(&output).unwrap();
    assert!(x.max_abs_diff(&y).unwrap() <= 1e-5);

    let report = json(&osp(&["wavelet", "verify", "--input", p(&input), "--schedule", "3d,2d"]));
    assert_eq!(report["pass"], true);
    let report = json(&osp(&["wavelet", "verify", "--dims", "1,4,8,8"]));
    assert_eq!(report["pass"], true);
    assert_eq!(osp(&["wavelet", "verify", "--dims", "1,3,8,8"]).status.code(), Some(1));
}

#[test]
fn stream_commands() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.ospt");
    let x = Tensor4D::from_fn([1, 9, 2, 2], |_, t, h, w| (t * 4 + h * 2 + w) as f32).unwrap();
    save_tensor(&x, &input).unwrap();
    let report = json(&osp(&["stream", "verify-lossless", "--input", p(&input), "--kernel", "3", "--chunk", "4"]));
    assert_eq!(report["identical"], true);
    assert_eq!(report["cache_sizes"], serde_json::json!([2]));
    let out = dir.path().join("y.ospt");
    let run = json(&osp(&["stream", "run", "--input", p(&input), "--out", p(&out), "--taps", "0,0,1", "--chunk", "2"]));
    assert_eq!(run["chunks"], 4);
    // Taps [0, 0, 1] select the current frame.
    assert!(load_tensor(&out).unwrap().bit_eq(&x));
    let cache = json(&osp(&["stream", "cache-size", "--kernel", "1", "--stride", "2", "--chunk", "2", "--m", "1"]));
    assert_eq!(cache["raw"], -1);
    assert_eq!(cache["cache_size"], 0);
}

#[test]
fn skiparse_plan_binary_files() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("idx");
    let out = json(&osp(&["skiparse", "plan", "--grid", "1,3,4", "--k", "2", "--bin-dir", p(&bin)]));
    assert_eq!(out["single_perm"], serde_json::json!([0, 6, 1, 7, 2, 8, 3, 9, 4, 10, 5, 11]));
    let bytes = fs::read(bin.join("group_gather.u32")).unwrap();
    assert_eq!(bytes.len(), 4 * out["group_gather"].as_array().unwrap().len());
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
}

#[test]
fn skiparse_analyze_and_rope() {
    let out = json(&osp(&["skiparse", "analyze", "--grid", "2,4,4", "--k", "2", "--mechanism", "skiparse", "--brute-force"]));
    assert!((out["ad_avg_brute"].as_f64().unwrap() - out["ad_avg_closed_exact"].as_f64().unwrap()).abs() < 1e-12);
    assert_eq!(out["bundle_stats"]["bundles"], 2);
    let out = json(&osp(&["skiparse", "analyze", "--grid", "24,32,32", "--mechanism", "2+1d"]));
    assert_eq!(out["ad_avg_closed"], 1.957);
    let rope = json(&osp(&["skiparse", "rope-check", "--axes", "2", "--dim", "32"]));
    assert_eq!(rope["pass"], true);
}

#[test]
fn curate_commands() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.jsonl");
    let lines: String = (0..100)
        .map(|i| format!("{{\"index\": {}, \"value\": {}}}\n", i + 1, if i == 42 { 0.5 } else { 0.05 }))
        .collect();
    fs::write(&series, lines).unwrap();

    let cuts = json(&osp(&["curate", "cuts", "--series", p(&series)]));
    assert_eq!(cuts["cut_indices"], serde_json::json!([42]));
    assert_eq!(cuts["cut_frames"], serde_json::json!([43]));

    let verdict = json(&osp(&["curate", "--series", p(&series), "--frames", "101"]));
    assert_eq!(verdict["kept"], true);
    assert_eq!(verdict["segments"].as_array().unwrap().len(), 2);
    let same = json(&osp(&["curate", "clip", "--series", p(&series), "--frames", "101"]));
    assert_eq!(verdict, same);

    let th = dir.path().join("th.json");
    fs::write(&th, r#"{"l_threshold": 0.6, "z_threshold2": 50.0}"#).unwrap();
    let cuts = json(&osp(&["curate", "cuts", "--series", p(&series), "--thresholds", p(&th)]));
    assert_eq!(cuts["cut_indices"], serde_json::json!([]));

    let short = json(&osp(&["curate", "clip", "--series", p(&series), "--frames", "20"]));
    assert_eq!(short["reasons"], serde_json::json!(["frame-bounds"]));
    assert_eq!(osp(&["curate", "clip", "--series", p(&series)]).status.code(), Some(1));

    let motion = json(&osp(&["curate", "motion", "--series", p(&series)]));
    assert_eq!(motion["kept"], true);

    let boxes = dir.path().join("boxes.json");
    fs::write(&boxes, r#"[{"x0": 0, "y0": 972, "x1": 1920, "y1": 1080}]"#).unwrap();
    let crop = json(&osp(&["curate", "crop", "--height", "1080", "--width", "1920", "--boxes", p(&boxes)]));
    assert_eq!(crop["height"], 972);

    let slices = json(&osp(&["curate", "slice", "--duration", "40"]));
    assert_eq!(slices.as_array().unwrap().len(), 3);

    let input = dir.path().join("x.ospt");
    let x = Tensor4D::from_fn([1, 40, 2, 2], |_, t, _, _| if t < 20 { 0.1 } else { 0.9 }).unwrap();
    save_tensor(&x, &input).unwrap();
    let v = json(&osp(&["curate", "clip", "--tensor", p(&input)]));
    assert_eq!(v["cut_frames"], serde_json::json!([20]));
}
