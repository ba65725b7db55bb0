use std::path::Path;
use std::process::{Command, Output};

fn patchgraph(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchgraph"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = patchgraph(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const DATA: [&str; 6] = [
    "--features_dir",
    "data/features",
    "--coords_dir",
    "data/coords",
    "--labels",
    "data/labels.csv",
];

fn with_data<'a>(command: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![command];
    args.extend_from_slice(&DATA);
    args.extend_from_slice(&["--output_dir", "out", "--folds", "3"]);
    args.extend_from_slice(extra);
    args
}

fn synth(cwd: &Path) {
    ok(
        &["synth", "--out", "data", "--n-patients", "24", "--grid-side", "5", "--feature-dim", "6"],
        cwd,
    );
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    synth(cwd);
    for f in ["labels.csv", "truth.csv", "synthetic_spec.json"] {
        assert!(cwd.join("data").join(f).is_file(), "{f}");
    }

    let small = ["--d_model", "8", "--d_attn", "8", "--epochs", "2", "--accumulation_steps", "4"];
    ok(&with_data("train", &small), cwd);
    for f in ["folds.csv", "training.json", "models/fold_0.ckpt", "models/fold_2.ckpt"] {
        assert!(cwd.join("out").join(f).is_file(), "{f}");
    }

    let stdout = ok(&with_data("eval", &[]), cwd);
    assert!(stdout.contains("c-Index"), "{stdout}");
    let predictions = std::fs::read_to_string(cwd.join("out/predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 25);
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cwd.join("out/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["per_fold"].as_array().unwrap().len(), 3);

    let stdout = ok(&["stratify", "--output_dir", "out"], cwd);
    assert!(stdout.contains("p-value"), "{stdout}");
    let km = std::fs::read_to_string(cwd.join("out/km.csv")).unwrap();
    assert!(km.starts_with("time,S,group\n"));
    assert!(std::fs::read_to_string(cwd.join("out/km.svg")).unwrap().starts_with("<svg"));

    ok(&with_data("attention", &["--patient", "synth-0003"]), cwd);
    let attention = std::fs::read_to_string(cwd.join("out/attention/synth-0003.csv")).unwrap();
    assert!(attention.starts_with("patch_id,slide_id,x,y,attention\n"), "{attention}");
    assert_eq!(attention.lines().count(), 26);
    assert!(cwd.join("out/attention/synth-0003.pgm").is_file());

    ok(&with_data("build-graph", &[]), cwd);
    assert!(cwd.join("out/graphs/synth-0000.edges.csv").is_file());
    let info = ok(&with_data("graph-info", &["--patient", "synth-0000"]), cwd);
    let info: serde_json::Value = serde_json::from_str(&info).unwrap();
    assert_eq!(info[0]["n_nodes"], 25);
}

#[test]
fn config_file_and_equals_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    synth(cwd);
    std::fs::write(
        cwd.join("run.json"),
        r#"{"d_model": 8, "d_attn": 8, "epochs": 1, "folds": 2,
            "features_dir": "data/features", "coords_dir": "data/coords",
            "labels": "data/labels.csv", "output_dir": "elsewhere"}"#,
    )
    .unwrap();
    ok(&["train", "--config", "run.json", "--output-dir=out2", "--zero_layers", "true"], cwd);
    assert!(cwd.join("out2/models/fold_1.ckpt").is_file());
    assert!(!cwd.join("elsewhere").exists());
}

#[test]
fn unknown_override_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = patchgraph(&["train", "--epoch", "3"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("\"epoch\""), "{}", stderr(&out));
}

#[test]
fn invalid_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = patchgraph(&["train", "--folds", "1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("folds"));

    let out = patchgraph(&["train", "--learning_rate", "fast"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("learning_rate"));

    let out = patchgraph(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_file_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"seed": 1, "lr": 0.1}"#).unwrap();
    let out = patchgraph(&["train", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("lr"), "{}", stderr(&out));
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = patchgraph(&["train", "--labels", "nope.csv", "--features_dir", "f", "--coords_dir", "c"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.csv"));

    let out = patchgraph(&["train"], dir.path());
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("labels") || stderr(&out).contains("features_dir"));
}

#[test]
fn segment_writes_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    // 16x8 thumbnail at downsample 32: two 8x8 blocks per 256 px patch
    // row; the left half is tissue.
    let (w, h) = (16usize, 8usize);
    let mut pgm = format!("P5\n{w} {h}\n255\n").into_bytes();
    for _y in 0..h {
        for x in 0..w {
            pgm.push(if x < 8 { 200 } else { 10 });
        }
    }
    std::fs::write(cwd.join("thumb.pgm"), pgm).unwrap();
    ok(&["segment", "--raster", "thumb.pgm", "--slide-id", "s1", "--out", "coords.csv", "--first-id", "100"], cwd);
    let coords = std::fs::read_to_string(cwd.join("coords.csv")).unwrap();
    let rows: Vec<&str> = coords.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{coords}");
    assert!(rows[0].starts_with("100,s1,0,0"), "{coords}");
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["gradcheck", "--seeds", "2", "--output_dir", "."], dir.path());
    assert!(stdout.contains("PASS"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("gradcheck.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}
