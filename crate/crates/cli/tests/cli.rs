use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const ROTATION_TOLERANCE_RAD: f64 = 1e-6;

fn liftpose(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liftpose"))
        .current_dir(dir)
        .env_remove("LIFTPOSE_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = liftpose(dir, args);
    assert!(
        out.status.success(),
        "liftpose {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn schema_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../schemas")
        .join(name)
}

fn assert_valid(schema: &str, document: impl AsRef<Path>) {
    let validator = jsonschema::validator_for(&json(schema_path(schema))).unwrap();
    let doc = json(&document);
    let errors: Vec<String> = validator
        .iter_errors(&doc)
        .map(|e| e.to_string())
        .take(5)
        .collect();
    assert!(
        errors.is_empty(),
        "{} against {schema}: {errors:?}",
        document.as_ref().display()
    );
}

fn synth(dir: &Path, frames: &str, noise: &str) {
    ok(
        dir,
        &[
            "synth",
            "--frames",
            frames,
            "--views",
            "2",
            "--noise",
            noise,
            "--seed",
            "3",
            "--scene-out",
            "scene.json",
            "--keypoints-out",
            "kp.json",
            "--gt-out",
            "gt.json",
        ],
    );
}

#[test]
fn synth_is_deterministic_and_echoes_its_config() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), "270", "1");
    synth(b.path(), "270", "1");
    for f in ["scene.json", "kp.json", "gt.json", "kp.json.manifest.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let kp = json(a.path().join("kp.json"));
    let views = kp["views"].as_array().unwrap();
    assert_eq!(views.len(), 2);
    for v in views {
        assert_eq!(v["frames"].as_array().unwrap().len(), 270);
    }
    assert_valid("keypoints.schema.json", a.path().join("kp.json"));
    assert_valid("scene.schema.json", a.path().join("scene.json"));
    assert_valid("poses.schema.json", a.path().join("gt.json"));
    assert_valid(
        "manifest.schema.json",
        a.path().join("kp.json.manifest.json"),
    );
}

#[test]
fn noiseless_synth_has_full_confidence() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "20", "0");
    let kp = json(dir.path().join("kp.json"));
    for view in kp["views"].as_array().unwrap() {
        for frame in view["frames"].as_array().unwrap() {
            for joint in frame.as_array().unwrap() {
                assert_eq!(joint[2].as_f64().unwrap(), 1.0);
            }
        }
    }
}

#[test]
fn noiseless_calibration_matches_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "270", "0");
    ok(
        dir.path(),
        &[
            "calibrate",
            "--keypoints",
            "kp.json",
            "--out",
            "cal.json",
            "--oracle",
            "scene.json",
        ],
    );
    assert_valid("calibration.schema.json", dir.path().join("cal.json"));
    let report = json(dir.path().join("cal.json"));
    let oracle = report["oracle"].as_array().unwrap();
    assert_eq!(oracle.len(), 1);
    let err = oracle[0]["rotation_error_rad"].as_f64().unwrap();
    assert!(err < ROTATION_TOLERANCE_RAD, "rotation error {err}");
}

#[test]
fn single_view_calibration_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "synth",
            "--frames",
            "30",
            "--views",
            "1",
            "--scene-out",
            "s.json",
            "--keypoints-out",
            "kp.json",
        ],
    );
    let out = liftpose(
        dir.path(),
        &["calibrate", "--keypoints", "kp.json", "--out", "cal.json"],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!dir.path().join("cal.json").exists());
}

#[test]
fn invalid_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"bogus": 1}"#).unwrap();
    let args = [
        "synth",
        "--frames",
        "10",
        "--scene-out",
        "s.json",
        "--keypoints-out",
        "k.json",
    ];
    let out = liftpose(dir.path(), &[&["--config", "bad.json"], &args[..]].concat());
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_liftpose"))
        .current_dir(dir.path())
        .env("LIFTPOSE_CONFIG", "bad.json")
        .args(args)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = liftpose(
        dir.path(),
        &[
            "synth",
            "--frames",
            "0",
            "--scene-out",
            "s.json",
            "--keypoints-out",
            "k.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = liftpose(
        dir.path(),
        &[
            "synth",
            "--frames",
            "ten",
            "--scene-out",
            "s.json",
            "--keypoints-out",
            "k.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_from_environment_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"scene": {"frames": 12, "views": 3}}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_liftpose"))
        .current_dir(dir.path())
        .env("LIFTPOSE_CONFIG", "cfg.json")
        .args([
            "synth",
            "--views",
            "2",
            "--scene-out",
            "s.json",
            "--keypoints-out",
            "k.json",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let kp = json(dir.path().join("k.json"));
    assert_eq!(kp["views"].as_array().unwrap().len(), 2);
    assert_eq!(kp["views"][0]["frames"].as_array().unwrap().len(), 12);
    let manifest = json(dir.path().join("k.json.manifest.json"));
    let args: Vec<&str> = manifest["args"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap())
        .collect();
    assert!(args.windows(2).any(|w| w == ["--config", "cfg.json"]));
    assert_eq!(manifest["inputs"][0]["path"], "cfg.json");
}

#[test]
fn eval_of_ground_truth_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "15", "1");
    ok(
        dir.path(),
        &[
            "eval", "--pred", "gt.json", "--gt", "gt.json", "--report", "rep.json",
        ],
    );
    let report = json(dir.path().join("rep.json"));
    for key in ["mpjpe", "nmpjpe", "pmpjpe"] {
        assert!(
            report[key].as_f64().unwrap().abs() < 1e-9,
            "{key} = {}",
            report[key]
        );
    }
    assert_eq!(report["frames"], 15);
}

fn pipeline(dir: &Path) {
    synth(dir, "120", "1");
    ok(
        dir,
        &["calibrate", "--keypoints", "kp.json", "--out", "cal.json"],
    );
    ok(
        dir,
        &[
            "triangulate",
            "--keypoints",
            "kp.json",
            "--calibration",
            "cal.json",
            "--out",
            "pgt.json",
        ],
    );
    ok(
        dir,
        &[
            "train",
            "--keypoints",
            "kp.json",
            "--pseudo-gt",
            "pgt.json",
            "--window",
            "5",
            "--epochs",
            "2",
            "--hidden",
            "8",
            "--width",
            "16",
            "--batch-size",
            "16",
            "--max-steps-per-epoch",
            "3",
            "--checkpoint-out",
            "model.json",
        ],
    );
    ok(
        dir,
        &[
            "infer",
            "--checkpoint",
            "model.json",
            "--keypoints",
            "kp.json",
            "--view",
            "0",
            "--out",
            "pred.json",
        ],
    );
    ok(
        dir,
        &[
            "eval",
            "--pred",
            "pred.json",
            "--gt",
            "gt.json",
            "--report",
            "rep.json",
            "--loss-breakdown",
            "model.json.history.csv",
        ],
    );
}

#[test]
fn full_pipeline_emits_an_eval_report_and_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);
    assert_valid("pseudo_gt.schema.json", d.join("pgt.json"));
    assert_valid("checkpoint.schema.json", d.join("model.json"));
    assert_valid("checkpoint.schema.json", d.join("model.json.camera.json"));
    assert_valid("poses.schema.json", d.join("pred.json"));
    assert_valid("eval_report.schema.json", d.join("rep.json"));
    let report = json(d.join("rep.json"));
    assert_eq!(report["frames"], 120);
    assert!(report["pmpjpe"].as_f64().unwrap() <= report["nmpjpe"].as_f64().unwrap() + 1e-9);
    assert_eq!(
        report["config"]["loss_history"].as_array().unwrap().len(),
        2
    );

    let outputs = [
        "kp.json",
        "scene.json",
        "gt.json",
        "cal.json",
        "pgt.json",
        "model.json",
        "model.json.camera.json",
        "model.json.history.csv",
        "pred.json",
        "rep.json",
    ];
    let manifests = [
        "kp.json",
        "cal.json",
        "pgt.json",
        "model.json",
        "pred.json",
        "rep.json",
    ];
    for m in manifests {
        assert_valid("manifest.schema.json", d.join(format!("{m}.manifest.json")));
    }
    let before: Vec<Vec<u8>> = outputs
        .iter()
        .map(|f| std::fs::read(d.join(f)).unwrap())
        .collect();
    for f in outputs {
        std::fs::remove_file(d.join(f)).unwrap();
    }
    for m in manifests {
        ok(d, &["replay", &format!("{m}.manifest.json")]);
    }
    for (f, bytes) in outputs.iter().zip(&before) {
        assert_eq!(
            &std::fs::read(d.join(f)).unwrap(),
            bytes,
            "{f} differs after replay"
        );
    }
}

#[test]
fn replay_refuses_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "15", "1");
    ok(
        dir.path(),
        &[
            "eval", "--pred", "gt.json", "--gt", "gt.json", "--report", "rep.json",
        ],
    );
    std::fs::write(dir.path().join("gt.json"), "[]").unwrap();
    let out = liftpose(dir.path(), &["replay", "rep.json.manifest.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn triangulation_only_training_leaves_reprojection_column_empty() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "60", "1");
    ok(
        d,
        &["calibrate", "--keypoints", "kp.json", "--out", "cal.json"],
    );
    ok(
        d,
        &[
            "triangulate",
            "--keypoints",
            "kp.json",
            "--calibration",
            "cal.json",
            "--out",
            "pgt.json",
        ],
    );
    ok(
        d,
        &[
            "train",
            "--keypoints",
            "kp.json",
            "--pseudo-gt",
            "pgt.json",
            "--loss",
            "triang",
            "--window",
            "3",
            "--epochs",
            "2",
            "--hidden",
            "4",
            "--width",
            "8",
            "--max-steps-per-epoch",
            "2",
            "--checkpoint-out",
            "m.json",
        ],
    );
    let csv = std::fs::read_to_string(d.join("m.json.history.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,L_T,L_R,total"));
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 4);
        assert!(cells[1].parse::<f64>().is_ok());
        assert_eq!(cells[2], "");
        assert_eq!(cells[1], cells[3]);
    }
}

#[test]
fn adversarial_training_writes_its_loss_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "40", "1");
    ok(
        d,
        &[
            "train",
            "--mode",
            "adversarial",
            "--keypoints",
            "kp.json",
            "--views",
            "0",
            "--real-poses",
            "gt.json",
            "--window",
            "3",
            "--epochs",
            "1",
            "--hidden",
            "4",
            "--width",
            "8",
            "--steps-per-epoch",
            "2",
            "--checkpoint-out",
            "adv.json",
        ],
    );
    assert_valid("checkpoint.schema.json", d.join("adv.json"));
    let csv = std::fs::read_to_string(d.join("adv.json.history.csv")).unwrap();
    assert!(csv.starts_with("epoch,L_R,L_advG,total\n"));
    assert_eq!(csv.lines().count(), 2);
}
