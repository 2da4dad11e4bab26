use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join(name)
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_starhum"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn small(extra: Value) -> Value {
    let mut v = serde_json::json!({
        "lengths": [1.0, 1.0, 1.0],
        "elements_per_edge": 2,
        "n_steps": 200,
        "T": 0.1
    });
    for (k, x) in extra.as_object().unwrap() {
        v[k] = x.clone();
    }
    v
}

#[test]
fn validate_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["validate"], &data("data/unit_star.json"), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got = std::fs::read(dir.path().join("validate.json")).unwrap();
    let want = std::fs::read(data("golden/validate.json")).unwrap();
    assert_eq!(got, want);
}

#[test]
fn violations_exit_nonzero_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", &small(serde_json::json!({ "alphas": [1.0, 2.0] })));
    for cmd in ["validate", "simulate", "observe", "control", "identity"] {
        let o = run(&[cmd], &bad, &dir.path().join(cmd));
        assert_eq!(o.status.code(), Some(2), "{cmd}");
    }
    let report = read_json(&dir.path().join("validate").join("validate.json"));
    assert_eq!(report["valid"], Value::Bool(false));
    assert_eq!(report["violations"].as_array().unwrap().len(), 2);

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ \"lengths\": [1, 1, 1], ").unwrap();
    assert_eq!(run(&["validate"], &broken, dir.path()).status.code(), Some(1));
    let unknown = write_config(dir.path(), "unknown.json", &small(serde_json::json!({ "colour": 1 })));
    assert_eq!(run(&["simulate"], &unknown, dir.path()).status.code(), Some(1));
}

#[test]
fn simulate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let zero = write_config(dir.path(), "zero.json", &small(serde_json::json!({})));
    let o = run(&["simulate"], &zero, &dir.path().join("zero"));
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("zero/trajectory.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(f[3].parse::<f64>().unwrap(), 0.0);
    }

    let mode = write_config(
        dir.path(),
        "mode.json",
        &small(serde_json::json!({ "initial": { "kind": "eigenmode", "index": 2, "amplitude": [0.0, 2.0] } })),
    );
    assert!(run(&["simulate"], &mode, &dir.path().join("mode")).status.success());
    let c = read_json(&dir.path().join("mode/conservation.json"));
    for key in ["max_mass_drift", "max_energy_drift", "max_gram_drift"] {
        assert!(c[key].as_f64().unwrap() <= 1e-10, "{key}");
    }
    assert!(!dir.path().join("mode/controls.csv").exists());

    let forced = write_config(
        dir.path(),
        "forced.json",
        &small(serde_json::json!({ "controls": [{ "edge": 3, "omega": 20.0, "amplitude": [0.5, 0.0] }] })),
    );
    assert!(run(&["simulate"], &forced, &dir.path().join("forced")).status.success());
    let echo = std::fs::read_to_string(dir.path().join("forced/controls.csv")).unwrap();
    assert!(echo.starts_with("time,edge,real,imag"));
    assert_eq!(echo.lines().count(), 1 + 2 * 201);
}

#[test]
fn observe_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "obs.json",
        &small(serde_json::json!({ "n_steps": 20000, "T": 1.0, "seed": 4 })),
    );
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        assert!(run(&["observe"], &cfg, &out).status.success());
        outputs.push(std::fs::read(out.join("gramian.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let d: Value = serde_json::from_slice(&outputs[0]).unwrap();
    for key in ["lambda_min", "lambda_max", "c_theory", "one_over_c_theory", "iterations", "T", "T_min", "epsilon"] {
        assert!(d.get(key).is_some(), "{key}");
    }
    // below the minimal time: no constant
    assert!(d["c_theory"].is_null());
    let other = dir.path().join("seeded");
    assert!(run(&["observe", "--seed", "9"], &cfg, &other).status.success());
    let e = read_json(&other.join("gramian.json"));
    let (a, b) = (d["lambda_max"].as_f64().unwrap(), e["lambda_max"].as_f64().unwrap());
    assert!((a - b).abs() <= 1e-8 * a);
}

#[test]
fn control_steers_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ctl.json",
        &small(serde_json::json!({
            "n_steps": 200000,
            "T": null,
            "T_factor": 1.2,
            "initial": { "kind": "gaussian_bump", "edge": 2, "center": 0.5, "width": 0.2 },
            "target": { "kind": "sum", "terms": [
                { "kind": "gaussian_bump", "edge": 1, "center": -0.5, "width": 0.2, "amplitude": [0.0, 1.0] },
                { "kind": "eigenmode", "index": 0 }
            ] }
        })),
    );
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let o = run(&["control"], &cfg, &out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((
            std::fs::read(out.join("hum.json")).unwrap(),
            std::fs::read(out.join("controls.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let s: Value = serde_json::from_slice(&outputs[0].0).unwrap();
    assert!(s["steering_error_M"].as_f64().unwrap() <= 1e-6);
    assert!(s["cg_residual"].as_f64().unwrap() <= 1e-8);
    assert!(s["control_energy"].as_f64().unwrap() > 0.0);
}

#[test]
fn identity_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "id.json",
        &small(serde_json::json!({
            "elements_per_edge": 8,
            "n_steps": 500,
            "T": 0.05,
            "initial": { "kind": "eigenmode", "index": 0 }
        })),
    );
    assert!(run(&["identity"], &cfg, dir.path()).status.success());
    let r = read_json(&dir.path().join("identity.json"));
    let ids = r["identities"].as_array().unwrap();
    assert_eq!(ids.len(), 2);
    assert_eq!(ids[0]["multiplier"]["kind"], "constant_one");
    assert_eq!(ids[1]["multiplier"]["kind"], "coordinate_x");
    for e in ids {
        assert_eq!(e["report"]["terms"].as_object().unwrap().len(), 17);
        assert!(e["report"]["relative_residual"].as_f64().unwrap().is_finite());
    }
    assert!(r["vertex_balance"]["uncontrolled_tip"].is_number());
}
