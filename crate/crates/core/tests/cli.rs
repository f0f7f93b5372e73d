use std::path::Path;
use std::process::{Command, Output};

fn adavar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adavar"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("error line is JSON")
}

#[test]
fn gradcheck_passes_on_rastrigin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"objective": {"c": 0.01, "dim": 5}}"#);
    let out = adavar(&["gradcheck", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["max_relative_error"].as_f64().unwrap() < 1e-6);
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let out = adavar(&["run", "--config", missing.to_str().unwrap(), "--out", "unused"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "config");
    assert!(!Path::new("unused").exists());
}

#[test]
fn unknown_key_reports_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"schedule": {"kind": "practical", "sigma_hi": 3}}"#);
    let out = adavar(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["field"], "schedule.sigma_hi");
}

#[test]
fn invalid_value_reports_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"schedule": {"quantile": 0.0}}"#);
    let out = adavar(&["bench", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert!(err["field"].as_str().unwrap().starts_with("schedule"), "{err}");
}

#[test]
fn same_seed_gives_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"solver": {"iterations": 300}}"#);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let res = adavar(&["run", "--config", &cfg, "--seed", "7", "--coords", "--out", out.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let ta = std::fs::read(a.join("trace.csv")).unwrap();
    assert_eq!(ta, std::fs::read(b.join("trace.csv")).unwrap());
    assert_eq!(String::from_utf8(ta).unwrap().lines().count(), 302);
    assert_eq!(listing(&a), ["VERSION", "config.json", "trace.csv"]);
}

#[test]
fn flags_override_config_in_effective_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"seed": 1, "experiment": {"runs": 50}}"#);
    let out = dir.path().join("o");
    let res = adavar(&[
        "bench", "--config", &cfg, "--seed", "11", "--runs", "4", "--eps", "0.1", "--iterations", "200", "--jobs",
        "1", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(listing(&out), ["VERSION", "config.json", "curve_best.csv", "curve_current.csv"]);
    let eff: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(eff["seed"], 11);
    assert_eq!(eff["experiment"]["runs"], 4);
    assert_eq!(eff["experiment"]["eps"], 0.1);
    assert_eq!(eff["solver"]["iterations"], 200);
    assert_eq!(eff["schedule"]["sigma_high"], 20.0);
    let curve = std::fs::read_to_string(out.join("curve_current.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("checkpoint,failure_fraction,wilson_lo,wilson_hi"));
    assert_eq!(lines.last().unwrap().split(',').next(), Some("200"));
}

#[test]
fn estimate_commands_write_their_formats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"estimation": {"levels": [0.25, 0.85], "warmup": 200, "m": 20, "rounds": 2}}"#,
    );
    let lv = dir.path().join("lv");
    let res = adavar(&["estimate-levelset", "--config", &cfg, "--samples", "5000", "--out", lv.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(lv.join("levelset.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "level,f_hat,samples_used,provenance");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].ends_with(",5000,iid_uniform"));
    assert_eq!(listing(&lv), ["VERSION", "config.json", "levelset.csv"]);

    let cv = dir.path().join("cv");
    let res = adavar(&["estimate-curvature", "--config", &cfg, "--samples", "5000", "--out", cv.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(cv.join("curvature.json")).unwrap()).unwrap();
    let rounds = json["rounds"].as_array().unwrap();
    assert_eq!(rounds.len(), 2);
    for (i, r) in rounds.iter().enumerate() {
        assert_eq!(r["l"], i + 1);
        let (b1, b2) = (r["b1_hat"].as_f64().unwrap(), r["b2_hat"].as_f64().unwrap());
        assert!(b1 > 0.0 && b1 <= b2);
    }
}

#[test]
fn exhausted_curvature_stream_keeps_completed_rounds_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"estimation": {"warmup": 100, "m": 50, "rounds": 5}}"#);
    let cv = dir.path().join("cv");
    let res = adavar(&["estimate-curvature", "--config", &cfg, "--samples", "260", "--out", cv.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(stderr_json(&res)["error"], "estimation");
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(cv.join("curvature.json")).unwrap()).unwrap();
    let done = json["rounds"].as_array().unwrap().len();
    assert!((1..5).contains(&done), "{done} rounds");
}

#[test]
fn occupancy_requires_one_dimension_and_writes_masses() {
    let dir = tempfile::tempdir().unwrap();
    let out = adavar(&["occupancy", "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"objective": {"dim": 1}, "domain": {"low": 0.0, "high": 4.0},
            "solver": {"variant": "gradient_free", "iterations": 20000}}"#,
    );
    let oc = dir.path().join("oc");
    let res = adavar(&["occupancy", "--config", &cfg, "--bins", "16", "--out", oc.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(oc.join("occupancy.csv")).unwrap();
    let masses: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(masses.len(), 16);
    assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(listing(&oc), ["VERSION", "config.json", "occupancy.csv"]);
}
