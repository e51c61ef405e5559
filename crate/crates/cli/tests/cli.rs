use std::path::Path;
use std::process::{Command, Output};

fn nrgs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nrgs"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run nrgs")
}

fn small_config(dir: &Path, noise_rate: f64, epochs: usize) -> String {
    let path = dir.join("config.in.json");
    let text = format!(
        r#"{{
  "synth": {{ "n_gaussians": 1000, "n_classes": 2, "n_views": 8, "image_width": 64, "image_height": 64,
             "feature_dim": 16, "noise_rate": {noise_rate} }},
  "train": {{ "epochs": {epochs} }}
}}"#
    );
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn metric(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from:\n{stdout}"))
        .parse()
        .unwrap()
}

#[test]
fn clean_pipeline_segments_well() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 0.0, 40);
    let out = dir.path().join("run");
    let o = nrgs(&["pipeline", "--config", &config, "--seed", "3", "--out", out.to_str().unwrap(), "--threads", "1"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(metric(&stdout, "eval.miou") >= 0.95, "{stdout}");
    for f in ["scene.ply", "cameras.json", "truth.nrgg", "lifted/g2.nrgf", "regularized/regularizer.nrgm", "eval/report.txt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn repeated_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 0.3, 3);
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = nrgs(&["pipeline", "--config", &config, "--seed", "11", "--out", out.to_str().unwrap(), "--threads", "1"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(out.join("eval/report.txt")).unwrap();
        reports.push(text.replace(out.to_str().unwrap(), "RUN"));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn missing_feature_map_exits_with_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 0.3, 1);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    assert!(nrgs(&["synth", "--config", &config, "--out", out_s]).status.success());
    let victim = out.join("features/v002_g1.nrgt");
    std::fs::remove_file(&victim).unwrap();
    let o = nrgs(&["lift", "--config", &config, "--out", out_s]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("v002_g1.nrgt"));
}

#[test]
fn unknown_config_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{ "train": { "gama": 5.0 } }"#).unwrap();
    let o = nrgs(&["synth", "--config", path.to_str().unwrap(), "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gama"));
}

#[test]
fn invalid_flag_values_are_rejected() {
    let o = nrgs(&["synth", "--noise-rate", "1.5", "--out", "/nonexistent/never"]);
    assert_eq!(o.status.code(), Some(1));
    let o = nrgs(&["synth", "--weighting", "loud"]);
    assert!(!o.status.success());
}
