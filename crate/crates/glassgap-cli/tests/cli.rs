use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn scratch(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(cmd: &str, dir: &Path, config: &str, extra: &[&str]) -> (i32, String) {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_glassgap"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/manifest.json")).unwrap()).unwrap()
}

#[test]
fn unknown_key_is_config_error() {
    let d = scratch("unknown_key");
    let (code, err) = run("exact_gap", &d, "[model]\nkind = \"ising\"\nxi0 = [[2, 1.0]]\nbeta = 1.0\ncolour = 3\n", &[]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("colour"));
}

#[test]
fn oversized_exact_gap_is_config_error() {
    let d = scratch("oversized");
    let cfg = "[model]\nkind = \"ising\"\nxi0 = [[2, 1.0]]\nbeta = 1.0\n[exact_gap]\nn = 25\nseeds = 1\n";
    assert_eq!(run("exact_gap", &d, cfg, &[]).0, 2);
}

#[test]
fn empty_scan_succeeds() {
    let d = scratch("empty_scan");
    let cfg = "[model]\nkind = \"spherical\"\nxi0 = [[4, 1.0]]\nbeta = 1.0\n[phase_scan]\nbetas = []\n";
    let (code, err) = run("phase_scan", &d, cfg, &[]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(d.join("out/phase_scan.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert_eq!(manifest(&d)["summary"]["rows"], 0);
}

#[test]
fn descending_scan_rejected() {
    let d = scratch("descending");
    let cfg = "[model]\nkind = \"spherical\"\nxi0 = [[4, 1.0]]\nbeta = 1.0\n[phase_scan]\nbetas = [2.0, 1.0]\n";
    assert_eq!(run("phase_scan", &d, cfg, &[]).0, 2);
}

#[test]
fn spherical_scan_brackets_onset() {
    let d = scratch("sph_scan");
    let cfg = "[model]\nkind = \"spherical\"\nxi0 = [[4, 1.0]]\nbeta = 1.0\n\
               [phase_scan]\nbetas = [1.0, 1.3, 1.5, 1.758]\ngfeb = true\nrefine_steps = 4\n\
               [phase_scan.q_grid]\nn_q = 51\n";
    let (code, err) = run("phase_scan", &d, cfg, &["--threads", "2"]);
    assert_eq!(code, 0, "{err}");
    let m = manifest(&d);
    let s = &m["summary"];
    let beta_s = s["beta_s_estimate"].as_f64().unwrap();
    let beta_g = s["beta_gfeb_estimate"].as_f64().unwrap();
    assert!(1.3 <= beta_s && beta_s < 1.5);
    assert!(beta_g >= beta_s);
    assert_eq!(s["single_atom_flips"], 1);
    assert_eq!(s["atom_criterion"]["agree"], 4);
    assert_eq!(m["config"]["phase_scan"]["refine_steps"], 4);
    assert_eq!(m["config"]["numerics"]["threads"], 2);
}

#[test]
fn rate_curve_rs_and_rsb() {
    let d = scratch("rate_rs");
    let cfg = |beta: f64| format!("[model]\nkind = \"spherical\"\nxi0 = [[4, 1.0]]\nbeta = {beta}\n[rate_curve.q_grid]\nn_q = 51\n");
    let (code, err) = run("rate_curve", &d, &cfg(1.0), &[]);
    assert_eq!(code, 0, "{err}");
    let c: Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/certificate.json")).unwrap()).unwrap();
    assert_eq!(c["gfeb"], false);
    assert!(c["h_cal"].as_f64().unwrap().abs() < 1e-9);

    let d = scratch("rate_rsb");
    let (code, err) = run("rate_curve", &d, &cfg(2.0), &[]);
    assert_eq!(code, 0, "{err}");
    let c: Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/certificate.json")).unwrap()).unwrap();
    assert_eq!(c["gfeb"], true);
    assert!(c["h_cal"].as_f64().unwrap() > 0.0);
    assert!(c["certificate"]["q2"].is_number());
}

#[test]
fn rate_curve_rejects_nonconvex() {
    let d = scratch("nonconvex");
    let cfg = "[model]\nkind = \"spherical\"\nxi0 = [[3, 1.0]]\nbeta = 1.0\n";
    let (code, err) = run("rate_curve", &d, cfg, &[]);
    assert_eq!(code, 2);
    assert!(err.contains("convex"), "{err}");
}

#[test]
fn exact_gap_rows_and_srw_control() {
    let d = scratch("exact_gap");
    let cfg = "[model]\nkind = \"ising\"\nxi0 = [[2, 1.0]]\nbeta = 1.0\n[exact_gap]\nn = 4\nseeds = 3\nbetas = [0.0, 1.5]\nexport_kernels = true\n";
    let (code, err) = run("exact_gap", &d, cfg, &["--seed", "10"]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(d.join("out/exact_gap.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    let m = manifest(&d);
    let agg = &m["summary"]["aggregate"][0];
    let srw = m["summary"]["srw_log_gap_per_spin"].as_f64().unwrap();
    assert!((agg["mean_log_gap_per_spin"].as_f64().unwrap() - srw).abs() < 1e-12);
    assert_eq!(m["config"]["numerics"]["seed"], 10);
    let kernel = std::fs::read_to_string(d.join("out/kernel_beta1.5_seed12.txt")).unwrap();
    assert!(kernel.lines().filter(|l| !l.starts_with('#')).count() >= 16 * 5);
}

#[test]
fn mcmc_is_deterministic() {
    let cfg = "[model]\nkind = \"ising\"\nxi0 = [[2, 1.0]]\nbeta = 1.0\n[mcmc]\nn = 8\nsweeps = 20000\n";
    let a = scratch("mcmc_a");
    let b = scratch("mcmc_b");
    assert_eq!(run("mcmc", &a, cfg, &["--seed", "5"]).0, 0);
    assert_eq!(run("mcmc", &b, cfg, &["--seed", "5"]).0, 0);
    let ha = std::fs::read(a.join("out/mcmc_hist.csv")).unwrap();
    let hb = std::fs::read(b.join("out/mcmc_hist.csv")).unwrap();
    assert_eq!(ha, hb);
    let tv = manifest(&a)["summary"]["total_variation"].as_f64().unwrap();
    assert!(tv < 0.05, "tv = {tv}");
}
