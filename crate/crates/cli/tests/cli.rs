use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use tempfile::TempDir;

fn mmsold(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmsold")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_rows(path: &Path, rows: &[Vec<f64>]) {
    let text: String = rows
        .iter()
        .map(|r| r.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(path, text).unwrap();
}

fn gaussian_rows(seed: u64, n: usize, center: [f64; 2]) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| center.iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn sample_config(dir: &Path, iterations: usize, particles: usize) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "dataset": { "generate": { "kind": "checkerboard", "n_samples": 200, "seed": 1 } },
        "method": "mmsold",
        "smoothing": { "delta": 0.1, "sigma": 0.2, "mc_samples": 4 },
        "sampler": { "step_size": 5e-4, "iterations": iterations, "particles": particles },
        "seed": 3
    });
    let path = dir.join("run.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn gen2d_writes_requested_rows() {
    let o = mmsold(&["gen2d", "--kind", "circle", "--n", "4", "--equispaced"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    let first: Vec<f64> = text.lines().next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first, vec![1.0, 0.0]);
}

#[test]
fn gen2d_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let o = mmsold(&["gen2d", "--kind", "checkerboard", "--n", "500", "--seed", "7", "--out", path_str(p)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn gen2d_rejects_unknown_kind() {
    let o = mmsold(&["gen2d", "--kind", "moons", "--n", "10"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--kind"));
}

#[test]
fn sample_writes_samples_and_manifest_and_reproduces() {
    let dir = TempDir::new().unwrap();
    let cfg = sample_config(dir.path(), 20, 40);
    let out = dir.path().join("run1");
    let o = mmsold(&["sample", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let samples = fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 40);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 3);
    let diags = manifest["diagnostics"].as_array().unwrap();
    assert_eq!(diags.len(), 21);
    for d in diags {
        assert!(d["mean_residual"].as_f64().unwrap() <= 1e-8);
        assert!(d["gram_residual"].as_f64().unwrap() <= 1e-6 * 40.0);
    }

    // The echoed configuration reproduces the run bit for bit.
    let out2 = dir.path().join("run2");
    let echoed = out.join("config.json");
    let o = mmsold(&["sample", "--config", path_str(&echoed), "--out", path_str(&out2)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(out.join("samples.csv")).unwrap(), fs::read(out2.join("samples.csv")).unwrap());
}

#[test]
fn sample_with_zero_iterations_dumps_initialization() {
    let dir = TempDir::new().unwrap();
    let cfg = sample_config(dir.path(), 0, 30);
    let out = dir.path().join("init");
    let o = mmsold(&["sample", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("samples.csv")).unwrap().lines().count(), 30);
    assert_eq!(read_json(&out.join("manifest.json"))["diagnostics"].as_array().unwrap().len(), 1);
}

#[test]
fn sample_rejects_too_few_particles() {
    let dir = TempDir::new().unwrap();
    let cfg = sample_config(dir.path(), 5, 2);
    let o = mmsold(&["sample", "--config", path_str(&cfg), "--out", path_str(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn sample_rejects_unknown_keys() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.json");
    let cfg = serde_json::json!({
        "dataset": { "generate": { "kind": "circle", "n_samples": 8 } },
        "method": "mmsold",
        "smoothing": { "delta": 0.1, "sigma": 0.2, "mc_samples": 4, "bandwidth": 1.0 },
        "sampler": { "step_size": 5e-4, "iterations": 1, "particles": 10 }
    });
    fs::write(&path, cfg.to_string()).unwrap();
    let o = mmsold(&["sample", "--config", path_str(&path)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bandwidth"));
}

#[test]
fn sample_runs_the_baselines() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("cfdm.json");
    let cfg = serde_json::json!({
        "dataset": { "generate": { "kind": "circle", "n_samples": 16 } },
        "method": "cfdm",
        "cfdm": { "sigma": 0.3, "mc_samples": 4, "particles": 25, "steps": 10 },
        "metrics": { "reference": { "generate": { "kind": "circle", "n_samples": 100 } }, "metrics": ["sw2", "dup"] }
    });
    fs::write(&path, cfg.to_string()).unwrap();
    let out = dir.path().join("cfdm");
    let o = mmsold(&["sample", "--config", path_str(&path), "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("samples.csv")).unwrap().lines().count(), 25);
    let metrics = read_json(&out.join("metrics.json"));
    assert_eq!(metrics.as_array().unwrap().len(), 2);

    let path = dir.path().join("baoab.json");
    let cfg = serde_json::json!({
        "dataset": { "generate": { "kind": "circle", "n_samples": 16 } },
        "method": "baoab",
        "smoothing": { "delta": 0.1, "sigma": 0.3, "mc_samples": 4 },
        "baoab": { "step_size": 1e-2, "iterations": 20, "particles": 10 }
    });
    fs::write(&path, cfg.to_string()).unwrap();
    let out = dir.path().join("baoab");
    let o = mmsold(&["sample", "--config", path_str(&path), "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(read_json(&out.join("manifest.json"))["tilting"]["lambda"].is_array());
}

#[test]
fn eval_reports_zero_distance_to_itself() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    write_rows(&a, &gaussian_rows(1, 50, [0.0, 0.0]));
    let o = mmsold(&["eval", "--samples", path_str(&a), "--reference", path_str(&a), "--metrics", "sw2,recall,kid"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let reports: Value = serde_json::from_slice(&o.stdout).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(reports[0]["metric"], "sw2");
    assert_eq!(reports[0]["value"].as_f64().unwrap(), 0.0);
    assert_eq!(reports[0]["config"]["projections"], 512);
    assert_eq!(reports[1]["value"].as_f64().unwrap(), 1.0);
}

#[test]
fn eval_input_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_rows(&a, &gaussian_rows(1, 10, [0.0, 0.0]));
    write_rows(&b, &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&mmsold(&["eval", "--samples", path_str(&missing), "--reference", path_str(&a)])), 2);
    assert_eq!(code(&mmsold(&["eval", "--samples", path_str(&a), "--reference", path_str(&b)])), 2);
}

#[test]
fn tilt_of_gaussian_data_is_nearly_zero() {
    let dir = TempDir::new().unwrap();
    let train = dir.path().join("train.csv");
    write_rows(&train, &gaussian_rows(2, 4000, [0.0, 0.0]));
    let o = mmsold(&["tilt", "--train", path_str(&train), "--delta", "0.2", "--sigma", "0.2", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let params: Value = serde_json::from_slice(&o.stdout).unwrap();
    for v in params["lambda"].as_array().unwrap() {
        assert!(v.as_f64().unwrap().abs() < 0.1, "{params}");
    }
    for v in params["capital_lambda"]["data"].as_array().unwrap() {
        assert!(v.as_f64().unwrap().abs() < 0.1, "{params}");
    }
}

#[test]
fn two_gaussian_classification() {
    let dir = TempDir::new().unwrap();
    let (c0, c1) = (dir.path().join("c0.csv"), dir.path().join("c1.csv"));
    write_rows(&c0, &gaussian_rows(3, 150, [-2.0, 0.0]));
    write_rows(&c1, &gaussian_rows(4, 150, [2.0, 0.0]));
    let mut validation: Vec<Vec<f64>> = Vec::new();
    for (label, center) in [(0.0, [-2.0, 0.0]), (1.0, [2.0, 0.0])] {
        for mut r in gaussian_rows(5 + label as u64, 50, center) {
            r.push(label);
            validation.push(r);
        }
    }
    let val = dir.path().join("val.csv");
    write_rows(&val, &validation);
    let models = dir.path().join("models");
    let o = mmsold(&[
        "ecm-fit", "--class", path_str(&c0), "--class", path_str(&c1), "--delta", "0.5", "--sigma", "0.3",
        "--validation", path_str(&val), "--out", path_str(&models),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let q0 = gaussian_rows(7, 100, [-2.0, 0.0]);
    let q1 = gaussian_rows(8, 100, [2.0, 0.0]);
    let queries = dir.path().join("q.csv");
    write_rows(&queries, &[q0, q1].concat());
    let run = || {
        let o = mmsold(&["classify", "--models", path_str(&models), "--queries", path_str(&queries)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        String::from_utf8(o.stdout).unwrap()
    };
    let labels = run();
    let correct = labels
        .lines()
        .enumerate()
        .filter(|(i, l)| l.parse::<usize>().unwrap() == usize::from(*i >= 100))
        .count();
    assert!(correct as f64 / 200.0 >= 0.95, "accuracy {correct}/200");
    assert_eq!(labels, run());

    fs::write(models.join("class_1.json"), "{\"points\": 3}").unwrap();
    let o = mmsold(&["classify", "--models", path_str(&models), "--queries", path_str(&queries)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn density_grid_is_normalized() {
    let dir = TempDir::new().unwrap();
    let train = dir.path().join("circle.csv");
    let o = mmsold(&["gen2d", "--kind", "circle", "--n", "16", "--equispaced", "--out", path_str(&train)]);
    assert_eq!(code(&o), 0);
    let o = mmsold(&[
        "density", "--train", path_str(&train), "--delta", "0.1", "--sigma", "0.3", "--spacing", "0.1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    // Riemann sum over a uniform grid approximates the trapezoid mass.
    let mass: f64 = rows.iter().map(|r| r[2]).sum::<f64>() * 0.1 * 0.1;
    assert!((mass - 1.0).abs() < 0.05, "mass {mass}");
}

#[test]
fn sweep_emits_one_report_per_cell() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("sweep.json");
    let cfg = serde_json::json!({
        "dataset": { "generate": { "kind": "checkerboard", "n_samples": 100, "seed": 1 } },
        "method": "mmsold",
        "smoothing": { "delta": 0.1, "sigma": 0.2, "mc_samples": 2 },
        "sampler": { "step_size": 5e-4, "iterations": 1, "particles": 30 },
        "metrics": { "reference": { "generate": { "kind": "checkerboard", "n_samples": 200, "seed": 2 } },
                     "params": { "projections": 16 } }
    });
    fs::write(&path, cfg.to_string()).unwrap();
    let out = dir.path().join("grid");
    let o = mmsold(&[
        "sweep", "--config", path_str(&path), "--step-sizes", "1e-4,1e-3", "--iterations", "1,5", "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cells: Vec<_> = fs::read_dir(&out).unwrap().collect();
    assert_eq!(cells.len(), 4);
    let cell = read_json(&out.join("cell_T5_h1e-3.json"));
    assert_eq!(cell["iterations"], 5);
    assert_eq!(cell["reports"][0]["metric"], "sw2");
}
