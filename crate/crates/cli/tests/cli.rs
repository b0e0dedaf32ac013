use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn otbary(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otbary"))
        .args(args)
        .output()
        .expect("spawning otbary")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run(sub: &str, config: &Path) -> Output {
    otbary(&[sub, config.to_str().unwrap()])
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Drops every `wall_ms` field, wherever it sits.
fn strip_wall(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.remove("wall_ms");
            map.values_mut().for_each(strip_wall);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_wall),
        _ => {}
    }
}

fn line_grid() -> Value {
    json!({"dims": [256], "lower": [-4.0], "upper": [4.0]})
}

#[test]
fn oracle_debiased_equal_variances_echo_sigma2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "oracle.json",
        &json!({"mus": [-1.0, 2.0], "sigma2s": [0.3, 0.3], "weights": [0.4, 0.6], "epsilon": 0.1, "kind": "debiased"}),
    );
    let out = run("oracle", &cfg);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["schema_version"], 1);
    let result = &report["results"][0];
    assert!((result["variance"].as_f64().unwrap() - 0.3).abs() < 1e-10);
    assert!((result["mean"].as_f64().unwrap() - 0.8).abs() < 1e-12);
}

#[test]
fn oracle_product_above_threshold_is_dirac() {
    let dir = TempDir::new().unwrap();
    // eps / 2 = 0.5 exceeds the weighted mean variance 0.15.
    let cfg = write_config(
        dir.path(),
        "oracle.json",
        &json!({"mus": [0.0, 1.0], "sigma2s": [0.1, 0.2], "weights": [0.5, 0.5], "epsilon": 1.0, "kind": "product"}),
    );
    let out = run("oracle", &cfg);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["results"][0]["is_dirac"], true);
    assert_eq!(report["results"][0]["variance"].as_f64().unwrap(), 0.0);
}

#[test]
fn oracle_without_kind_reports_all_three() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("r.json");
    let cfg = write_config(
        dir.path(),
        "oracle.json",
        &json!({"mus": [0.0, 1.0], "sigma2s": [0.2, 0.5], "weights": [0.5, 0.5], "epsilon": 0.2, "report": "r.json"}),
    );
    let out = run("oracle", &cfg);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let written = read_json(&report);
    let v: Vec<f64> = written["results"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["variance"].as_f64().unwrap())
        .collect();
    assert_eq!(v.len(), 3);
    // Reported as lebesgue, product, debiased.
    assert!(v[1] < v[2] && v[2] < v[0], "{v:?}");
}

#[test]
fn oracle_rejects_bad_weights_and_unknown_keys() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(
        dir.path(),
        "bad.json",
        &json!({"mus": [0.0, 1.0], "sigma2s": [0.2, 0.2], "weights": [0.5, 0.6], "epsilon": 0.1}),
    );
    let out = run("oracle", &bad);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).starts_with("error:"));
    let unknown = write_config(
        dir.path(),
        "unknown.json",
        &json!({"mus": [0.0], "sigma2s": [0.2], "weights": [1.0], "epsilon": 0.1, "colour": "red"}),
    );
    assert_eq!(code(&run("oracle", &unknown)), 1);
    assert_eq!(code(&otbary(&["oracle", dir.path().join("absent.json").to_str().unwrap()])), 1);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&otbary(&["no-such-command"])), 1);
    assert_eq!(code(&otbary(&[])), 1);
    assert_eq!(code(&otbary(&["--help"])), 0);
}

#[test]
fn barycenter_of_gaussians_reports_oracle_block() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bary.json",
        &json!({
            "grid": line_grid(),
            "inputs": [{"mean": [-1.0], "variance": [0.2]}, {"mean": [1.0], "variance": [0.2]}],
            "epsilon": 0.1,
            "method": "debiased",
            "tol": 1e-9,
            "output": "out/bary.csv",
            "report": "report.json"
        }),
    );
    fs::create_dir(dir.path().join("out")).unwrap();
    let out = run("barycenter", &cfg);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("out/bary.csv").exists());
    assert!(dir.path().join("out/bary.grid.json").exists());
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["method"], "debiased");
    assert_eq!(report["converged"], true);
    assert_eq!(report["kernel_applies_per_sweep"].as_f64().unwrap(), 5.0);
    let oracle = &report["oracle"];
    assert_eq!(oracle["kind"], "debiased");
    assert!((oracle["expected_variance"].as_f64().unwrap() - 0.2).abs() < 1e-10);
    assert!(oracle["relative_error"].as_f64().unwrap() < 1e-3);
    let mean = report["moments"]["mean"][0].as_f64().unwrap();
    assert!(mean.abs() < 1e-9);
}

#[test]
fn barycenter_missing_input_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bary.json",
        &json!({
            "grid": line_grid(),
            "inputs": ["nowhere.csv", {"mean": [0.0], "variance": [0.1]}],
            "epsilon": 0.1,
            "method": "ibp",
            "output": "bary.csv",
            "report": "report.json"
        }),
    );
    let out = run("barycenter", &cfg);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nowhere.csv"), "{}", stderr(&out));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn barycenter_iteration_cap_exits_two_with_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bary.json",
        &json!({
            "grid": line_grid(),
            "inputs": [{"mean": [-1.0], "variance": [0.2]}, {"mean": [1.0], "variance": [0.3]}],
            "epsilon": 0.1,
            "method": "debiased",
            "max_iter": 3,
            "output": "bary.csv",
            "report": "report.json"
        }),
    );
    let out = run("barycenter", &cfg);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["converged"], false);
    assert_eq!(report["iterations"], 3);
    assert!(dir.path().join("bary.csv").exists());
}

#[test]
fn barycenter_small_epsilon_falls_back_to_log_domain() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bary.json",
        &json!({
            "grid": {"dims": [512], "lower": [-8.0], "upper": [8.0]},
            "inputs": [{"mean": [-2.0], "variance": [0.16]}, {"mean": [2.0], "variance": [0.16]}],
            "epsilon": 0.02,
            "method": "debiased",
            "output": "bary.csv",
            "report": "report.json"
        }),
    );
    let out = run("barycenter", &cfg);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["log_domain"], true);
    assert!(report["oracle"]["relative_error"].as_f64().unwrap() < 0.02);
}

#[test]
fn gen_ellipses_is_deterministic_under_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "gen.json",
        &json!({"count": 4, "side": 32, "seed": 1, "output_dir": "a"}),
    );
    let cfg_str = cfg.to_str().unwrap();
    assert_eq!(code(&otbary(&["gen-ellipses", cfg_str, "--seed", "7"])), 0);
    fs::rename(dir.path().join("a"), dir.path().join("first")).unwrap();
    assert_eq!(code(&otbary(&["gen-ellipses", cfg_str, "--seed", "7"])), 0);
    let manifest = read_json(&dir.path().join("a/manifest.json"));
    assert_eq!(manifest["seed"], 7);
    let files: Vec<String> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap().to_string())
        .collect();
    assert_eq!(files.len(), 4);
    for name in files.iter().map(String::as_str).chain(["manifest.json"]) {
        let a = fs::read(dir.path().join("first").join(name)).unwrap();
        let b = fs::read(dir.path().join("a").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    // A different seed moves at least one shape.
    assert_eq!(code(&otbary(&["gen-ellipses", cfg_str, "--seed", "8"])), 0);
    let moved = files
        .iter()
        .any(|f| fs::read(dir.path().join("first").join(f)).unwrap() != fs::read(dir.path().join("a").join(f)).unwrap());
    assert!(moved);
}

/// Ten nested-ellipse shapes on 60x60 at eps = 0.002: the debiased run
/// converges, and IBP's output is blurrier (higher entropy).
#[test]
fn ellipse_barycenters_debiased_is_sharper_than_ibp() {
    let dir = TempDir::new().unwrap();
    let gen = write_config(
        dir.path(),
        "gen.json",
        &json!({"count": 10, "side": 60, "seed": 3, "output_dir": "shapes"}),
    );
    assert_eq!(code(&run("gen-ellipses", &gen)), 0);
    let inputs: Vec<String> = (0..10).map(|i| format!("shapes/ellipse_{i:03}.csv")).collect();
    let mut entropy = Vec::new();
    for method in ["debiased", "ibp"] {
        let cfg = write_config(
            dir.path(),
            &format!("{method}.json"),
            &json!({
                "inputs": inputs,
                "epsilon": 0.002,
                "method": method,
                "max_iter": 20000,
                "output": format!("{method}.csv"),
                "report": format!("{method}.report.json")
            }),
        );
        let out = run("barycenter", &cfg);
        assert_eq!(code(&out), 0, "{method}: {}", stderr(&out));
        let report = read_json(&dir.path().join(format!("{method}.report.json")));
        assert_eq!(report["converged"], true);
        assert!(report.get("oracle").is_none());
        entropy.push(report["moments"]["entropy"].as_f64().unwrap());
    }
    assert!(entropy[1] > entropy[0], "ibp {} vs debiased {}", entropy[1], entropy[0]);
}

#[test]
fn bench_convergence_reaches_both_oracles() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bench.json",
        &json!({
            "grid": {"dims": [512], "lower": [-2.0], "upper": [2.0]},
            "mus": [-0.5, 0.5],
            "sigma2s": [0.01, 0.01],
            "epsilon": 0.01,
            "max_iter": 150,
            "output": "curve.csv",
            "report": "bench.json.out"
        }),
    );
    let out = run("bench-convergence", &cfg);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut reader = csv::Reader::from_path(dir.path().join("curve.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["sweep", "err_ibp", "err_debiased", "ms_ibp", "ms_debiased"]
    );
    let rows: Vec<Vec<f64>> = reader
        .records()
        .map(|r| r.unwrap().iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 150);
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    assert!(last[1] < 1e-3 && last[2] < 1e-3, "{last:?}");
    assert!(last[1] < first[1] && last[2] < first[2]);
    assert!(rows.windows(2).all(|w| w[1][3] >= w[0][3] && w[1][4] >= w[0][4]));
}

#[test]
fn bench_convergence_zero_sweeps_writes_header_only() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bench.json",
        &json!({
            "grid": {"dims": [128], "lower": [-2.0], "upper": [2.0]},
            "mus": [-0.5, 0.5],
            "sigma2s": [0.01, 0.01],
            "epsilon": 0.05,
            "max_iter": 0,
            "output": "curve.csv"
        }),
    );
    let out = run("bench-convergence", &cfg);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(text.trim_end(), "sweep,err_ibp,err_debiased,ms_ibp,ms_debiased");
}

fn embed_dictionary(dir: &Path) {
    let gen = write_config(
        dir,
        "gen.json",
        &json!({"count": 3, "side": 24, "seed": 11, "output_dir": "atoms"}),
    );
    assert_eq!(code(&run("gen-ellipses", &gen)), 0);
    fs::remove_file(dir.join("atoms/manifest.json")).unwrap();
}

#[test]
fn embed_recovers_planted_weights() {
    let dir = TempDir::new().unwrap();
    embed_dictionary(dir.path());
    let cfg = write_config(
        dir.path(),
        "embed.json",
        &json!({
            "dictionary": "atoms",
            "planted": {"weights": [0.2, 0.5, 0.3]},
            "epsilon": 0.01,
            "unroll": 40,
            "seed": 5,
            "report": "embed.report.json"
        }),
    );
    let out = run("embed", &cfg);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&dir.path().join("embed.report.json"));
    let l1 = report["planted"]["l1_error"].as_f64().unwrap();
    assert!(l1 <= 0.05, "{l1}");
    let w: Vec<f64> = report["w"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(report["kernel_applies_per_sweep"], 7);
}

#[test]
fn embed_rejects_mismatched_grids() {
    let dir = TempDir::new().unwrap();
    embed_dictionary(dir.path());
    let other = write_config(
        dir.path(),
        "gen_other.json",
        &json!({"count": 1, "side": 20, "seed": 2, "output_dir": "other"}),
    );
    assert_eq!(code(&run("gen-ellipses", &other)), 0);
    let cfg = write_config(
        dir.path(),
        "embed.json",
        &json!({
            "dictionary": "atoms",
            "target": "other/ellipse_000.csv",
            "epsilon": 0.01,
            "report": "embed.report.json"
        }),
    );
    let out = run("embed", &cfg);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("different grid"), "{}", stderr(&out));
}

#[test]
fn divergence_report_is_a_symmetric_matrix() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "div.json",
        &json!({
            "grid": {"dims": [64], "lower": [0.0], "upper": [1.0]},
            "inputs": [
                {"mean": [0.3], "variance": [0.01]},
                {"mean": [0.6], "variance": [0.02]},
                {"mean": [0.3], "variance": [0.01]}
            ],
            "epsilon": 0.05,
            "tol": 1e-12,
            "report": "div.report.json"
        }),
    );
    let out = run("divergence", &cfg);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&dir.path().join("div.report.json"));
    assert_eq!(report["schema_version"], 1);
    let s = |i: usize, j: usize| report["sdiv"][i][j].as_f64().unwrap();
    assert!(s(0, 1) > 0.0);
    assert!((s(0, 1) - s(1, 0)).abs() < 1e-10);
    assert!(s(0, 2).abs() < 1e-10);
    assert!((s(1, 2) - s(0, 1)).abs() < 1e-10);
    assert!(report["kernel_applies"].as_u64().unwrap() > 0);
}

#[test]
fn reruns_are_identical_apart_from_wall_time() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bary.json",
        &json!({
            "grid": {"dims": [20, 20], "lower": [0.0, 0.0], "upper": [1.0, 1.0]},
            "inputs": [{"mean": [0.3, 0.3], "variance": [0.01, 0.02]}, {"mean": [0.7, 0.6], "variance": [0.02, 0.01]}],
            "weights": [0.3, 0.7],
            "epsilon": 0.01,
            "method": "product",
            "output": "bary.csv",
            "report": "report.json"
        }),
    );
    let mut reports = Vec::new();
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let out = run("barycenter", &cfg);
        assert!(matches!(code(&out), 0 | 2), "{}", stderr(&out));
        let mut report = read_json(&dir.path().join("report.json"));
        strip_wall(&mut report);
        reports.push(report);
        outputs.push(fs::read(dir.path().join("bary.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(outputs[0], outputs[1]);
}
