use std::process::Command;

use kac_lab::config::{Metric, StudyConfig};
use kac_lab::plot::plot_data;
use kac_lab::study::{execute, fit_slopes, run_study, CSV_HEADER};
use statrs::function::gamma::ln_gamma;
use tempfile::TempDir;

fn config(json: &str, dir: &TempDir) -> StudyConfig {
    let mut c = StudyConfig::from_json(json).unwrap();
    c.output_dir = dir.path().to_path_buf();
    c
}

fn null_config(dir: &TempDir) -> StudyConfig {
    config(
        r#"{"study_id": "gauss-null", "density": {"name": "standard_gaussian"},
            "metrics": ["w2", "entropy"], "n_grid": [4, 16, 64], "samples": 10000, "seed": 42}"#,
        dir,
    )
}

fn rejection(json: &str) -> String {
    StudyConfig::from_json(json).unwrap().validate().unwrap_err().to_string()
}

#[test]
fn config_parses_names_objects_and_defaults() {
    let c = StudyConfig::from_json(
        r#"{"study_id": "s", "density": {"name": "student_t", "parameters": {"nu": 5}},
            "metrics": ["w2", {"metric": "wr", "r": 3}, {"metric": "tail_prob", "k": 1, "q": 0.25},
                        {"metric": "alip_distortion", "function": {"kind": "indicator"}, "q": 0.5, "u": 0.5}],
            "seed": 1}"#,
    )
    .unwrap();
    assert_eq!(c.n_grid, kac_lab::config::DEFAULT_GRID.to_vec());
    let v = c.validate().unwrap();
    let ids: Vec<String> = v.metrics.iter().map(Metric::id).collect();
    assert_eq!(ids, ["w2", "wr(r=3)", "tail_prob(k=1,q=0.25)", "alip_distortion(indicator,q=0.5,u=0.5)"]);
    assert!(StudyConfig::from_json(r#"{"study_id": "s", "density": {"name": "gamma"}, "metrics": [], "seed": 1, "extra": 0}"#).is_err());
}

#[test]
fn validation_names_the_field_and_bound() {
    let base = |metrics: &str, grid: &str, samples: usize, density: &str| {
        format!(r#"{{"study_id": "s", "density": {density}, "metrics": {metrics}, "n_grid": {grid}, "samples": {samples}, "seed": 1}}"#)
    };
    let gamma = r#"{"name": "standard_gaussian"}"#;
    assert!(rejection(&base(r#"["w2"]"#, "[4, 4, 8]", 1000, gamma)).contains("`n_grid`"));
    assert!(rejection(&base(r#"["w2"]"#, "[1, 4]", 1000, gamma)).contains("`n_grid`"));
    assert!(rejection(&base(r#"["w2"]"#, "[4, 8]", 999, gamma)).contains("`samples`"));
    assert!(rejection(&base(r#"["speed"]"#, "[4, 8]", 1000, gamma)).contains("unknown metric"));
    assert!(rejection(&base(r#"["w2"]"#, "[4, 8]", 1000, r#"{"name": "cauchy"}"#)).contains("`density`"));
    let uniform = rejection(&base(r#"["fisher"]"#, "[4, 8]", 1000, r#"{"name": "uniform"}"#));
    assert!(uniform.contains("fisher requires differentiable base with finite I(f|γ): quadrature check failed"), "{uniform}");
    assert!(uniform.contains("[Fisher information inequality]"));
    let t3 = r#"{"name": "student_t", "parameters": {"nu": 3}}"#;
    assert!(rejection(&base(r#"["entropy"]"#, "[4, 8]", 1000, t3)).contains("[entropic chaos bound]"));
    assert!(rejection(&base(r#"[{"metric": "wr", "r": 3}]"#, "[4, 8]", 1000, t3)).contains("[Wr rescaled-tensor bound]"));
    let wide = r#"{"name": "gaussian", "parameters": {"mean": 0, "sd": 2}}"#;
    assert!(rejection(&base(r#"["w2"]"#, "[4, 8]", 1000, wide)).contains("unit energy"));
    let tail = rejection(&base(r#"[{"metric": "tail_prob", "k": 1, "q": 0.25}]"#, "[2, 64]", 1000, gamma));
    assert!(tail.contains("[von Bahr-Esseen tail bound]") && tail.contains("grid contains 2"), "{tail}");
    assert!(StudyConfig::from_json(&base(r#"["w2", "fisher"]"#, "[4, 8]", 1000, t3)).unwrap().validate().is_ok());
}

#[test]
fn gaussian_null_study() {
    let dir = TempDir::new().unwrap();
    let (result, out) = run_study(&null_config(&dir), None).unwrap();
    assert!(!result.failed());
    let entropy: Vec<_> = result.cells_for("entropy").collect();
    assert_eq!(entropy.len(), 3);
    assert!(entropy.iter().all(|c| c.estimate.consistent_with(0.0, 3.0)));
    for c in result.cells_for("w2") {
        let n = c.n as f64;
        let exact = 2.0 - 2.0 * (2.0 / n).sqrt() * (ln_gamma(0.5 * (n + 1.0)) - ln_gamma(0.5 * n)).exp();
        assert!(c.estimate.consistent_with(exact, 3.0), "N={}: {:?} vs {exact}", c.n, c.estimate);
    }
    let csv = std::fs::read_to_string(&out.csv).unwrap();
    assert!(csv.starts_with(&format!("{CSV_HEADER}\n")));
    assert!(!csv.contains('\r'));
    assert_eq!(csv.lines().count(), 7);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 2, "{leftovers:?}");
    let json: kac_lab::StudyResult = serde_json::from_str(&std::fs::read_to_string(&out.json).unwrap()).unwrap();
    assert_eq!(json.cells, result.cells);
    assert_eq!(json.config, result.config);
    assert_eq!(json.audit.rel_entropy.unwrap().value, 0.0);
}

#[test]
fn csv_is_identical_across_runs_and_worker_counts() {
    let dirs: Vec<TempDir> = (0..3).map(|_| TempDir::new().unwrap()).collect();
    let read = |i: usize, workers: Option<usize>| {
        let (_, out) = run_study(&null_config(&dirs[i]), workers).unwrap();
        std::fs::read(out.csv).unwrap()
    };
    let a = read(0, None);
    let b = read(1, Some(1));
    let c = read(2, Some(3));
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn slopes_match_known_asymptotics() {
    let dir = TempDir::new().unwrap();
    let c = config(
        r#"{"study_id": "slopes", "density": {"name": "standard_gaussian"},
            "metrics": ["w2", "l1_k1", "entropy"], "n_grid": [8, 16, 32, 64, 128, 256, 512, 1024],
            "samples": 10000, "seed": 3, "caps": {"l1_k1": 128}}"#,
        &dir,
    );
    let result = execute(&c.validate().unwrap());
    assert!(!result.failed());
    assert_eq!(result.skipped.len(), 3);
    let slopes = fit_slopes(&result);
    let w2 = slopes.iter().find(|s| s.metric == "w2").unwrap();
    let fit = w2.fit.unwrap();
    assert!((fit.slope + 1.0).abs() <= 0.15, "w2 slope {}", fit.slope);
    assert_eq!(w2.predicted_slope, Some(-0.5));
    let l1 = slopes.iter().find(|s| s.metric == "l1_k1").unwrap().fit.unwrap();
    assert!((l1.slope + 1.0).abs() <= 0.2, "l1 slope {}", l1.slope);
    let entropy = slopes.iter().find(|s| s.metric == "entropy").unwrap();
    assert!(entropy.fit.is_none());
    assert!(entropy.refusal.as_deref().unwrap().contains("estimates consistent with zero"));
}

#[test]
fn plot_blocks_carry_reference_lines() {
    let dir = TempDir::new().unwrap();
    let (result, _) = run_study(&null_config(&dir), None).unwrap();
    let text = plot_data(&result, "entropy").unwrap();
    let blocks: Vec<&str> = text.split("\n\n\n").collect();
    assert_eq!(blocks.len(), 2);
    assert!(blocks[1].starts_with("# N H(f|gamma)"));
    assert!(blocks[1].lines().skip(1).all(|l| l.ends_with(" 0e0")));
    let w2 = plot_data(&result, "w2").unwrap();
    let shape: Vec<f64> = w2.split("\n\n\n").nth(1).unwrap().lines().skip(1).map(|l| l.split(' ').nth(1).unwrap().parse().unwrap()).collect();
    let last = result.cells_for("w2").last().unwrap().estimate.value;
    assert!((shape[2] - last).abs() < 1e-15 * last);
    assert!((shape[0] / shape[2] - 4.0).abs() < 1e-12 && (shape[1] / shape[2] - 2.0).abs() < 1e-12);
    assert!(result.cells_for("w2").all(|c| c.bound.is_none() && !c.violation));
    assert!(plot_data(&result, "fisher").is_err());

    let shifted = config(
        r#"{"study_id": "fisher", "density": {"name": "mixture", "parameters": {"offset": 0.6, "sd": 0.8}},
            "metrics": ["fisher", "fisher_n2"], "n_grid": [4, 8], "samples": 1000, "seed": 5}"#,
        &dir,
    );
    let result = execute(&shifted.validate().unwrap());
    assert!(!result.failed(), "{:?}", result.errors);
    let i = result.audit.rel_fisher.unwrap().value;
    let text = plot_data(&result, "fisher").unwrap();
    let refs: Vec<Vec<f64>> = text
        .split("\n\n\n")
        .nth(1)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(' ').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(refs, vec![vec![i, 0.75 * i], vec![i, 0.875 * i]]);
}

fn kaclab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kaclab")).args(args).env("KACLAB_WORKERS", "2").output().unwrap()
}

#[test]
fn cli_exit_status_tracks_failures() {
    let dir = TempDir::new().unwrap();
    let write = |name: &str, json: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, json.replace("OUT", &dir.path().join("out").display().to_string())).unwrap();
        p.display().to_string()
    };
    let ok = write(
        "ok.json",
        r#"{"study_id": "ok", "density": {"name": "standard_gaussian"}, "metrics": ["entropy"],
            "n_grid": [4, 8], "samples": 1000, "seed": 1, "output_dir": "OUT"}"#,
    );
    assert!(kaclab(&["run", &ok]).status.success());
    let result = dir.path().join("out").join("ok.json").display().to_string();
    let plot = kaclab(&["plot", &result, "--metric", "entropy"]);
    assert!(plot.status.success());
    assert!(dir.path().join("out").join("ok.entropy.dat").exists());
    assert!(!kaclab(&["plot", &result, "--metric", "nope"]).status.success());
    let degenerate = write(
        "bad.json",
        r#"{"study_id": "bad", "density": {"name": "mixture", "parameters": {"offset": 0.99, "sd": 0.14}},
            "metrics": ["conditioned_entropy"], "n_grid": [64], "samples": 1000, "seed": 1, "output_dir": "OUT"}"#,
    );
    let out = kaclab(&["run", &degenerate]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("estimator error in conditioned_entropy at N = 64"));
    let invalid = write(
        "invalid.json",
        r#"{"study_id": "x", "density": {"name": "standard_gaussian"}, "metrics": ["w2"], "n_grid": [8, 4], "seed": 1}"#,
    );
    assert_eq!(kaclab(&["run", &invalid]).status.code(), Some(2));
    let rates = kaclab(&["rates", "--k", "1", "--delta", "2", "--r", "0", "--p", "6"]);
    let v: serde_json::Value = serde_json::from_slice(&rates.stdout).unwrap();
    assert_eq!(v["l1"]["eta"], 0.25);
    assert_eq!(v["l1"]["q_star"], 0.375);
    let list = kaclab(&["list-densities"]);
    let v: serde_json::Value = serde_json::from_slice(&list.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 7);
}
