use std::path::Path;
use std::process::{Command, Output};

fn hmimo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmimo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("small.toml");
    let text = format!(
        r#"
trials = 2
base_seed = 3
{extra}

[aperture]
L_x = 0.05
L_y = 0.05
f_c = 30e9

[sweep]
axis = "snr"
values = [0.0, 10.0]
n_rf = 40

[em]
restarts = 2
max_iter = 100

[baselines]
omp_sparsity = 8

[quadrature]
rel_tol = 1e-4
"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn sweep_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = hmimo(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let raw = std::fs::read_to_string(out.join("snr_raw.csv")).unwrap();
    let mut lines = raw.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sweep_axis,sweep_value,trial,method,nmse_linear,nmse_db,wall_ms,iterations,pruned"
    );
    assert_eq!(lines.count(), 2 * 2 * 5);

    let agg = std::fs::read_to_string(out.join("snr_aggregate.csv")).unwrap();
    let mut lines = agg.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sweep_axis,sweep_value,method,median_nmse_db,mean_nmse_db,trials_ok,trials_failed"
    );
    assert_eq!(lines.count(), 2 * 5);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = hmimo(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--axis",
        "nrf",
        "--values",
        "20,40",
        "--trials",
        "1",
        "--methods",
        "ls,kmeans",
        "--format",
        "json",
        "--theta-branch",
        "principal",
        "--nmse-mode",
        "full",
        "--quiet",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let agg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("nrf_aggregate.json")).unwrap())
            .unwrap();
    let rows = agg.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows
        .iter()
        .all(|r| r["method"] == "ls" || r["method"] == "kmeans"));
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let mut tables = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let o = hmimo(&[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
            "--quiet",
        ]);
        assert_eq!(o.status.code(), Some(0));
        tables.push(std::fs::read(out.join("snr_raw.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = small_config(dir.path(), "bogus_field = 1");
    let o = hmimo(&["sweep", "--config", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let o = hmimo(&[
        "sweep",
        "--config",
        dir.path().join("missing.toml").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));

    let cfg = small_config(dir.path(), "");
    let o = hmimo(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--axis",
        "nrf",
        "--values",
        "5000",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("N_RF"));

    let o = hmimo(&["sweep", "--methods", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failed_trials_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    // OMP cannot pick more atoms than there are observations.
    let o = hmimo(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--axis",
        "nrf",
        "--values",
        "4,40",
        "--methods",
        "omp,ls",
        "--quiet",
    ]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let agg = std::fs::read_to_string(out.join("nrf_aggregate.csv")).unwrap();
    assert!(agg.lines().any(|l| l == "nrf,4.0,omp,,,0,2"), "{agg}");
}

#[test]
fn default_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = hmimo(&["config"]);
    assert_eq!(o.status.code(), Some(0));
    let path = dir.path().join("default.toml");
    std::fs::write(&path, &o.stdout).unwrap();
    let loaded = hmimo_core::ExperimentConfig::load(&path).unwrap();
    assert_eq!(loaded, hmimo_core::ExperimentConfig::default());
}

#[test]
fn fit_then_profile() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.csv");
    let mut csv = String::from("theta,phi,s\n");
    for i in 0..12 {
        for j in 0..12 {
            let theta = 0.2 + 0.05 * i as f64;
            let phi = 0.5 + 0.1 * j as f64;
            let d = ((theta - 0.45_f64).powi(2) + (phi - 1.1_f64).powi(2)).sqrt();
            csv.push_str(&format!("{theta},{phi},{}\n", (-20.0 * d * d).exp()));
        }
    }
    std::fs::write(&samples, csv).unwrap();

    let report = dir.path().join("report.json");
    let o = hmimo(&[
        "fit",
        "--samples",
        samples.to_str().unwrap(),
        "--max-scatterers",
        "2",
        "--restarts",
        "2",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(!parsed["mixture"]["clusters"].as_array().unwrap().is_empty());

    let profile = dir.path().join("profile.csv");
    let o = hmimo(&[
        "profile",
        "--mixture",
        report.to_str().unwrap(),
        "--side",
        "0.05",
        "--rel-tol",
        "1e-4",
        "--out",
        profile.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let rows = std::fs::read_to_string(&profile).unwrap();
    assert_eq!(rows.lines().count(), 1 + 81);
}

#[test]
fn fit_rejects_missing_file() {
    let o = hmimo(&["fit", "--samples", "/nonexistent/samples.csv"]);
    assert_eq!(o.status.code(), Some(1));
}
