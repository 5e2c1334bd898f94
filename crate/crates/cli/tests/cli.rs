use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use ziss_core::simulate::design_points;
use ziss_core::{fit_ziss, generate, Setting, SimulationConfig, ZissConfig};

fn ziss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ziss"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn column(csv: &str, idx: usize) -> Vec<f64> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').nth(idx).unwrap().parse().unwrap())
        .collect()
}

fn write_rows(path: &Path, rows: &[(f64, u64)]) {
    let mut text = String::from("t,y\n");
    for (t, y) in rows {
        text.push_str(&format!("{t},{y}\n"));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn simulate_writes_long_format() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "data.csv");
    let out = ziss(&["simulate", "--setting", "1", "--seed", "7", "--out", s(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&data).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,y"));
    assert_eq!(lines.count(), 41 * 80);
}

#[test]
fn simulate_replicate_table() {
    let dir = TempDir::new().unwrap();
    let table = path(&dir, "table.csv");
    let out = ziss(&[
        "simulate", "--setting", "2", "--n-points", "15", "--samples", "20", "--replicates", "3",
        "--methods", "nzss,dss", "--out", s(&table),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,mean_mse,std_mse,effective_R");
    assert!(lines[1].starts_with("nzss,") && lines[1].ends_with(",3"));
    assert!(lines[2].starts_with("dss,"));
    assert_eq!(lines.len(), 3);
}

#[test]
fn fit_reproduces_the_in_process_curve() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "data.csv");
    let fit = path(&dir, "fit.json");
    let curve = path(&dir, "curve.csv");
    let mut cfg = SimulationConfig::new(Setting::Two, 5);
    cfg.n_points = 21;
    cfg.samples_per_point = 30;
    assert!(ziss(&[
        "simulate", "--setting", "2", "--seed", "5", "--n-points", "21", "--samples", "30",
        "--out", s(&data),
    ])
    .status
    .success());
    let out = ziss(&[
        "fit", "--input", s(&data), "--out", s(&fit), "--curve", s(&curve), "--bins", "0",
        "--domain", "0:1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let (dataset, _) = generate(&cfg).unwrap();
    let expected = fit_ziss(&dataset, &ZissConfig::default()).unwrap();
    let text = std::fs::read_to_string(&curve).unwrap();
    let grid = column(&text, 0);
    let mu = column(&text, 1);
    assert_eq!(grid.len(), 512);
    for (t, m) in grid.iter().zip(&mu) {
        let want = expected.mean_curve.mean(*t).unwrap();
        assert!((m - want).abs() <= 1e-12 * want.max(1.0), "t {t}: {m} vs {want}");
    }
    for d in column(&text, 2) {
        assert!((0.0..=1.0).contains(&d));
    }
}

#[test]
fn distinct_points_match_aligned_bins() {
    // Raw times spread inside 10 bins over [0, 2] (both edges present) and
    // the same counts placed at the bin midpoints.
    let bins = 10;
    let width = 2.0 / bins as f64;
    let mut raw = vec![(0.0, 3), (2.0, 1)];
    let mut binned = vec![];
    for k in 0..bins {
        let mid = (k as f64 + 0.5) * width;
        for j in 0..12u64 {
            let y = if j % 3 == 0 { 0 } else { 1 + (j + k as u64) % 5 };
            let t = k as f64 * width + width * (j as f64 + 0.5) / 12.5;
            raw.push((t, y));
            binned.push((mid, y));
        }
    }
    binned.push((0.5 * width, 3));
    binned.push(((bins as f64 - 0.5) * width, 1));

    let dir = TempDir::new().unwrap();
    let (raw_csv, bin_csv) = (path(&dir, "raw.csv"), path(&dir, "binned.csv"));
    write_rows(&raw_csv, &raw);
    write_rows(&bin_csv, &binned);
    let run = |input: &Path, extra: &[&str], tag: &str| {
        let fit = path(&dir, &format!("{tag}.json"));
        let curve = path(&dir, &format!("{tag}.csv"));
        let mut args = vec!["fit", "--input", s(input), "--out", s(&fit), "--curve", s(&curve)];
        args.extend_from_slice(extra);
        let out = ziss(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read_to_string(&curve).unwrap()
    };
    let a = run(&raw_csv, &["--bins", "10"], "a");
    let b = run(&bin_csv, &["--bins", "0", "--domain", "0:2"], "b");
    assert_eq!(column(&a, 0), column(&b, 0));
    for idx in [1, 2] {
        for (x, y) in column(&a, idx).iter().zip(column(&b, idx)) {
            assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn negative_count_names_its_line() {
    let dir = TempDir::new().unwrap();
    let input = path(&dir, "bad.csv");
    std::fs::write(&input, "t,y\n0.1,2\n0.2,0\n0.3,-4\n0.4,1\n").unwrap();
    let out = ziss(&[
        "fit", "--input", s(&input), "--out", s(&path(&dir, "f.json")), "--curve",
        s(&path(&dir, "c.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("line 4"), "{err}");
    assert!(!path(&dir, "f.json").exists());
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out = ziss(&[
        "fit", "--input", s(&path(&dir, "nope.csv")), "--out", s(&path(&dir, "f.json")),
        "--curve", s(&path(&dir, "c.csv")),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

fn constant_fit(dir: &TempDir) -> PathBuf {
    let rows: Vec<(f64, u64)> = (0..20)
        .flat_map(|i| (0..5).map(move |_| (0.05 * i as f64 + 0.025, 3)))
        .collect();
    let input = path(dir, "const.csv");
    write_rows(&input, &rows);
    let fit = path(dir, "const.json");
    let out = ziss(&[
        "fit", "--input", s(&input), "--out", s(&fit), "--curve", s(&path(dir, "const_curve.csv")),
        "--bins", "0", "--domain", "0:1", "--allow-nonconverged",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    fit
}

#[test]
fn constant_data_scores_near_zero() {
    let dir = TempDir::new().unwrap();
    let fit = constant_fit(&dir);
    let truth = path(&dir, "truth.csv");
    std::fs::write(&truth, "t,mu_true\n0.1,3\n0.5,3\n0.9,3\n").unwrap();
    let summary = path(&dir, "summary.json");
    let out = ziss(&[
        "evaluate", "--fit", s(&fit), "--truth-csv", s(&truth), "--out", s(&path(&dir, "e.csv")),
        "--json", s(&summary),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert!(json["mse"].as_f64().unwrap() <= 1e-6);
    assert_eq!(json["n_points"], 3);
}

#[test]
fn truth_outside_the_domain_is_rejected() {
    let dir = TempDir::new().unwrap();
    let fit = constant_fit(&dir);
    let truth = path(&dir, "truth.csv");
    std::fs::write(&truth, "t,mu_true\n0.5,3\n1.5,3\n").unwrap();
    let out = ziss(&[
        "evaluate", "--fit", s(&fit), "--truth-csv", s(&truth), "--out", s(&path(&dir, "e.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("1.5"));
}

#[test]
fn iteration_limit_sets_exit_code_three() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "data.csv");
    assert!(ziss(&["simulate", "--setting", "1", "--out", s(&data)]).status.success());
    let args = |extra: &'static str| {
        let mut v = vec![
            "fit".to_string(), "--input".into(), s(&data).into(), "--out".into(),
            s(&path(&dir, "f.json")).into(), "--curve".into(), s(&path(&dir, "c.csv")).into(),
            "--max-iter".into(), "1".into(),
        ];
        if !extra.is_empty() {
            v.push(extra.into());
        }
        v
    };
    let strict = Command::new(env!("CARGO_BIN_EXE_ziss")).args(args("")).output().unwrap();
    assert_eq!(strict.status.code(), Some(3));
    assert!(path(&dir, "f.json").exists());
    let lenient = Command::new(env!("CARGO_BIN_EXE_ziss"))
        .args(args("--allow-nonconverged"))
        .output()
        .unwrap();
    assert!(lenient.status.success());
}

#[test]
fn builtin_truth_scores_the_fitted_points() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "data.csv");
    let fit = path(&dir, "fit.json");
    let errors = path(&dir, "errors.csv");
    assert!(ziss(&["simulate", "--setting", "1", "--seed", "3", "--out", s(&data)]).status.success());
    assert!(ziss(&[
        "fit", "--input", s(&data), "--out", s(&fit), "--curve", s(&path(&dir, "c.csv")),
        "--bins", "0", "--domain", "0:1",
    ])
    .status
    .success());
    let out = ziss(&["evaluate", "--fit", s(&fit), "--truth", "setting1", "--out", s(&errors)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&errors).unwrap();
    assert_eq!(column(&text, 0), design_points(41));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mse: f64 = stdout.trim().strip_prefix("mse ").unwrap().parse().unwrap();
    assert!(mse > 0.0 && mse < 0.2, "{mse}");
}
