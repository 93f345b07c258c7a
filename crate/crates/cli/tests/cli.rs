use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn polmz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polmz"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn short_run(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", "--scenario", "pol_on", "--seed", "3", "--duration-s", "40", "--out-dir", out];
    args.extend_from_slice(extra);
    polmz(&args)
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = short_run(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let p = dir.path();
    assert_eq!(header(&p.join("counts.csv")), "time_s,raw,net");
    assert_eq!(header(&p.join("pd.csv")), "time_s,intensity");
    assert_eq!(header(&p.join("visibility.csv")), "time_s,V,valid");
    assert_eq!(header(&p.join("histogram.csv")), "bin_lo,bin_hi,freq");
    assert!(header(&p.join("diagnostics.csv")).starts_with("time_s,overlap_q"));
    let manifest = fs::read_to_string(p.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 3"));
    assert_eq!(fs::read_to_string(p.join("counts.csv")).unwrap().lines().count(), 41);
}

#[test]
fn analyze_reproduces_run_visibility() {
    let run_dir = tempfile::tempdir().unwrap();
    let again = tempfile::tempdir().unwrap();
    assert!(short_run(run_dir.path(), &[]).status.success());
    let out = polmz(&[
        "analyze",
        run_dir.path().to_str().unwrap(),
        "--out-dir",
        again.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["visibility.csv", "histogram.csv"] {
        assert_eq!(
            fs::read(run_dir.path().join(f)).unwrap(),
            fs::read(again.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn config_file_and_manifest_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "scenario = \"phase_off\"\nduration_s = 30.0\n[arm2]\nlength_km = 8.001\n").unwrap();
    let out_a = dir.path().join("a");
    let out = polmz(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", out_a.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out_b = dir.path().join("b");
    let manifest = out_a.join("manifest.toml");
    let out = polmz(&["run", "--config", manifest.to_str().unwrap(), "--out-dir", out_b.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(fs::read(out_a.join("counts.csv")).unwrap(), fs::read(out_b.join("counts.csv")).unwrap());
}

#[test]
fn sweep_writes_one_directory_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = polmz(&[
        "sweep",
        "--scenario",
        "pol_off",
        "--seeds",
        "1..3",
        "--duration-s",
        "30",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for seed in 1..=3 {
        assert!(dir.path().join(format!("seed_{seed}/counts.csv")).exists());
    }
    let table = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(String::from_utf8_lossy(&out.stdout).contains("pooled over 3 seeds"));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = dir.path().join("bad.toml");
    fs::write(&bad_key, "no_such_key = 1\n").unwrap();
    let out_dir = dir.path().join("out");
    let out_dir = out_dir.to_str().unwrap();
    let cases: [&[&str]; 5] = [
        &["run", "--config", bad_key.to_str().unwrap(), "--out-dir", out_dir],
        &["run", "--scenario", "pol_sideways", "--out-dir", out_dir],
        &["run", "--duration-s", "-5", "--out-dir", out_dir],
        &["sweep", "--seeds", "5..1", "--out-dir", out_dir],
        &["run", "--config", "/definitely/not/here.toml", "--out-dir", out_dir],
    ];
    for args in cases {
        let out = polmz(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn analysis_window_shorter_than_three_bins_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(short_run(dir.path(), &[]).status.success());
    let out = polmz(&["analyze", dir.path().to_str().unwrap(), "--window-s", "2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = polmz(&["analyze", dir.path().to_str().unwrap(), "--hist-bin", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_or_corrupt_counts_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = polmz(&["analyze", dir.path().join("counts.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let corrupt = dir.path().join("corrupt.csv");
    fs::write(&corrupt, "time_s,raw,net\n0.5,abc,1\n").unwrap();
    let out = polmz(&["analyze", corrupt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
