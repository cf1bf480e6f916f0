use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aqnmf_core::apportion::{ApportionmentReport, Ratios, ReportConfig};
use aqnmf_core::{ClassifierConfig, NmfMode, Pollutant};

fn aqnmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aqnmf"))
        .args(args)
        .env_remove("AQNMF_SEED")
        .env_remove("AQNMF_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small two-source dataset in `dir`.
fn dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data.csv");
    let truth = dir.join("truth.json");
    let o = aqnmf(&[
        "synth", "--seed", "3", "--hours", "1440", "--stations", "8", "--k-true", "2", "-o", s(&data), "--truth",
        s(&truth),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    data
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(aqnmf(&[]).status.code(), Some(1));
    assert_eq!(aqnmf(&["factorize", "-i", "x.csv"]).status.code(), Some(1));
    assert_eq!(aqnmf(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(aqnmf(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = aqnmf(&["apportion", "-i", s(&dir.path().join("absent.csv")), "-p", "no2", "-k", "2"]);
    assert_eq!(missing.status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "time,site,value\n").unwrap();
    let o = aqnmf(&["factorize", "-i", s(&bad), "-p", "no2", "-k", "2", "--output-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("header mismatch"));
}

#[test]
fn rank_beyond_data_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let o = aqnmf(&["factorize", "-i", s(&data), "-p", "no2", "-k", "8", "--output-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seed_is_printed_and_read_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_aqnmf"))
        .args(["apportion", "-i", s(&data), "-p", "no2", "-k", "2"])
        .env("AQNMF_SEED", "41")
        .env("AQNMF_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("seed: 41"));
    let report = ApportionmentReport::from_json(&stdout(&o)).unwrap();
    assert_eq!(report.config.seed, 41);
    let prov = report.config.provenance.unwrap();
    assert_eq!(prov["seed"], 41);
    assert_eq!(prov["input_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn factorize_writes_factors_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("fit");
    let before = fs::read(&data).unwrap();
    let o = aqnmf(&["factorize", "-i", s(&data), "-p", "no2", "-k", "2", "--output-dir", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(&data).unwrap(), before);

    let w = fs::read_to_string(out.join("W.csv")).unwrap();
    let mut lines = w.lines();
    assert!(lines.next().unwrap().starts_with("# run-config: "));
    assert_eq!(lines.next().unwrap(), "timestamp,NMF1,NMF2");
    assert_eq!(lines.count(), 1440);
    let h = fs::read_to_string(out.join("H.csv")).unwrap();
    assert_eq!(h.lines().nth(1).unwrap(), "feature,AA,AB,AC,AD,AE,AF,AG,AH");

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["k"], 2);
    assert!(meta["converged"].is_boolean());
    let shares: f64 = meta["share_percent"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((shares - 100.0).abs() < 1e-9);
    assert_eq!(meta["provenance"]["command"], "factorize");
}

#[test]
fn select_rank_prints_table_and_choice() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let json = dir.path().join("ranks.json");
    let o = aqnmf(&[
        "select-rank", "-i", s(&data), "-p", "no2", "--k-range", "2..4", "--runs", "4", "-o", s(&json),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("k\trho\n2\t"));
    assert!(text.lines().any(|l| l.starts_with("chosen k = ")));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc["selection"]["scores"].as_array().unwrap().len(), 3);
    assert_eq!(doc["provenance"]["k_range"], serde_json::json!([2, 4]));
}

#[test]
fn windrose_writes_one_file_per_feature() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    for (format, ext) in [("csv", "csv"), ("svg", "svg")] {
        let out = dir.path().join(format);
        let o = aqnmf(&[
            "windrose", "-i", s(&data), "-p", "no2", "-k", "2", "--output-dir", s(&out), "--format", format,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        for l in 1..=2 {
            let body = fs::read_to_string(out.join(format!("windrose_NMF{l}.{ext}"))).unwrap();
            match ext {
                "csv" => assert!(body.contains("sector_deg_center,speed_bin_low,speed_bin_high,mass")),
                _ => assert!(body.contains("<svg") && body.starts_with("<!-- run-config")),
            }
        }
    }
}

#[test]
fn ingest_writes_wide_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("obs.csv");
    fs::write(
        &data,
        "timestamp,station,pollutant,value,wind_dir_deg,wind_speed_ms\n\
         2010-01-01T00:00,AA,SO2,1.5,90,2.0\n\
         2010-01-01T00:00,AB,SO2,2.5,,\n\
         2010-01-01T01:00,AA,SO2,NA,90,2.0\n\
         2010-01-01T01:00,AB,SO2,3.5,,\n\
         2010-01-01T02:00,AA,SO2,2.5,90,2.0\n\
         2010-01-01T02:00,AB,SO2,4.5,,\n\
         garbage line\n",
    )
    .unwrap();
    let out = dir.path().join("m.csv");
    let o = aqnmf(&["ingest", "-i", s(&data), "-p", "so2", "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("malformed lines: 1"));
    let body: Vec<String> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect();
    assert_eq!(
        body,
        [
            "timestamp,AA,AB",
            "2010-01-01T00:00,1.5,2.5",
            "2010-01-01T01:00,2,3.5",
            "2010-01-01T02:00,2.5,4.5"
        ]
    );

    let raw = dir.path().join("raw.csv");
    let o = aqnmf(&["ingest", "-i", s(&data), "-p", "so2", "-o", s(&raw), "--no-impute"]);
    assert!(o.status.success());
    assert!(fs::read_to_string(&raw).unwrap().contains("2010-01-01T01:00,,3.5"));

    let o = aqnmf(&["ingest", "-i", s(&data), "-p", "so2", "-o", s(&data)]);
    assert_eq!(o.status.code(), Some(1));
}

fn write_report(path: &Path, pollutant: Pollutant, domestic: f64) {
    let report = ApportionmentReport {
        pollutant,
        k: 2,
        features: Vec::new(),
        ratios: Ratios { domestic, transboundary: 100.0 - domestic },
        config: ReportConfig {
            thresholds: ClassifierConfig::default(),
            mode: NmfMode::Plain,
            seed: 0,
            iterations_run: 1,
            converged: true,
            provenance: None,
        },
    };
    fs::write(path, report.to_json()).unwrap();
}

#[test]
fn validate_reproduces_reference_comparisons() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = ["no2", "so2", "o3"].iter().map(|p| dir.path().join(format!("{p}.json"))).collect();
    write_report(&paths[0], Pollutant::NO2, 75.9);
    write_report(&paths[1], Pollutant::SO2, 26.9);
    write_report(&paths[2], Pollutant::O3, 22.7);
    let out = dir.path().join("validation.json");
    let o = aqnmf(&[
        "validate", "-r", s(&paths[0]), "-r", s(&paths[1]), "-r", s(&paths[2]), "--reference", "no2=70,so2=27,o3=25",
        "-o", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("NO2\t70\t75.9\t5.9\tpass"));
    assert!(text.contains("SO2\t27\t26.9\t0.1\tpass"));
    assert!(text.contains("O3\t25\t22.7\t2.3\tpass"));
    assert!(text.contains("all pass: true"));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["validation"]["all_pass"], true);

    let o = aqnmf(&["validate", "-r", s(&paths[0]), "--reference", "so2=27"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn apportion_csv_report_has_ratio_footer() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("report.csv");
    let o = aqnmf(&["apportion", "-i", s(&data), "-p", "no2", "-k", "2", "--format", "csv", "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let body = fs::read_to_string(&out).unwrap();
    assert!(body.starts_with("# run-config: "));
    assert!(body.lines().any(|l| l.starts_with("domestic_ratio,")));
    assert!(body.lines().any(|l| l.starts_with("transboundary_ratio,")));
}

#[test]
fn apportion_without_k_selects_a_rank() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let o = aqnmf(&["apportion", "-i", s(&data), "-p", "no2", "--k-min", "2", "--k-max", "3", "--runs", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = ApportionmentReport::from_json(&stdout(&o)).unwrap();
    let prov = report.config.provenance.unwrap();
    assert_eq!(prov["k"], report.k);
    assert_eq!(prov["extra"]["rank_selection"]["scores"].as_array().unwrap().len(), 2);
}
