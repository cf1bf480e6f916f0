use std::fmt::Write as _;
use std::path::Path;

use aqnmf_core::apportion::build_profile;
use aqnmf_core::ingest::{format_timestamp, parse_timestamp, write_matrix_csv, write_records};
use aqnmf_core::rank::RankSelection;
use aqnmf_core::synth::SourceRegime;
use aqnmf_core::{
    assemble, factorize as fit, impute, parse_records, ApportionmentReport, ClassifierConfig, DataMatrix, Error,
    FactorModel, ImputePolicy, NmfConfig, Scenario, WindField, WindRecord,
};
use serde_json::json;

use crate::provenance::{read_input, sha256_hex, write_artifact, RunConfig};
use crate::{
    ApportionArgs, CliError, FactorizeArgs, IngestArgs, InputArgs, NmfArgs, RegimeName, ReportFormat, RoseFormat,
    SelectRankArgs, SynthArgs, ThresholdArgs, ValidateArgs, WindroseArgs,
};

type CliResult = Result<(), CliError>;

struct Loaded {
    raw: DataMatrix,
    winds: Vec<WindRecord>,
    sha256: String,
    malformed: usize,
}

fn load(a: &InputArgs) -> Result<Loaded, CliError> {
    let bytes = read_input(&a.input)?;
    let sha256 = sha256_hex(&bytes);
    let parsed = parse_records(bytes.as_slice())?;
    if !parsed.malformed.is_empty() {
        eprintln!("warning: skipped {} malformed line(s)", parsed.malformed.len());
        for m in parsed.malformed.iter().take(5) {
            eprintln!("  line {}: {}", m.line, m.reason);
        }
    }
    let (raw, winds) = assemble(&parsed.rows, a.pollutant)?;
    Ok(Loaded {
        raw,
        winds,
        sha256,
        malformed: parsed.malformed.len(),
    })
}

/// The matrix handed to factorization: imputed unless `--no-impute`, in
/// which case any gap is an error.
fn complete(loaded: &Loaded, a: &InputArgs) -> Result<DataMatrix, CliError> {
    if loaded.raw.is_complete() {
        return Ok(loaded.raw.clone());
    }
    if a.no_impute {
        let missing = loaded.raw.mask().iter().filter(|o| !**o).count();
        return Err(Error::Format(format!("{missing} missing value(s) and --no-impute was given")).into());
    }
    Ok(impute(&loaded.raw, ImputePolicy::InterpolateThenMean, a.max_gap)?)
}

fn base_config(command: &str, seed: u64, a: &InputArgs, sha256: &str) -> RunConfig {
    let mut cfg = RunConfig::new(command, seed);
    cfg.input = Some(a.input.display().to_string());
    cfg.input_sha256 = Some(sha256.to_string());
    cfg.pollutant = Some(a.pollutant);
    cfg.impute = Some(if a.no_impute {
        "none".to_string()
    } else {
        format!("interpolate_then_mean(max_gap_hours={})", a.max_gap)
    });
    cfg
}

fn nmf_config(n: &NmfArgs, seed: u64, cfg: &mut RunConfig) -> Result<NmfConfig, CliError> {
    let nmf = NmfConfig {
        max_iter: n.max_iter,
        tol: n.tol,
        mode: n.mode,
        seed,
        ..Default::default()
    };
    nmf.validate()?;
    cfg.tol = Some(n.tol);
    cfg.max_iter = Some(n.max_iter);
    cfg.mode = Some(n.mode);
    Ok(nmf)
}

fn thresholds(t: &ThresholdArgs) -> Result<ClassifierConfig, CliError> {
    let c = ClassifierConfig {
        strong_threshold_ms: t.strong_threshold,
        strong_fraction_threshold: t.strong_fraction,
        winter_spring_threshold: t.winter_spring,
    };
    let ok = c.strong_threshold_ms.is_finite()
        && c.strong_threshold_ms >= 0.0
        && (0.0..=1.0).contains(&c.strong_fraction_threshold)
        && (0.0..=100.0).contains(&c.winter_spring_threshold);
    if !ok {
        return Err(CliError::Usage(format!("invalid classifier thresholds {c:?}")));
    }
    Ok(c)
}

fn factorize_checked(data: &DataMatrix, k: usize, nmf: &NmfConfig) -> Result<FactorModel, CliError> {
    let model = fit(data.values(), k, nmf)?;
    if !model.converged {
        eprintln!(
            "warning: k = {k} did not converge within {} iterations (final cost {})",
            nmf.max_iter, model.final_cost
        );
    }
    Ok(model)
}

fn pretty(value: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn ingest(a: &IngestArgs, seed: u64) -> CliResult {
    let loaded = load(&a.input)?;
    let dm = if a.input.no_impute {
        loaded.raw.clone()
    } else {
        complete(&loaded, &a.input)?
    };
    let mut cfg = base_config("ingest", seed, &a.input, &loaded.sha256);
    cfg.output = Some(a.output.display().to_string());
    cfg.format = Some("csv".into());

    let mut out = cfg.csv_header().into_bytes();
    write_matrix_csv(&dm, &mut out)?;
    write_artifact(&a.output, &out, &[&a.input.input])?;

    let missing = loaded.raw.mask().iter().filter(|o| !**o).count();
    let cells = loaded.raw.mask().len();
    println!("hours: {}", dm.hours());
    println!("stations: {}", dm.station_count());
    println!(
        "missing cells: {missing} ({:.2}%)",
        100.0 * missing as f64 / cells.max(1) as f64
    );
    println!("malformed lines: {}", loaded.malformed);
    println!("wind records: {}", loaded.winds.len());
    Ok(())
}

fn run_selection(
    data: &DataMatrix,
    range: (usize, usize),
    runs: usize,
    seed: u64,
    nmf: &NmfConfig,
) -> Result<RankSelection, CliError> {
    let sel = aqnmf_core::select_rank(data.values(), range.0, range.1, runs, seed, nmf)?;
    for w in &sel.warnings {
        eprintln!("warning: {w}");
    }
    Ok(sel)
}

fn print_scores(sel: &RankSelection) {
    println!("k\trho");
    for s in &sel.scores {
        println!("{}\t{:.6}", s.k, s.rho);
    }
    println!("chosen k = {}", sel.k);
}

pub fn select_rank(a: &SelectRankArgs, seed: u64) -> CliResult {
    let loaded = load(&a.input)?;
    let data = complete(&loaded, &a.input)?;
    let mut cfg = base_config("select-rank", seed, &a.input, &loaded.sha256);
    let nmf = nmf_config(&a.nmf, seed, &mut cfg)?;
    let range = a.range.bounds();
    cfg.k_range = Some([range.0, range.1]);
    cfg.runs = Some(a.range.runs);

    let sel = run_selection(&data, range, a.range.runs, seed, &nmf)?;
    print_scores(&sel);
    if let Some(path) = &a.output {
        cfg.output = Some(path.display().to_string());
        cfg.format = Some("json".into());
        let doc = json!({ "provenance": cfg.to_value(), "selection": sel });
        write_artifact(path, &pretty(&doc), &[&a.input.input])?;
    }
    Ok(())
}

fn feature_names(k: usize) -> Vec<String> {
    (1..=k).map(|l| format!("NMF{l}")).collect()
}

pub fn factorize(a: &FactorizeArgs, seed: u64) -> CliResult {
    let loaded = load(&a.input)?;
    let data = complete(&loaded, &a.input)?;
    let mut cfg = base_config("factorize", seed, &a.input, &loaded.sha256);
    let nmf = nmf_config(&a.nmf, seed, &mut cfg)?;
    cfg.k = Some(a.k);
    cfg.output = Some(a.output_dir.display().to_string());
    cfg.format = Some("csv".into());
    let model = factorize_checked(&data, a.k, &nmf)?;
    let names = feature_names(a.k);
    let header = cfg.csv_header();

    let mut w = header.clone();
    let _ = writeln!(w, "timestamp,{}", names.join(","));
    for (i, t) in data.timestamps().iter().enumerate() {
        let row: Vec<String> = model.w.row(i).iter().map(f64::to_string).collect();
        let _ = writeln!(w, "{},{}", format_timestamp(t), row.join(","));
    }
    let mut h = header;
    let _ = writeln!(h, "feature,{}", data.stations().join(","));
    for (l, name) in names.iter().enumerate() {
        let row: Vec<String> = model.h.row(l).iter().map(f64::to_string).collect();
        let _ = writeln!(h, "{name},{}", row.join(","));
    }
    let shares = aqnmf_core::contribution_shares(&model)?;
    let meta = json!({
        "provenance": cfg.to_value(),
        "k": model.k,
        "mode": model.mode,
        "seed": model.seed,
        "iterations_run": model.iterations_run,
        "final_cost": model.final_cost,
        "converged": model.converged,
        "hours": data.hours(),
        "stations": data.stations(),
        "share_percent": shares,
    });

    let inputs = [a.input.input.as_path()];
    write_artifact(&a.output_dir.join("W.csv"), w.as_bytes(), &inputs)?;
    write_artifact(&a.output_dir.join("H.csv"), h.as_bytes(), &inputs)?;
    write_artifact(&a.output_dir.join("metadata.json"), &pretty(&meta), &inputs)?;
    println!(
        "k = {}: cost {} after {} iterations (converged: {})",
        model.k, model.final_cost, model.iterations_run, model.converged
    );
    Ok(())
}

pub fn windrose(a: &WindroseArgs, seed: u64) -> CliResult {
    let loaded = load(&a.input)?;
    let data = complete(&loaded, &a.input)?;
    let mut cfg = base_config("windrose", seed, &a.input, &loaded.sha256);
    let nmf = nmf_config(&a.nmf, seed, &mut cfg)?;
    cfg.k = Some(a.k);
    cfg.output = Some(a.output_dir.display().to_string());
    let ext = match a.format {
        RoseFormat::Csv => "csv",
        RoseFormat::Svg => "svg",
    };
    cfg.format = Some(ext.into());
    let model = factorize_checked(&data, a.k, &nmf)?;
    let winds = WindField::from_records(&data, &loaded.winds)?;

    for (l, name) in feature_names(a.k).iter().enumerate() {
        let rose = build_profile(&model, l, &data, &winds)?.windrose;
        let body = match a.format {
            RoseFormat::Csv => format!("{}{}", cfg.csv_header(), rose.to_csv()),
            RoseFormat::Svg => {
                let json = serde_json::to_string(&cfg).expect("run config serializes").replace("--", "-\u{2010}");
                format!("<!-- run-config: {json} -->\n{}", rose.to_svg(&format!("{} {name}", data.pollutant())))
            }
        };
        let path = a.output_dir.join(format!("windrose_{name}.{ext}"));
        write_artifact(&path, body.as_bytes(), &[&a.input.input])?;
        println!(
            "{name}: peak {} m/s, strong-wind fraction {:.3} -> {}",
            rose.peak_speed_ms().unwrap_or(0.0),
            rose.strong_wind_fraction(),
            path.display()
        );
    }
    Ok(())
}

pub fn apportion(a: &ApportionArgs, seed: u64) -> CliResult {
    let loaded = load(&a.input)?;
    let data = complete(&loaded, &a.input)?;
    let mut cfg = base_config("apportion", seed, &a.input, &loaded.sha256);
    let nmf = nmf_config(&a.nmf, seed, &mut cfg)?;
    let thresholds = thresholds(&a.thresholds)?;
    cfg.thresholds = Some(thresholds);
    cfg.format = Some(match a.format {
        ReportFormat::Json => "json".into(),
        ReportFormat::Csv => "csv".into(),
    });
    cfg.output = a.output.as_ref().map(|p| p.display().to_string());

    let k = match a.k {
        Some(k) => k,
        None => {
            let range = a.range.bounds();
            cfg.k_range = Some([range.0, range.1]);
            cfg.runs = Some(a.range.runs);
            if !a.range.given() {
                eprintln!("no k given; selecting over {}..{}", range.0, range.1);
            }
            let sel = run_selection(&data, range, a.range.runs, seed, &nmf)?;
            eprintln!("selected k = {}", sel.k);
            cfg.extra = Some(json!({ "rank_selection": sel }));
            sel.k
        }
    };
    cfg.k = Some(k);

    let model = factorize_checked(&data, k, &nmf)?;
    let winds = WindField::from_records(&data, &loaded.winds)?;
    let mut report = aqnmf_core::apportion(&model, &data, &winds, &thresholds)?;
    report.config.provenance = Some(cfg.to_value());

    let body = match a.format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => format!("{}{}", cfg.csv_header(), report.to_csv()),
    };
    match &a.output {
        Some(path) => {
            write_artifact(path, body.as_bytes(), &[&a.input.input])?;
            for f in &report.features {
                println!(
                    "{}: {:.2}% {:?} ({:?})",
                    f.name, f.share_percent, f.verdict, f.triggered_rule
                );
            }
            println!(
                "domestic {:.2}%, transboundary {:.2}%",
                report.ratios.domestic, report.ratios.transboundary
            );
        }
        None => print!("{body}"),
    }
    Ok(())
}

pub fn validate(a: &ValidateArgs, seed: u64) -> CliResult {
    if !(a.tolerance >= 0.0 && a.tolerance.is_finite()) {
        return Err(CliError::Usage(format!("tolerance must be non-negative, got {}", a.tolerance)));
    }
    let mut reports = Vec::new();
    let mut sources = Vec::new();
    for path in &a.reports {
        let bytes = read_input(path)?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| Error::Format(format!("{} is not UTF-8", path.display())))?;
        reports.push(ApportionmentReport::from_json(&text)?);
        sources.push(json!({ "path": path.display().to_string(), "sha256": sha256_hex(&bytes) }));
    }
    let result = aqnmf_core::validate_against(&reports, &a.reference, a.tolerance)?;

    println!("pollutant\treference\tobserved\tdeviation\tverdict");
    for r in &result.rows {
        println!(
            "{}\t{}\t{:.1}\t{}\t{}",
            r.pollutant,
            r.reference,
            r.observed,
            r.deviation,
            if r.pass { "pass" } else { "fail" }
        );
    }
    println!("all pass: {}", result.all_pass);

    if let Some(path) = &a.output {
        let mut cfg = RunConfig::new("validate", seed);
        cfg.output = Some(path.display().to_string());
        cfg.format = Some("json".into());
        cfg.extra = Some(json!({ "reports": sources, "reference": a.reference, "tolerance": a.tolerance }));
        let doc = json!({ "provenance": cfg.to_value(), "validation": result });
        let inputs: Vec<&Path> = a.reports.iter().map(|p| p.as_path()).collect();
        write_artifact(path, &pretty(&doc), &inputs)?;
    }
    Ok(())
}

pub fn synth(a: &SynthArgs, seed: u64) -> CliResult {
    let mut s = Scenario::new(a.hours, a.stations, a.k_true, seed);
    s.start = parse_timestamp(&a.start).map_err(|e| CliError::Usage(format!("--start: {e}")))?;
    s.noise_level = a.noise;
    s.mixing = a.mixing;
    s.missing_rate = a.missing_rate;
    s.pollutant = a.pollutant;
    s.sources = if a.sources.is_empty() {
        (0..a.k_true)
            .map(|l| if l % 2 == 0 { SourceRegime::low_wind() } else { SourceRegime::monsoon() })
            .collect()
    } else {
        a.sources
            .iter()
            .map(|r| match r {
                RegimeName::LowWind => SourceRegime::low_wind(),
                RegimeName::Monsoon => SourceRegime::monsoon(),
            })
            .collect()
    };
    if !a.cluster_sizes.is_empty() {
        s.cluster_sizes = Some(a.cluster_sizes.clone());
    }
    if !a.shares.is_empty() {
        s.target_shares = Some(a.shares.clone());
    }
    let ds = aqnmf_core::gen_dataset(&s)?;

    let mut cfg = RunConfig::new("synth", seed);
    cfg.output = Some(a.output.display().to_string());
    cfg.pollutant = Some(a.pollutant);
    cfg.k = Some(a.k_true);
    cfg.format = Some("csv".into());
    cfg.extra = Some(json!({ "scenario": s, "truth": a.truth.display().to_string() }));

    let mut data = cfg.csv_header().into_bytes();
    write_records(&ds.data, &ds.winds, &mut data)?;
    let truth = json!({ "provenance": cfg.to_value(), "truth": ds.truth });
    write_artifact(&a.output, &data, &[])?;
    write_artifact(&a.truth, &pretty(&truth), &[])?;
    println!(
        "{} hours x {} stations, k_true = {}, labels {:?}",
        ds.data.hours(),
        ds.data.station_count(),
        ds.truth.k_true,
        ds.truth.labels
    );
    Ok(())
}
