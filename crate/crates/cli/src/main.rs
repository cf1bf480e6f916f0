mod commands;
mod provenance;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use aqnmf_core::{Error, NmfMode, Pollutant};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Source apportionment of hourly air-quality data with NMF and
/// pollution-weighted wind roses.
#[derive(Debug, Parser)]
#[command(name = "aqnmf", version)]
struct Cli {
    /// Base random seed. Printed on every run.
    #[arg(long, global = true, env = "AQNMF_SEED", default_value_t = 0)]
    seed: u64,

    /// Worker threads for consensus runs (0 = all cores). Results do not
    /// depend on this setting.
    #[arg(long, global = true, env = "AQNMF_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert an observation CSV into the wide hours × stations matrix.
    Ingest(IngestArgs),
    /// Score k over a range by consensus clustering and choose one.
    SelectRank(SelectRankArgs),
    /// Factorize at a fixed k and write W, H and metadata.
    Factorize(FactorizeArgs),
    /// Write one pollution-weighted wind rose per feature.
    Windrose(WindroseArgs),
    /// Full pipeline: factorize, classify every feature, report ratios.
    Apportion(ApportionArgs),
    /// Compare domestic ratios of reports against reference values.
    Validate(ValidateArgs),
    /// Generate a synthetic dataset with planted factors and wind regimes.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Observation CSV (timestamp,station,pollutant,value,wind_dir_deg,wind_speed_ms).
    #[arg(long, short)]
    input: PathBuf,
    /// Pollutant to analyse (SO2, NO2, PM10, PM25, O3).
    #[arg(long, short)]
    pollutant: Pollutant,
    /// Longest interior gap (hours) filled by linear interpolation; longer
    /// gaps take the station mean.
    #[arg(long, default_value_t = aqnmf_core::ingest::DEFAULT_MAX_GAP_HOURS)]
    max_gap: usize,
    /// Fail on missing values instead of imputing them.
    #[arg(long)]
    no_impute: bool,
}

#[derive(Debug, Args)]
struct NmfArgs {
    #[arg(long, default_value_t = NmfMode::Plain)]
    mode: NmfMode,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
}

#[derive(Debug, Args)]
struct RangeArgs {
    #[arg(long, conflicts_with = "k_range")]
    k_min: Option<usize>,
    #[arg(long, conflicts_with = "k_range")]
    k_max: Option<usize>,
    /// Inclusive range such as `2..7`.
    #[arg(long, value_parser = parse_k_range)]
    k_range: Option<(usize, usize)>,
    /// Factorizations per candidate rank.
    #[arg(long, default_value_t = 20)]
    runs: usize,
}

impl RangeArgs {
    fn bounds(&self) -> (usize, usize) {
        self.k_range
            .unwrap_or((self.k_min.unwrap_or(2), self.k_max.unwrap_or(7)))
    }

    fn given(&self) -> bool {
        self.k_min.is_some() || self.k_max.is_some() || self.k_range.is_some()
    }
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    /// Peak speed (m/s) at or above which a feature is transboundary.
    #[arg(long, default_value_t = 5.5)]
    strong_threshold: f64,
    /// Strong-wind mass fraction required by the seasonal rule.
    #[arg(long, default_value_t = 0.25)]
    strong_fraction: f64,
    /// Winter+spring activation percentage required by the seasonal rule.
    #[arg(long, default_value_t = 60.0)]
    winter_spring: f64,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SelectRankArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    nmf: NmfArgs,
    #[command(flatten)]
    range: RangeArgs,
    /// Also write the rho(k) table as JSON.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FactorizeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    nmf: NmfArgs,
    #[arg(long, short)]
    k: usize,
    /// Directory receiving W.csv, H.csv and metadata.json.
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RoseFormat {
    Csv,
    Svg,
}

#[derive(Debug, Args)]
struct WindroseArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    nmf: NmfArgs,
    #[arg(long, short)]
    k: usize,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = RoseFormat::Csv)]
    format: RoseFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct ApportionArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    nmf: NmfArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    /// Fixed rank; when absent the rank is selected over the k range.
    #[arg(long, short, conflicts_with_all = ["k_min", "k_max", "k_range"])]
    k: Option<usize>,
    #[command(flatten)]
    range: RangeArgs,
    /// Report path; printed to stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Apportionment report(s) in JSON form.
    #[arg(long = "report", short, required = true)]
    reports: Vec<PathBuf>,
    /// Reference domestic ratios, e.g. `no2=70,so2=27,o3=25`.
    #[arg(long)]
    reference: aqnmf_core::ReferenceRatios,
    /// Allowed absolute deviation in percentage points.
    #[arg(long, default_value_t = aqnmf_core::apportion::DEFAULT_VALIDATION_TOLERANCE)]
    tolerance: f64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeName {
    LowWind,
    Monsoon,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 24 * 365)]
    hours: usize,
    #[arg(long, default_value_t = 14)]
    stations: usize,
    #[arg(long, default_value_t = 2)]
    k_true: usize,
    /// Regime per planted feature; cycles low-wind, monsoon when absent.
    #[arg(long, value_enum, value_delimiter = ',')]
    sources: Vec<RegimeName>,
    /// Relative noise level in [0, 0.5].
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Upper bound of off-block station loadings.
    #[arg(long, default_value_t = aqnmf_core::synth::DEFAULT_MIXING)]
    mixing: f64,
    /// Stations per feature in contiguous blocks.
    #[arg(long, value_delimiter = ',')]
    cluster_sizes: Vec<usize>,
    /// Planted contribution percentages per feature.
    #[arg(long, value_delimiter = ',')]
    shares: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    missing_rate: f64,
    #[arg(long, short, default_value_t = Pollutant::NO2)]
    pollutant: Pollutant,
    /// First hour, `YYYY-MM-DDTHH:MM`.
    #[arg(long, default_value = "2010-01-01T00:00")]
    start: String,
    /// Dataset CSV in the ingest format.
    #[arg(long, short)]
    output: PathBuf,
    /// Ground-truth JSON (labels, station groups, planted shares).
    #[arg(long)]
    truth: PathBuf,
}

fn parse_k_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected LOW..HIGH, got {s:?}"))?;
    let lo = a.trim().parse().map_err(|_| format!("invalid lower bound {a:?}"))?;
    let hi = b.trim().parse().map_err(|_| format!("invalid upper bound {b:?}"))?;
    Ok((lo, hi))
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    /// 1 for bad parameters, 2 for unreadable or invalid data, 3 for
    /// numerical failures.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Core(e) => core_exit_code(e),
        }
    }
}

fn core_exit_code(e: &Error) -> u8 {
    match e {
        Error::Range(_) | Error::Rank { .. } | Error::Domain(_) => 1,
        Error::Io(_)
        | Error::Format(_)
        | Error::Conflict { .. }
        | Error::Imputation(_)
        | Error::InvalidMatrix(_)
        | Error::NegativeEntry { .. }
        | Error::EmptyRose(_)
        | Error::Coverage(_)
        | Error::Size(_) => 2,
        Error::Degenerate(_) | Error::UndefinedShare(_) | Error::Shape { .. } => 3,
        Error::Factorize { source, .. } | Error::Feature { source, .. } => core_exit_code(source),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not configure {n} threads: {e}");
        }
    }
    eprintln!("seed: {}", cli.seed);
    let result = match &cli.command {
        Command::Ingest(a) => commands::ingest(a, cli.seed),
        Command::SelectRank(a) => commands::select_rank(a, cli.seed),
        Command::Factorize(a) => commands::factorize(a, cli.seed),
        Command::Windrose(a) => commands::windrose(a, cli.seed),
        Command::Apportion(a) => commands::apportion(a, cli.seed),
        Command::Validate(a) => commands::validate(a, cli.seed),
        Command::Synth(a) => commands::synth(a, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
