use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use harchow::autok::KRule;
use harchow::chowtest::{Alternative, KPolicy, TestVariant};

#[derive(Debug, Parser)]
#[command(name = "harchow", version, about = "HAR-robust Chow test with series long-run variance estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a break test on CSV data.
    Test(TestArgs),
    /// Simulate a fixed-K limit distribution and store it in the cache.
    SimulateCv(SimulateCvArgs),
    /// Monte Carlo null rejection frequencies.
    McSize(McSizeArgs),
    /// Monte Carlo size-adjusted power.
    McPower(McPowerArgs),
    /// Write one draw of the Monte Carlo design to CSV.
    SimulateData(SimulateDataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Text,
}

#[derive(Debug, Args, Serialize)]
pub struct TestArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Dependent variable column.
    #[arg(long)]
    pub y: String,
    /// Regressors whose coefficients may break (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub x: Vec<String>,
    /// Regressors with stable coefficients, partialled out (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub z: Vec<String>,
    /// Add a constant column named `const` to the breaking regressors.
    #[arg(long)]
    pub intercept: bool,
    /// Subset of the breaking regressors to test; all of them by default.
    #[arg(long = "test-on", value_delimiter = ',')]
    pub test_on: Vec<String>,
    /// Break fraction.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Number of basis functions, or `auto`.
    #[arg(long, default_value = "auto")]
    pub k: KPolicy,
    /// Plug-in rule used by `--k auto`.
    #[arg(long = "k-rule", default_value = "index")]
    pub k_rule: KRule,
    #[arg(long, default_value = "f-transformed")]
    pub variant: TestVariant,
    /// Alternative for the t variants: two-sided, greater or less.
    #[arg(long, default_value = "two-sided")]
    pub alternative: Alternative,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Seed of the simulated nonstandard reference.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid size of the simulated nonstandard reference.
    #[arg(long = "limit-grid", default_value_t = harchow::fixedlimit::DEFAULT_GRID)]
    pub limit_grid: usize,
    /// Replications of the simulated nonstandard reference.
    #[arg(long = "limit-reps", default_value_t = harchow::fixedlimit::DEFAULT_REPS)]
    pub limit_reps: usize,
    /// Critical-value cache directory.
    #[arg(long = "cache-dir", env = "HARCHOW_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Report path; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateCvArgs {
    /// Number of restrictions.
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Basis family: fourier-raw or fourier-transformed.
    #[arg(long, default_value = "fourier-transformed")]
    pub family: String,
    /// Limit statistic: f_inf, f_star_inf, t_star_inf or scaled_f_inf.
    /// Defaults to scaled_f_inf for transformed bases and f_star_inf otherwise.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long, default_value_t = harchow::fixedlimit::DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = harchow::fixedlimit::DEFAULT_REPS)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also simulate on this grid size and report the quantile differences.
    #[arg(long = "compare-grid")]
    pub compare_grid: Option<usize>,
    #[arg(long = "cache-dir", env = "HARCHOW_CACHE_DIR", default_value = "harchow-cache")]
    pub cache_dir: PathBuf,
    /// Write the sorted draws as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Table1,
    Figure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// One column per design, one row per test.
    Wide,
    /// One row per design, test and K policy.
    Long,
    /// Per-K rejection curves.
    Figure,
}

#[derive(Debug, Args, Serialize)]
pub struct McSizeArgs {
    #[arg(long, value_enum, default_value_t = Preset::Table1)]
    pub preset: Preset,
    /// Sample sizes (comma separated).
    #[arg(long = "T", value_delimiter = ',', default_value = "100")]
    pub t: Vec<usize>,
    /// K policies: `auto`, a list `4,8,12` or a range `2:20:2`.
    /// Defaults to `auto` for table1 and `2:20:2` for figure.
    #[arg(long)]
    pub k: Option<String>,
    /// Designs to run: comma separated `rho:psi` pairs or 1-based indices
    /// into the eight preset designs.
    #[arg(long)]
    pub cells: Option<String>,
    #[arg(long = "lambda", default_value_t = harchow::mcstudy::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long = "k-rule", default_value = "index")]
    pub k_rule: KRule,
    /// Tests (comma separated).
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "chisq-fourier,nonstandard-fourier,chisq-transformed,f-transformed"
    )]
    pub variants: Vec<TestVariant>,
    #[arg(long, default_value_t = harchow::mcstudy::DEFAULT_REPS)]
    pub reps: usize,
    /// Use the full replication count of the published study.
    #[arg(long = "full-reps")]
    pub full_reps: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long = "limit-grid", default_value_t = harchow::fixedlimit::DEFAULT_GRID)]
    pub limit_grid: usize,
    #[arg(long = "limit-reps", default_value_t = harchow::fixedlimit::DEFAULT_REPS)]
    pub limit_reps: usize,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output layout. Defaults to wide for table1 and figure for figure.
    #[arg(long, value_enum)]
    pub layout: Option<Layout>,
    /// CSV path; standard output when omitted. A JSON sidecar with the
    /// configuration is written next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct McPowerArgs {
    #[arg(long = "T", default_value_t = 200)]
    pub t: usize,
    #[arg(long, default_value_t = 0.6, allow_negative_numbers = true)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub psi: f64,
    #[arg(long, default_value_t = harchow::mcstudy::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Break sizes: a list `0,0.5,1` or a range `0:1.2:0.2`.
    #[arg(long, default_value = "0:1.2:0.2")]
    pub deltas: String,
    #[arg(long, default_value = "auto")]
    pub k: KPolicy,
    #[arg(long = "k-rule", default_value = "index")]
    pub k_rule: KRule,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "chisq-fourier,nonstandard-fourier,chisq-transformed,f-transformed"
    )]
    pub variants: Vec<TestVariant>,
    #[arg(long, default_value_t = harchow::mcstudy::DEFAULT_REPS)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateDataArgs {
    #[arg(long = "T")]
    pub t: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub psi: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub delta: f64,
    #[arg(long, default_value_t = harchow::mcstudy::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}
