use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use credit_ensemble::calibration::FitMethod;
use credit_ensemble::ensemble_returns::GridSpec;
use credit_ensemble::montecarlo::BinSpec;
use credit_ensemble::portfolio_loss::{HorizonUnit, PortfolioSize};

/// Ensemble-averaged credit portfolio loss distributions.
#[derive(Debug, Parser)]
#[command(name = "credit-ensemble", version)]
pub struct Cli {
    /// Worker threads for parallel evaluation (default: all cores).
    #[arg(long, global = true, env = "CREDIT_ENSEMBLE_THREADS")]
    pub threads: Option<usize>,

    /// Increase log verbosity on standard error (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate c, N, drift and volatility from a wide price CSV.
    Calibrate(CalibrateArgs),
    /// Averaged loss density on a grid, as CSV `L,density`.
    Loss(LossArgs),
    /// Monte Carlo loss histogram of the full model.
    Simulate(SimulateArgs),
    /// Compare an analytic curve with an empirical histogram.
    Compare(CompareArgs),
    /// Density of the rotated and rescaled returns, as CSV `r,density`.
    ReturnDensity(ReturnDensityArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    MonthlyPaper,
    YearlyPaper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnitArg {
    Month,
    Year,
    Day,
}

impl From<UnitArg> for HorizonUnit {
    fn from(u: UnitArg) -> Self {
        match u {
            UnitArg::Month => HorizonUnit::Month,
            UnitArg::Year => HorizonUnit::Year,
            UnitArg::Day => HorizonUnit::TradingDay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Maximum likelihood.
    Ml,
    /// Least squares on the log histogram.
    Ls,
}

impl From<MethodArg> for FitMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ml => FitMethod::MaximumLikelihood,
            MethodArg::Ls => FitMethod::LogHistogramLeastSquares,
        }
    }
}

/// Return horizon of a calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizonArg {
    Month,
    Year,
    Days(usize),
}

impl HorizonArg {
    pub fn days_and_unit(self) -> (usize, HorizonUnit) {
        match self {
            HorizonArg::Month => (20, HorizonUnit::Month),
            HorizonArg::Year => (252, HorizonUnit::Year),
            HorizonArg::Days(d) => (d, HorizonUnit::TradingDay),
        }
    }
}

fn parse_horizon(s: &str) -> Result<HorizonArg, String> {
    match s {
        "month" => Ok(HorizonArg::Month),
        "year" => Ok(HorizonArg::Year),
        _ => match s.parse::<usize>() {
            Ok(d) if d >= 1 => Ok(HorizonArg::Days(d)),
            _ => Err(format!("expected month, year or a positive number of trading days, got {s:?}")),
        },
    }
}

fn parse_size(s: &str) -> Result<PortfolioSize, String> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(PortfolioSize::Infinite);
    }
    match s.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(PortfolioSize::Finite(k)),
        _ => Err(format!("expected a positive integer or inf, got {s:?}")),
    }
}

/// `(kind, lo, hi, n)` from `kind:lo:hi:n`.
fn split_range(s: &str) -> Result<(&str, f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 4 {
        return Err(format!("expected KIND:LO:HI:COUNT, got {s:?}"));
    }
    let num = |p: &str| p.parse::<f64>().map_err(|_| format!("bad number {p:?} in {s:?}"));
    let n = parts[3].parse::<usize>().map_err(|_| format!("bad count {:?} in {s:?}", parts[3]))?;
    Ok((parts[0], num(parts[1])?, num(parts[2])?, n))
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number {p:?}")))
        .collect()
}

/// `linear:LO:HI:POINTS`, `log:LO:HI:POINTS` or `list:X1,X2,...`.
pub fn parse_grid(s: &str) -> Result<GridSpec, String> {
    if let Some(rest) = s.strip_prefix("list:") {
        return parse_list(rest).map(GridSpec::Explicit);
    }
    match split_range(s)? {
        ("linear", lo, hi, points) => Ok(GridSpec::Linear { lo, hi, points }),
        ("log", lo, hi, points) => Ok(GridSpec::Log { lo, hi, points }),
        (kind, ..) => Err(format!("unknown grid kind {kind:?}")),
    }
}

/// `linear:LO:HI:BINS`, `log:LO:HI:BINS` or `edges:E0,E1,...`.
pub fn parse_bins(s: &str) -> Result<BinSpec, String> {
    if let Some(rest) = s.strip_prefix("edges:") {
        return parse_list(rest).map(BinSpec::Edges);
    }
    match split_range(s)? {
        ("linear", lo, hi, bins) => Ok(BinSpec::Linear { lo, hi, bins }),
        ("log", lo, hi, bins) => Ok(BinSpec::Log { lo, hi, bins }),
        (kind, ..) => Err(format!("unknown bin kind {kind:?}")),
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Wide CSV: `date,TICKER1,TICKER2,...` with ISO-8601 dates.
    pub prices: PathBuf,

    /// Return horizon: month (20 days), year (252 days) or a number of trading days.
    #[arg(long, default_value = "month", value_parser = parse_horizon)]
    pub horizon: HorizonArg,

    /// Use overlapping return windows.
    #[arg(long)]
    pub overlapping: bool,

    /// Objective of the fit of N.
    #[arg(long, value_enum, default_value_t = MethodArg::Ml)]
    pub method: MethodArg,

    /// Lower search bound for N.
    #[arg(long, default_value_t = 2.05)]
    pub n_min: f64,

    /// Upper search bound for N.
    #[arg(long, default_value_t = 50.0)]
    pub n_max: f64,

    /// Write the fit report here instead of standard output.
    #[arg(long)]
    pub report: Option<PathBuf>,

    /// Write the histogram of the pooled rescaled returns here.
    #[arg(long)]
    pub histogram: Option<PathBuf>,

    /// Bins of the rescaled-return histogram.
    #[arg(long, default_value = "linear:-10:10:200", value_parser = parse_bins)]
    pub histogram_bins: BinSpec,
}

/// Model parameters shared by `loss` and `simulate`; explicit flags
/// override the preset.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Published monthly (c=0.26, N=4.2) or yearly (c=0.28, N=6) parameter set.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,

    /// Number of obligors, or `inf` for the infinite-portfolio limit.
    #[arg(long = "K", value_parser = parse_size)]
    pub k: Option<PortfolioSize>,

    /// Mean correlation c.
    #[arg(long = "c")]
    pub c: Option<f64>,

    /// Fluctuation parameter N.
    #[arg(long = "N")]
    pub n_eff: Option<f64>,

    /// Drift per horizon unit.
    #[arg(long = "mu", allow_negative_numbers = true)]
    pub mu: Option<f64>,

    /// Volatility per square-root horizon unit.
    #[arg(long = "rho")]
    pub rho: Option<f64>,

    /// Maturity in horizon units.
    #[arg(long = "T")]
    pub t: Option<f64>,

    /// Horizon unit of T, mu and rho.
    #[arg(long, value_enum)]
    pub unit: Option<UnitArg>,

    /// Face value of each obligor.
    #[arg(long = "F0")]
    pub f0: Option<f64>,

    /// Initial asset value of each obligor.
    #[arg(long = "V0")]
    pub v0: Option<f64>,

    /// CSV of obligors (`face_value,initial_value,drift,vol`) replacing the homogeneous portfolio.
    #[arg(long, conflicts_with_all = ["k", "f0", "v0", "mu", "rho"])]
    pub portfolio: Option<PathBuf>,

    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Evaluation grid in L.
    #[arg(long, default_value = "log:1e-3:0.5:100", value_parser = parse_grid)]
    pub grid: GridSpec,

    /// Initial Gauss-Laguerre order of the z integral.
    #[arg(long, default_value_t = 64)]
    pub z_order: usize,

    /// Largest Gauss-Laguerre order of the z integral.
    #[arg(long, default_value_t = 2048)]
    pub max_z_order: usize,

    /// Relative tolerance between successive z orders.
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,

    /// Output file (default: standard output).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Number of simulated portfolios.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,

    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Samples per random stream.
    #[arg(long, default_value_t = 4096)]
    pub batch_size: usize,

    /// Histogram bins in L.
    #[arg(long, default_value = "log:1e-5:1:200", value_parser = parse_bins)]
    pub bins: BinSpec,

    /// Histogram output file (default: standard output).
    #[arg(short, long)]
    pub output: Option<PathBuf>,

    /// Also write the individual simulated losses here.
    #[arg(long)]
    pub samples_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Analytic curve CSV with two columns (abscissa, density).
    pub analytic: PathBuf,

    /// Empirical histogram CSV as written by `simulate` or `calibrate --histogram`.
    pub empirical: PathBuf,

    /// Bins with fewer counts are ignored.
    #[arg(long, default_value_t = 100)]
    pub min_count: u64,

    /// Pass threshold on chi-square per degree of freedom.
    #[arg(long, default_value_t = 1.5)]
    pub max_chi2_per_dof: f64,

    /// Pass threshold on the largest per-bin |z|.
    #[arg(long, default_value_t = 4.0)]
    pub max_abs_z: f64,

    /// Output file (default: standard output).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReturnDensityArgs {
    /// Fluctuation parameter N.
    #[arg(long = "N")]
    pub n_eff: f64,

    /// Evaluation grid in rescaled returns.
    #[arg(long, default_value = "linear:-40:40:2001", value_parser = parse_grid)]
    pub grid: GridSpec,

    /// Output file (default: standard output).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}
