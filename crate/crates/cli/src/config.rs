use std::path::Path;

use credit_ensemble::ensemble_returns::{EnsembleParams, GridSpec};
use credit_ensemble::montecarlo::{BinSpec, SimConfig};
use credit_ensemble::portfolio_loss::{
    HomogeneousSpec, Horizon, HorizonUnit, LossQuadrature, Obligor, Portfolio, PortfolioSize,
};
use serde::{Deserialize, Serialize};

use crate::args::{ModelArgs, Preset};
use crate::error::{CliError, CliResult};

/// Parameter values of a preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetValues {
    pub k: PortfolioSize,
    pub c: f64,
    pub n_eff: f64,
    pub mu: f64,
    pub rho: f64,
    pub t: f64,
    pub unit: HorizonUnit,
    pub f0: f64,
    pub v0: f64,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::MonthlyPaper => "monthly-paper",
            Preset::YearlyPaper => "yearly-paper",
        }
    }

    pub fn values(self) -> PresetValues {
        match self {
            Preset::MonthlyPaper => PresetValues {
                k: PortfolioSize::Finite(100),
                c: 0.26,
                n_eff: 4.2,
                mu: 0.013,
                rho: 0.1,
                t: 1.0,
                unit: HorizonUnit::Month,
                f0: 75.0,
                v0: 100.0,
            },
            Preset::YearlyPaper => PresetValues {
                k: PortfolioSize::Finite(100),
                c: 0.28,
                n_eff: 6.0,
                mu: 0.17,
                rho: 0.35,
                t: 1.0,
                unit: HorizonUnit::Year,
                f0: 75.0,
                v0: 100.0,
            },
        }
    }
}

/// Obligors of a run: a homogeneous specification or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortfolioConfig {
    Homogeneous(HomogeneousSpec),
    Obligors(Vec<Obligor>),
}

impl PortfolioConfig {
    pub fn finite(&self) -> CliResult<Portfolio> {
        match self {
            PortfolioConfig::Homogeneous(spec) => match spec.size {
                PortfolioSize::Infinite => Err(CliError::Usage(
                    "this command needs a finite portfolio; --K inf is only supported by `loss`".into(),
                )),
                PortfolioSize::Finite(_) => Ok(spec.portfolio()?),
            },
            PortfolioConfig::Obligors(obs) => Ok(Portfolio::new(obs.clone())?),
        }
    }
}

/// Resolved model of a `loss` or `simulate` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: Option<String>,
    pub params: EnsembleParams,
    pub portfolio: PortfolioConfig,
    pub horizon: Horizon,
}

/// Resolved configuration of `loss`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRun {
    pub command: String,
    pub model: ModelConfig,
    pub grid: GridSpec,
    pub quadrature: LossQuadrature,
}

/// Resolved configuration of `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRun {
    pub command: String,
    pub model: ModelConfig,
    pub simulation: SimConfig,
    pub bins: BinSpec,
}

fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing {flag} (give it explicitly or choose a --preset)")))
}

#[derive(Debug, Deserialize)]
struct ObligorRow {
    face_value: f64,
    initial_value: f64,
    drift: f64,
    vol: f64,
}

fn read_obligors(path: &Path) -> CliResult<Vec<Obligor>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: ObligorRow = row?;
        out.push(Obligor::new(row.face_value, row.initial_value, row.drift, row.vol)?);
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("{} lists no obligors", path.display())));
    }
    Ok(out)
}

pub fn resolve_model(a: &ModelArgs) -> CliResult<ModelConfig> {
    let base = a.preset.map(Preset::values);
    let pick = |flag: Option<f64>, preset: Option<f64>, name: &str| require(flag.or(preset), name);
    let c = pick(a.c, base.map(|b| b.c), "--c")?;
    let n_eff = pick(a.n_eff, base.map(|b| b.n_eff), "--N")?;
    let t = pick(a.t, base.map(|b| b.t), "--T")?;
    let unit = a.unit.map(HorizonUnit::from).or(base.map(|b| b.unit)).unwrap_or(HorizonUnit::Month);
    let params = EnsembleParams::new(c, n_eff)?;
    let horizon = Horizon::new(t, unit)?;
    let portfolio = match &a.portfolio {
        Some(path) => PortfolioConfig::Obligors(read_obligors(path)?),
        None => {
            let spec = HomogeneousSpec {
                f0: pick(a.f0, base.map(|b| b.f0), "--F0")?,
                v0: pick(a.v0, base.map(|b| b.v0), "--V0")?,
                mu0: pick(a.mu, base.map(|b| b.mu), "--mu")?,
                rho0: pick(a.rho, base.map(|b| b.rho), "--rho")?,
                size: require(a.k.or(base.map(|b| b.k)), "--K")?,
            };
            spec.obligor()?;
            PortfolioConfig::Homogeneous(spec)
        }
    };
    Ok(ModelConfig {
        preset: a.preset.map(|p| p.name().to_string()),
        params,
        portfolio,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty() -> ModelArgs {
        ModelArgs {
            preset: None,
            k: None,
            c: None,
            n_eff: None,
            mu: None,
            rho: None,
            t: None,
            unit: None,
            f0: None,
            v0: None,
            portfolio: None,
            print_config: false,
        }
    }

    #[test]
    fn flags_override_preset() {
        let mut a = empty();
        a.preset = Some(Preset::YearlyPaper);
        a.k = Some(PortfolioSize::Finite(10));
        let m = resolve_model(&a).unwrap();
        assert_eq!(m.params.c(), 0.28);
        assert_eq!(m.horizon.unit(), HorizonUnit::Year);
        match m.portfolio {
            PortfolioConfig::Homogeneous(s) => {
                assert_eq!(s.size, PortfolioSize::Finite(10));
                assert_eq!(s.rho0, 0.35);
            }
            _ => panic!("expected homogeneous portfolio"),
        }
    }

    #[test]
    fn missing_and_invalid_values_are_usage_errors() {
        assert!(matches!(resolve_model(&empty()), Err(CliError::Usage(_))));
        let mut a = empty();
        a.preset = Some(Preset::MonthlyPaper);
        a.rho = Some(0.0);
        assert!(matches!(resolve_model(&a), Err(CliError::Usage(_))));
    }
}
