use std::fs::File;
use std::io::Write;
use std::time::Instant;

use credit_ensemble::calibration::{calibrate, CalibrationOptions, PricePanel};
use credit_ensemble::ensemble_returns::rescaled_density_curve;
use credit_ensemble::montecarlo::{
    compare_density, fingerprint, histogram, simulate_histogram, simulate_losses, CompareConfig, EmpiricalDensity,
    SimConfig,
};
use credit_ensemble::portfolio_loss::{limit_loss_curve, LossModel, LossQuadrature, PortfolioSize};
use log::info;

use crate::args::{CalibrateArgs, CompareArgs, LossArgs, ReturnDensityArgs, SimulateArgs};
use crate::config::{resolve_model, LossRun, PortfolioConfig, SimulateRun};
use crate::error::{CliError, CliResult};
use crate::io::{fmt_num, open_output, read_curve, read_histogram, write_curve, write_histogram, write_json};

pub fn calibrate_cmd(a: &CalibrateArgs) -> CliResult<()> {
    let file = File::open(&a.prices).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", a.prices.display())))?;
    let panel = PricePanel::from_csv(file)?;
    info!(
        "read {} tickers x {} dates ({} rows dropped)",
        panel.tickers().len(),
        panel.dates().len(),
        panel.dropped_rows()
    );
    let (horizon_days, unit) = a.horizon.days_and_unit();
    let opts = CalibrationOptions {
        horizon_days,
        unit,
        overlapping: a.overlapping,
        n_bounds: (a.n_min, a.n_max),
        method: a.method.into(),
    };
    let cal = calibrate(&panel, &opts)?;
    if let Some(path) = &a.histogram {
        if cal.rescaled.is_empty() {
            return Err(CliError::Data("no rescaled returns to histogram (returns could not be whitened)".into()));
        }
        let emp = EmpiricalDensity::from_values(&cal.rescaled, &a.histogram_bins, false)?;
        let mut comments = vec![("samples", cal.rescaled.len().to_string())];
        if let Some(n) = cal.report.n_hat {
            comments.push(("n_hat", fmt_num(n)));
        }
        write_histogram(Some(path), &comments, &emp)?;
    }
    write_json(a.report.as_deref(), &cal.report)
}

pub fn loss_cmd(a: &LossArgs) -> CliResult<()> {
    if a.z_order == 0 || a.max_z_order < a.z_order || !(a.rel_tol > 0.0) {
        return Err(CliError::Usage(
            "need 1 <= --z-order <= --max-z-order and a positive --rel-tol".into(),
        ));
    }
    let run = LossRun {
        command: "loss".into(),
        model: resolve_model(&a.model)?,
        grid: a.grid.clone(),
        quadrature: LossQuadrature {
            n_z: a.z_order,
            max_n_z: a.max_z_order,
            rel_tol: a.rel_tol,
            ..LossQuadrature::default()
        },
    };
    if a.model.print_config {
        return write_json(a.output.as_deref(), &run);
    }
    let m = &run.model;
    let start = Instant::now();
    let curve = match &m.portfolio {
        PortfolioConfig::Homogeneous(spec) if spec.size == PortfolioSize::Infinite => {
            limit_loss_curve(&run.grid, spec, &m.params, &m.horizon, &run.quadrature)?
        }
        pc => LossModel::new(&pc.finite()?, &m.params, &m.horizon, &run.quadrature)?.curve(&run.grid)?,
    };
    info!("evaluated {} points in {:.2?}", curve.abscissae.len(), start.elapsed());
    write_curve(a.output.as_deref(), "L", &curve)
}

pub fn simulate_cmd(a: &SimulateArgs) -> CliResult<()> {
    let run = SimulateRun {
        command: "simulate".into(),
        model: resolve_model(&a.model)?,
        simulation: SimConfig::with_batch_size(a.samples, a.seed, a.batch_size)?,
        bins: a.bins.clone(),
    };
    if a.model.print_config {
        return write_json(a.output.as_deref(), &run);
    }
    let m = &run.model;
    let pf = m.portfolio.finite()?;
    let start = Instant::now();
    let emp = match &a.samples_out {
        Some(path) => {
            let samples = simulate_losses(&pf, &m.params, &m.horizon, &run.simulation)?;
            let mut out = open_output(Some(path))?;
            writeln!(out, "# seed={}", run.simulation.seed)?;
            writeln!(out, "# fingerprint={}", samples.fingerprint)?;
            writeln!(out, "loss")?;
            for v in &samples.values {
                writeln!(out, "{}", fmt_num(*v))?;
            }
            out.flush()?;
            histogram(&samples, &run.bins)?
        }
        None => simulate_histogram(&pf, &m.params, &m.horizon, &run.simulation, &run.bins)?,
    };
    info!("simulated {} portfolios in {:.2?}", a.samples, start.elapsed());
    let comments = [
        ("seed", run.simulation.seed.to_string()),
        ("fingerprint", fingerprint(&pf, &m.params, &m.horizon)),
    ];
    write_histogram(a.output.as_deref(), &comments, &emp)
}

pub fn compare_cmd(a: &CompareArgs) -> CliResult<()> {
    let curve = read_curve(&a.analytic)?;
    let emp = read_histogram(&a.empirical)?;
    let cfg = CompareConfig {
        min_count: a.min_count,
        max_chi2_per_dof: a.max_chi2_per_dof,
        max_abs_z: a.max_abs_z,
    };
    let report = compare_density(&emp, &curve, &cfg)?;
    info!(
        "chi2/dof {:.3} over {} bins, max |z| {:.2}, pass {}",
        report.chi2_per_dof, report.dof, report.max_abs_z, report.pass
    );
    write_json(a.output.as_deref(), &report)
}

pub fn return_density_cmd(a: &ReturnDensityArgs) -> CliResult<()> {
    let curve = rescaled_density_curve(a.n_eff, &a.grid)?;
    write_curve(a.output.as_deref(), "r", &curve)
}

/// Caps the global worker pool.
pub fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    Ok(())
}
