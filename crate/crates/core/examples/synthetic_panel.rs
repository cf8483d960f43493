//! Writes a synthetic wide price CSV whose daily log returns are drawn from
//! the ensemble sampler.
//!
//! ```text
//! cargo run --example synthetic_panel -- [K] [DAYS] [C] [N] [SEED] > prices.csv
//! ```

use chrono::{Datelike, Days, NaiveDate, Weekday};
use credit_ensemble::ensemble_returns::{sample_returns, CovarianceSpec};

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let k: usize = arg(&args, 1, 20);
    let days: usize = arg(&args, 2, 2500);
    let c: f64 = arg(&args, 3, 0.26);
    let n_eff: f64 = arg(&args, 4, 4.2);
    let seed: u64 = arg(&args, 5, 42);
    let vol = 0.02;

    let cov = CovarianceSpec::one_factor(vec![vol; k], c)?;
    let r = sample_returns(&cov, n_eff, days, seed)?;
    let mut prices = vec![100.0; k];
    let mut date = NaiveDate::from_ymd_opt(2000, 1, 3).ok_or("bad start date")?;

    let header: Vec<String> = (0..k).map(|j| format!("S{j:03}")).collect();
    println!("date,{}", header.join(","));
    for t in 0..=days {
        let row: Vec<String> = prices.iter().map(|p| format!("{p:.6}")).collect();
        println!("{},{}", date.format("%Y-%m-%d"), row.join(","));
        if t == days {
            break;
        }
        for (j, p) in prices.iter_mut().enumerate() {
            *p *= (r[(t, j)] + 0.0003 - 0.5 * vol * vol).exp();
        }
        date = date + Days::new(1);
        while matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
            date = date + Days::new(1);
        }
    }
    Ok(())
}
