use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use credit_ensemble::ensemble_returns::{CurveMeta, DensityCurve};
use credit_ensemble::montecarlo::EmpiricalDensity;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Number with 12 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

/// Buffered writer to `path`, or standard output.
pub fn open_output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn write_curve(path: Option<&Path>, header: &str, curve: &DensityCurve) -> CliResult<()> {
    let mut out = open_output(path)?;
    writeln!(out, "{header},density")?;
    for (x, y) in curve.abscissae.iter().zip(&curve.values) {
        writeln!(out, "{},{}", fmt_num(*x), fmt_num(*y))?;
    }
    out.flush()?;
    Ok(())
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn parse_field(field: &str, path: &Path, line: usize) -> CliResult<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{}:{line}: bad number {field:?}", path.display())))
}

/// Two-column curve CSV with a header row; `#` lines are ignored.
pub fn read_curve(path: &Path) -> CliResult<DensityCurve> {
    let text = read_text(path)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(CliError::Usage(format!("{}:{}: expected two columns", path.display(), i + 1)));
        }
        xs.push(parse_field(fields[0], path, i + 1)?);
        ys.push(parse_field(fields[1], path, i + 1)?);
    }
    Ok(DensityCurve::new(
        xs,
        ys,
        CurveMeta {
            label: path.display().to_string(),
            ..CurveMeta::default()
        },
    )?)
}

/// Histogram CSV: `# key=value` comment lines, then `lo,hi,count,density,std_error`.
pub fn write_histogram(path: Option<&Path>, comments: &[(&str, String)], emp: &EmpiricalDensity) -> CliResult<()> {
    let mut out = open_output(path)?;
    for (k, v) in comments {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "# total={}", emp.total)?;
    writeln!(out, "# zero_count={}", emp.zero_count)?;
    writeln!(out, "# below_count={}", emp.below_count)?;
    writeln!(out, "# above_count={}", emp.above_count)?;
    writeln!(out, "lo,hi,count,density,std_error")?;
    for i in 0..emp.counts.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_num(emp.edges[i]),
            fmt_num(emp.edges[i + 1]),
            emp.counts[i],
            fmt_num(emp.densities[i]),
            fmt_num(emp.std_errors[i])
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_histogram(path: &Path) -> CliResult<EmpiricalDensity> {
    let text = read_text(path)?;
    let mut total = None;
    let mut zero_count = 0;
    let mut edges: Vec<f64> = Vec::new();
    let mut counts = Vec::new();
    let mut header_seen = false;
    let bad = |line: usize, what: &str| CliError::Usage(format!("{}:{line}: {what}", path.display()));
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.trim().split_once('=') {
                match k.trim() {
                    "total" => total = Some(v.trim().parse::<u64>().map_err(|_| bad(i + 1, "bad total"))?),
                    "zero_count" => zero_count = v.trim().parse::<u64>().map_err(|_| bad(i + 1, "bad zero_count"))?,
                    _ => {}
                }
            }
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(bad(i + 1, "expected lo,hi,count"));
        }
        let lo = parse_field(fields[0], path, i + 1)?;
        let hi = parse_field(fields[1], path, i + 1)?;
        match edges.last() {
            None => edges.push(lo),
            Some(&last) if last == lo => {}
            Some(_) => return Err(bad(i + 1, "bins are not contiguous")),
        }
        edges.push(hi);
        counts.push(fields[2].trim().parse::<u64>().map_err(|_| bad(i + 1, "bad count"))?);
    }
    let total = total.ok_or_else(|| CliError::Usage(format!("{}: missing `# total=` line", path.display())))?;
    Ok(EmpiricalDensity::from_counts(edges, counts, total, zero_count)?)
}
