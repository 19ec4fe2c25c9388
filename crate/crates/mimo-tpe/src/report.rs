//! CSV output. Floats use six decimals, fields are comma separated and lines
//! end in `\n`, so a fixed seed gives byte-identical files.

use std::io::Write;

use crate::error::Result;
use crate::simkit::{CsvRow, OptimizerRow};

pub const SWEEP_HEADER: [&str; 11] = [
    "sweep_name",
    "sweep_value",
    "scheme",
    "J",
    "drop_count",
    "trial_count",
    "avg_rate_emp",
    "avg_rate_det",
    "stderr",
    "min_rate_emp",
    "xi_star",
];

pub const OPTIMIZER_HEADER: [&str; 8] =
    ["drop", "J", "xi_star", "xi_max", "rank_gap", "feasibility_margin", "iterations", "w"];

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

pub fn write_sweep<W: Write>(out: W, rows: &[CsvRow]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.sweep_name.clone(),
            num(r.sweep_value),
            r.scheme.clone(),
            r.order.to_string(),
            r.drop_count.to_string(),
            r.trial_count.to_string(),
            num(r.avg_rate_emp),
            num(r.avg_rate_det),
            num(r.stderr),
            num(r.min_rate_emp),
            r.xi_star.map(num).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Coefficients are `;`-separated within a cell and `|`-separated across cells.
pub fn write_optimizer<W: Write>(out: W, rows: &[OptimizerRow]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(OPTIMIZER_HEADER)?;
    for r in rows {
        let coeffs = r
            .w
            .iter()
            .map(|cell| cell.iter().map(|&x| format!("{x:.9e}")).collect::<Vec<_>>().join(";"))
            .collect::<Vec<_>>()
            .join("|");
        w.write_record([
            r.drop.to_string(),
            r.order.to_string(),
            num(r.xi_star),
            num(r.xi_max),
            num(r.rank_gap),
            format!("{:.6e}", r.feasibility_margin),
            r.iterations.to_string(),
            coeffs,
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
