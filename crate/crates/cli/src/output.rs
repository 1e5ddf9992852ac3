//! CSV and JSON writers.
//!
//! Sweep CSV columns, in order:
//! `protocol, bit_interval_us, threshold, analytics_error,
//! analytics_ci_halfwidth, simulation_error, simulation_ci_halfwidth`.
//! Engines that did not run leave their cells empty.
//!
//! Physics CSV columns: `check, observed, expected, sigma, deviation,
//! tolerance, passed`.

use std::io::Write;

use anyhow::Result;

use crate::experiments::Report;
use crate::spec::Format;

pub const SWEEP_HEADER: [&str; 7] = [
    "protocol",
    "bit_interval_us",
    "threshold",
    "analytics_error",
    "analytics_ci_halfwidth",
    "simulation_error",
    "simulation_ci_halfwidth",
];

pub const PHYSICS_HEADER: [&str; 7] = ["check", "observed", "expected", "sigma", "deviation", "tolerance", "passed"];

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(report: &Report, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(ph) = &report.physics {
        w.write_record(PHYSICS_HEADER)?;
        for c in &ph.checks {
            w.write_record([
                c.name.clone(),
                c.observed.to_string(),
                c.expected.to_string(),
                c.sigma.to_string(),
                c.deviation.to_string(),
                c.tolerance.to_string(),
                c.passed.to_string(),
            ])?;
        }
    } else {
        w.write_record(SWEEP_HEADER)?;
        for r in report.rows.iter().flatten() {
            w.write_record([
                r.protocol.clone(),
                r.bit_interval_us.to_string(),
                r.threshold.to_string(),
                cell(r.analytics_error),
                cell(r.analytics_ci_halfwidth),
                cell(r.simulation_error),
                cell(r.simulation_ci_halfwidth),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(report: &Report, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report)?;
    writeln!(out)?;
    Ok(())
}

pub fn write_report<W: Write>(report: &Report, format: Format, out: W) -> Result<()> {
    match format {
        Format::Csv => write_csv(report, out),
        Format::Json => write_json(report, out),
    }
}

/// The schema JSON reports validate against.
pub const SCHEMA: &str = include_str!("../schema/report.schema.json");
