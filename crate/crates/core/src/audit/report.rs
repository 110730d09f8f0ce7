//! Rendering an [`AuditReport`] as JSON, CSV or a markdown table.

use std::fmt::Write as _;

use super::{AuditReport, OutputFormat};
use crate::error::Result;
use crate::search::{SearchMode, SweepRow};

/// Renders `report`. JSON carries everything; CSV and markdown carry the
/// sweep tables (markdown adds the verdict and model summary).
pub fn emit_report(report: &AuditReport, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s)
        }
        OutputFormat::Csv => {
            // Tables are separated by a blank line; `csv_tables` gives them
            // one by one.
            let parts = csv_tables(report)?;
            Ok(parts
                .into_iter()
                .map(|(_, t)| t)
                .collect::<Vec<_>>()
                .join("\n"))
        }
        OutputFormat::Markdown => Ok(markdown(report)),
    }
}

/// One CSV table per sweep, each with the header
/// `epsilon,exact_influence,approx_estimate,approx_actual_influence`.
pub fn csv_tables(report: &AuditReport) -> Result<Vec<(SearchMode, String)>> {
    report
        .sweeps
        .iter()
        .map(|t| {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "epsilon",
                "exact_influence",
                "approx_estimate",
                "approx_actual_influence",
            ])?;
            for r in &t.rows {
                w.write_record([
                    r.epsilon.to_string(),
                    r.exact_influence.to_string(),
                    r.approx_estimate.to_string(),
                    r.approx_actual_influence.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| e.into_error())?;
            Ok((
                t.mode,
                String::from_utf8(bytes).expect("csv output is utf-8"),
            ))
        })
        .collect()
}

/// File-name tag for a sweep mode.
pub fn mode_name(mode: SearchMode) -> &'static str {
    match mode {
        SearchMode::General => "general",
        SearchMode::Nonexempt => "nonexempt",
    }
}

/// Row label and the quantity it shows.
type Line = (&'static str, fn(&SweepRow) -> f64);

fn markdown(report: &AuditReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Proxy audit: `{}`\n", report.protected);
    let _ = writeln!(s, "Verdict: **{}**\n", report.verdict.as_str());
    let m = &report.model;
    let _ = write!(s, "Model ({}): intercept {:.4}", m.source, m.intercept);
    for c in &m.coefficients {
        let _ = write!(s, ", {} {:.4}", c.input, c.coefficient);
    }
    if let Some(r2) = m.r_squared {
        let _ = write!(s, ", R² {r2:.4}");
    }
    s.push_str("\n\n");
    let p = &report.parity;
    let _ = write!(s, "Asc(Ŷ, Z) {:.4}", p.asc_prediction_protected);
    if let Some(g) = p.gap {
        let _ = write!(s, ", parity gap {g:.4}");
    }
    s.push_str("\n\n");
    if let Some(e) = &report.exempt {
        let _ = writeln!(
            s,
            "Exempt input `{}`: Asc {:.4}, ε′ {:.4}\n",
            e.input, e.association, e.epsilon_prime
        );
    }
    for t in &report.sweeps {
        let _ = writeln!(
            s,
            "## {} (δ = {:.4})\n",
            mode_name(t.mode),
            report.thresholds.delta
        );
        // One column per threshold, one row per quantity.
        s.push_str("| ε |");
        for r in &t.rows {
            let short = format!("{:.2}", r.epsilon);
            if short.parse::<f64>() == Ok(r.epsilon) {
                let _ = write!(s, " {short} |");
            } else {
                let _ = write!(s, " {} |", r.epsilon);
            }
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(t.rows.len()));
        s.push('\n');
        let lines: [Line; 3] = [
            ("exact influence", |r| r.exact_influence),
            ("approx estimate", |r| r.approx_estimate),
            ("approx actual influence", |r| r.approx_actual_influence),
        ];
        for (label, get) in lines {
            let _ = write!(s, "| {label} |");
            for r in &t.rows {
                let _ = write!(s, " {:.4} |", get(r));
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}
