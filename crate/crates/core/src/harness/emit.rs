//! Table and plot-data emission: CSV, markdown, and JSON lines.
//!
//! Table formats print floats at 4 decimals, matching the precision the
//! rejection tables are read at; JSON lines carry full precision.

use std::io::Write;

use crate::error::Result;
use crate::harness::{CurveRow, RejectionTable};
use crate::wald::WaldReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Markdown,
    JsonLines,
}

impl OutputFormat {
    pub fn parse(s: &str) -> crate::error::Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "md" | "markdown" => Ok(OutputFormat::Markdown),
            "jsonl" | "json-lines" => Ok(OutputFormat::JsonLines),
            other => Err(crate::error::Error::Config(format!(
                "unknown format {other:?} (expected csv, md, or jsonl)"
            ))),
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Markdown => "md",
            OutputFormat::JsonLines => "jsonl",
        }
    }
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

/// Full-precision JSON for any serializable report type.
pub fn to_json_string<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("value serializes")
}

fn table_headers(levels: &[f64]) -> Vec<String> {
    let mut cols = vec![
        "test".to_string(),
        "n".to_string(),
        "d_lambda".to_string(),
        "d_tau".to_string(),
        "h".to_string(),
        "error".to_string(),
        "basis".to_string(),
        "mode".to_string(),
    ];
    for &l in levels {
        cols.push(format!("asy_{}", percent(l)));
    }
    for &l in levels {
        cols.push(format!("chi_{}", percent(l)));
    }
    for &l in levels {
        cols.push(format!("se_chi_{}", percent(l)));
    }
    cols.extend([
        "stat_mean".to_string(),
        "stat_var".to_string(),
        "quad_ratio".to_string(),
        "failures".to_string(),
        "reps".to_string(),
    ]);
    cols
}

fn percent(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}pct", pct.round() as i64)
    } else {
        format!("{pct}pct")
    }
}

fn table_cells(table: &RejectionTable) -> Vec<Vec<String>> {
    table
        .rows
        .iter()
        .map(|row| {
            let mut cells = vec![
                row.test.to_string(),
                row.n.to_string(),
                row.d_lambda.to_string(),
                row.d_tau.map(|v| v.to_string()).unwrap_or_default(),
                row.h.to_string(),
                row.error_dist.to_string(),
                row.basis.to_string(),
                if row.alternative { "power" } else { "size" }.to_string(),
            ];
            if row.failed {
                let blank = table.levels.len() * 3;
                cells.extend(std::iter::repeat_n("failed".to_string(), blank));
                cells.extend([String::new(), String::new(), String::new()]);
            } else {
                cells.extend(row.asy_rates.iter().map(|&v| f4(v)));
                cells.extend(row.chi_rates.iter().map(|&v| f4(v)));
                cells.extend(row.chi_se.iter().map(|&v| f4(v)));
                cells.extend([f4(row.stat_mean), f4(row.stat_var), f4(row.quad_ratio_mean)]);
            }
            cells.extend([row.failures.to_string(), row.reps.to_string()]);
            cells
        })
        .collect()
}

pub fn write_rejection_table<W: Write>(
    table: &RejectionTable,
    format: OutputFormat,
    out: &mut W,
) -> Result<()> {
    match format {
        OutputFormat::JsonLines => {
            for row in &table.rows {
                writeln!(out, "{}", serde_json::to_string(row).expect("row serializes"))?;
            }
        }
        OutputFormat::Csv => {
            writeln!(out, "{}", table_headers(&table.levels).join(","))?;
            for cells in table_cells(table) {
                writeln!(out, "{}", cells.join(","))?;
            }
        }
        OutputFormat::Markdown => {
            let headers = table_headers(&table.levels);
            writeln!(out, "| {} |", headers.join(" | "))?;
            writeln!(
                out,
                "|{}|",
                headers.iter().map(|_| " --- ").collect::<Vec<_>>().join("|")
            )?;
            for cells in table_cells(table) {
                writeln!(out, "| {} |", cells.join(" | "))?;
            }
            let footnotes: Vec<String> = table
                .rows
                .iter()
                .filter(|r| r.failures > 0)
                .map(|r| format!("{}: {} of {} replications failed", r.key, r.failures, r.reps))
                .collect();
            if !footnotes.is_empty() {
                writeln!(out)?;
                for note in footnotes {
                    writeln!(out, "> {note}")?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_reports<W: Write>(
    reports: &[WaldReport],
    format: OutputFormat,
    out: &mut W,
) -> Result<()> {
    match format {
        OutputFormat::JsonLines => {
            for r in reports {
                writeln!(out, "{}", r.to_json_line())?;
            }
        }
        OutputFormat::Csv => {
            writeln!(out, "test,statistic,block_dim,quad_form,asy_p,chi_p,dropped_instruments")?;
            for r in reports {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.test_id,
                    f4(r.statistic),
                    r.block_dim,
                    f4(r.quad_form),
                    f4(r.asy_p),
                    f4(r.chi_p),
                    r.dropped_instruments
                )?;
            }
        }
        OutputFormat::Markdown => {
            writeln!(
                out,
                "| test | statistic | block_dim | quad_form | asy_p | chi_p |"
            )?;
            writeln!(out, "| --- | --- | --- | --- | --- | --- |")?;
            for r in reports {
                writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} |",
                    r.test_id,
                    f4(r.statistic),
                    r.block_dim,
                    f4(r.quad_form),
                    f4(r.asy_p),
                    f4(r.chi_p)
                )?;
            }
        }
    }
    Ok(())
}

/// Curve/plot data: columns z, delta1_hat..deltaK_hat, sum, lo95, hi95.
pub fn write_curve<W: Write>(rows: &[CurveRow], format: OutputFormat, out: &mut W) -> Result<()> {
    let k = rows.first().map(|r| r.delta_hat.len()).unwrap_or(0);
    let headers: Vec<String> = std::iter::once("z".to_string())
        .chain((1..=k).map(|i| format!("delta{i}_hat")))
        .chain(["sum".to_string(), "lo95".to_string(), "hi95".to_string()])
        .collect();
    match format {
        OutputFormat::JsonLines => {
            for r in rows {
                writeln!(out, "{}", serde_json::to_string(r).expect("row serializes"))?;
            }
        }
        OutputFormat::Csv => {
            writeln!(out, "{}", headers.join(","))?;
            for r in rows {
                let mut cells = vec![f4(r.z)];
                cells.extend(r.delta_hat.iter().map(|&v| f4(v)));
                cells.extend([f4(r.sum), f4(r.lo95), f4(r.hi95)]);
                writeln!(out, "{}", cells.join(","))?;
            }
        }
        OutputFormat::Markdown => {
            writeln!(out, "| {} |", headers.join(" | "))?;
            writeln!(
                out,
                "|{}|",
                headers.iter().map(|_| " --- ").collect::<Vec<_>>().join("|")
            )?;
            for r in rows {
                let mut cells = vec![f4(r.z)];
                cells.extend(r.delta_hat.iter().map(|&v| f4(v)));
                cells.extend([f4(r.sum), f4(r.lo95), f4(r.hi95)]);
                writeln!(out, "| {} |", cells.join(" | "))?;
            }
        }
    }
    Ok(())
}
