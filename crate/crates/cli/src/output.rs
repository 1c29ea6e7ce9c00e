use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{Context, Result};
use ballbox_core::report::{fmt_num, Table};
use ballbox_core::VerificationReport;

use crate::Format;

pub fn emit(reports: &[VerificationReport], format: Format, out: Option<&Path>) -> Result<()> {
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    match format {
        Format::Report => write_report(&mut sink, reports)?,
        Format::Csv => write_csv(&mut sink, reports)?,
    }
    sink.flush()?;
    Ok(())
}

fn write_report(w: &mut dyn Write, reports: &[VerificationReport]) -> Result<()> {
    for r in reports {
        write!(w, "{r}")?;
        if let Some(t) = &r.table {
            write_aligned(w, t)?;
        }
        writeln!(w)?;
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    writeln!(w, "summary: {passed} passed, {} failed", reports.len() - passed)?;
    Ok(())
}

fn write_aligned(w: &mut dyn Write, t: &Table) -> Result<()> {
    let mut widths: Vec<usize> = t.columns.iter().map(|c| c.len()).collect();
    for row in &t.rows {
        for (k, cell) in row.iter().enumerate() {
            widths[k] = widths[k].max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, n)| format!("{c:<n$}")).collect();
        format!("  {}", padded.join("  ").trim_end())
    };
    writeln!(w, "{}", line(&t.columns))?;
    for row in &t.rows {
        writeln!(w, "{}", line(row))?;
    }
    Ok(())
}

/// One block per report: its table when it has one, otherwise its metrics as
/// `check,metric,value`. Blocks are separated by an empty line.
fn write_csv(w: &mut dyn Write, reports: &[VerificationReport]) -> Result<()> {
    for (i, r) in reports.iter().enumerate() {
        if i > 0 {
            writeln!(w)?;
        }
        let mut out = csv::WriterBuilder::new().flexible(false).from_writer(Vec::new());
        match &r.table {
            Some(t) => {
                out.write_record(&t.columns)?;
                for row in &t.rows {
                    out.write_record(row)?;
                }
            }
            None => {
                out.write_record(["check", "metric", "value"])?;
                out.write_record([r.check.as_str(), "passed", if r.passed { "1" } else { "0" }])?;
                for (k, v) in &r.metrics {
                    out.write_record([r.check.as_str(), k.as_str(), &fmt_num(*v)])?;
                }
            }
        }
        w.write_all(&out.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?;
    }
    Ok(())
}

/// `FAIL<TAB>check<TAB>reason` for every failure of every report.
pub fn failure_lines(reports: &[VerificationReport]) -> Vec<String> {
    let mut lines = Vec::new();
    for r in reports.iter().filter(|r| !r.passed) {
        if r.failures.is_empty() {
            lines.push(format!("FAIL\t{}\tfailed", r.check));
        }
        for f in &r.failures {
            lines.push(format!("FAIL\t{}\t{}", r.check, f.replace(['\t', '\n'], " ")));
        }
    }
    lines
}
