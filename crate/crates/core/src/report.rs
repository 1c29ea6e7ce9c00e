//! Verification reports and tabular output.

use std::fmt;

use serde::Serialize;

/// Numeric evidence for one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub check: String,
    pub passed: bool,
    pub metrics: Vec<(String, f64)>,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
    pub table: Option<Table>,
}

impl VerificationReport {
    pub fn new(check: impl Into<String>) -> VerificationReport {
        VerificationReport {
            check: check.into(),
            passed: true,
            metrics: Vec::new(),
            failures: Vec::new(),
            notes: Vec::new(),
            table: None,
        }
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn fail(&mut self, why: impl Into<String>) {
        self.passed = false;
        self.failures.push(why.into());
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    /// Fails the report with `why` unless `ok`.
    pub fn require(&mut self, ok: bool, why: impl Into<String>) {
        if !ok {
            self.fail(why);
        }
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}] {}", if self.passed { "PASS" } else { "FAIL" }, self.check)?;
        for (k, v) in &self.metrics {
            writeln!(f, "  {k} = {}", fmt_num(*v))?;
        }
        for n in &self.notes {
            writeln!(f, "  note: {n}")?;
        }
        for e in &self.failures {
            writeln!(f, "  failure: {e}")?;
        }
        Ok(())
    }
}

/// Shortest round-trip representation; independent of locale.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Table {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failures_flip_the_verdict() {
        let mut r = VerificationReport::new("demo");
        r.metric("x", 0.5);
        r.require(true, "never");
        assert!(r.passed);
        r.require(false, "x too small");
        assert!(!r.passed);
        assert_eq!(r.get("x"), Some(0.5));
        let text = r.to_string();
        assert!(text.starts_with("[FAIL] demo"));
        assert!(text.contains("x = 5e-1"));
    }
}
