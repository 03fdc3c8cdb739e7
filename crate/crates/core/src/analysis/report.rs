use std::io::Write;

use crate::error::Result;
use crate::metrics::num;

pub const REPORT_SCHEMA: &str = "nhop-eql report v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
    /// Recorded, not asserted.
    Informational,
}

impl Outcome {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Informational => "informational",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub instance: String,
    pub statistic: String,
    pub value: f64,
    pub threshold: Option<f64>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<CheckRow>,
}

impl Report {
    pub fn assert(&mut self, check: &str, instance: &str, statistic: &str, value: f64, threshold: f64, pass: bool) {
        self.rows.push(CheckRow {
            check: check.into(),
            instance: instance.into(),
            statistic: statistic.into(),
            value,
            threshold: Some(threshold),
            outcome: Outcome::from_bool(pass),
        });
    }

    pub fn note(&mut self, check: &str, instance: &str, statistic: &str, value: f64) {
        self.rows.push(CheckRow {
            check: check.into(),
            instance: instance.into(),
            statistic: statistic.into(),
            value,
            threshold: None,
            outcome: Outcome::Informational,
        });
    }

    pub fn extend(&mut self, other: Report) {
        self.rows.extend(other.rows);
    }

    /// Every asserted row passed.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.outcome != Outcome::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| r.outcome == Outcome::Fail)
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "# {REPORT_SCHEMA}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check", "instance", "statistic", "value", "threshold", "pass"])?;
        for r in &self.rows {
            w.write_record([
                r.check.as_str(),
                r.instance.as_str(),
                r.statistic.as_str(),
                &num(r.value),
                &r.threshold.map(num).unwrap_or_default(),
                r.outcome.label(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
