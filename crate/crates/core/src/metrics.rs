//! Per-iteration training logs and their CSV form.

use std::io::Write;

use crate::analysis::{error_moments, ErrorTrace};
use crate::error::Result;

pub const METRICS_SCHEMA: &str = "nhop-eql metrics v1";

/// One logged iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub t: u64,
    /// Update ratio used at `t`; absent for single-table learners.
    pub u: Option<f64>,
    pub weights: Vec<f64>,
    /// APE of the fused iterate.
    pub ape: Option<f64>,
    /// APE of each learner's own table.
    pub learner_ape: Vec<f64>,
    /// `E_t = Q_it - Q*` at each probe cell.
    pub probe_errors: Vec<f64>,
    /// `X_t = Q_n - Q*`, learner-major: `[n * probes + p]`.
    pub learner_probe_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    /// `neql`, `simple` or `vi`.
    pub series: String,
    pub orders: Vec<usize>,
    pub probes: Vec<(usize, usize)>,
    pub rows: Vec<MetricsRow>,
    /// Time steps executed.
    pub iterations: u64,
    /// False when the iteration cap ended the run before the visit rule held.
    pub complete: bool,
    /// Samples drawn while estimating the model, 0 when none was estimated.
    pub estimation_samples: u64,
}

impl MetricsLog {
    pub fn new(series: &str, orders: Vec<usize>, probes: Vec<(usize, usize)>) -> Self {
        Self {
            series: series.to_string(),
            orders,
            probes,
            rows: Vec::new(),
            iterations: 0,
            complete: false,
            estimation_samples: 0,
        }
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn final_ape(&self) -> Option<f64> {
        self.last().and_then(|r| r.ape)
    }

    /// `w_t^(n)` over the logged rows.
    pub fn weight_series(&self, n: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.weights[n]).collect()
    }

    pub fn error_trace(&self) -> ErrorTrace {
        let p = self.probes.len();
        let k = self.orders.len();
        let has_learners = self.rows.first().is_some_and(|r| r.learner_probe_errors.len() == k * p);
        ErrorTrace {
            t: self.rows.iter().map(|r| r.t).collect(),
            probes: self.probes.clone(),
            ensemble: (0..p).map(|i| self.rows.iter().map(|r| r.probe_errors[i]).collect()).collect(),
            learners: if has_learners {
                (0..k)
                    .map(|n| {
                        (0..p)
                            .map(|i| self.rows.iter().map(|r| r.learner_probe_errors[n * p + i]).collect())
                            .collect()
                    })
                    .collect()
            } else {
                Vec::new()
            },
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string(), "u".to_string()];
        cols.extend(self.orders.iter().map(|n| format!("w_n{n}")));
        cols.push("ape".into());
        cols.extend(self.orders.iter().map(|n| format!("ape_n{n}")));
        for &(s, a) in &self.probes {
            cols.push(format!("e_s{s}_a{a}"));
            cols.push(format!("e_mean_s{s}_a{a}"));
            cols.push(format!("e_var_s{s}_a{a}"));
        }
        for n in &self.orders {
            for &(s, a) in &self.probes {
                cols.push(format!("x_n{n}_s{s}_a{a}"));
            }
        }
        cols
    }

    /// Writes the log as CSV. Windowed moments use `window` rows on each side
    /// and are left empty where the window does not fit.
    pub fn write_csv(&self, mut out: impl Write, window: usize) -> Result<()> {
        writeln!(
            out,
            "# {METRICS_SCHEMA} series={} iterations={} complete={}",
            self.series, self.iterations, self.complete
        )?;
        let trace = self.error_trace();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        let k = self.orders.len();
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![row.t.to_string(), opt(row.u)];
            rec.extend(row.weights.iter().map(|x| num(*x)));
            rec.push(opt(row.ape));
            rec.extend((0..k).map(|n| opt(row.learner_ape.get(n).copied())));
            for (p, e) in row.probe_errors.iter().enumerate() {
                rec.push(num(*e));
                match error_moments(&trace.ensemble[p], i, window) {
                    Ok((m, v)) => rec.extend([num(m), num(v)]),
                    Err(_) => rec.extend([String::new(), String::new()]),
                }
            }
            let missing = k * self.probes.len() - row.learner_probe_errors.len().min(k * self.probes.len());
            rec.extend(row.learner_probe_errors.iter().map(|x| num(*x)));
            rec.extend(std::iter::repeat_n(String::new(), missing));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> MetricsLog {
        let mut log = MetricsLog::new("neql", vec![1, 2], vec![(0, 1)]);
        for t in 0..5 {
            log.rows.push(MetricsRow {
                t,
                u: Some(t as f64 / 10.0),
                weights: vec![0.6, 0.4],
                ape: Some(0.5),
                learner_ape: vec![0.5, 0.25],
                probe_errors: vec![t as f64],
                learner_probe_errors: vec![1.0, -1.0],
            });
        }
        log.iterations = 5;
        log.complete = true;
        log
    }

    #[test]
    fn csv_has_schema_line_and_fixed_columns() {
        let mut buf = Vec::new();
        sample_log().write_csv(&mut buf, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# nhop-eql metrics v1 series=neql iterations=5 complete=true");
        assert_eq!(
            lines.next().unwrap(),
            "t,u,w_n1,w_n2,ape,ape_n1,ape_n2,e_s0_a1,e_mean_s0_a1,e_var_s0_a1,x_n1_s0_a1,x_n2_s0_a1"
        );
        assert_eq!(lines.next().unwrap(), "0,0.0,0.6,0.4,0.5,0.5,0.25,0.0,,,1.0,-1.0");
        assert!(lines.next().unwrap().starts_with("1,0.1,0.6,0.4,0.5,0.5,0.25,1.0,1.0,"));
    }

    #[test]
    fn trace_is_column_major() {
        let trace = sample_log().error_trace();
        assert_eq!(trace.t, vec![0, 1, 2, 3, 4]);
        assert_eq!(trace.ensemble, vec![vec![0.0, 1.0, 2.0, 3.0, 4.0]]);
        assert_eq!(trace.learners[1][0], vec![-1.0; 5]);
    }
}
