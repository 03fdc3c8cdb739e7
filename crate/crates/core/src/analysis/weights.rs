use crate::metrics::MetricsLog;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightConvergence {
    /// Weight of each order at the last logged row.
    pub final_weights: Vec<f64>,
    /// First logged `t` after which no weight moves by `tol` or more over the
    /// lag; `None` when the last row still moves.
    pub converged_at: Option<u64>,
    /// Orders sorted by final weight, largest first.
    pub ordering: Vec<usize>,
    /// Lag in logged rows.
    pub lag: usize,
}

fn change(log: &MetricsLog, i: usize, lag: usize) -> f64 {
    let j = i.saturating_sub(lag);
    log.rows[i]
        .weights
        .iter()
        .zip(&log.rows[j].weights)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Convergence of the weight trajectories, with the lag set to
/// `window_frac` of the logged rows (at least one row).
pub fn weight_convergence(log: &MetricsLog, window_frac: f64, tol: f64) -> WeightConvergence {
    let rows = log.rows.len();
    let lag = ((rows as f64 * window_frac) as usize).max(1);
    let mut converged = None;
    for i in (0..rows).rev() {
        if change(log, i, lag) >= tol {
            break;
        }
        converged = Some(log.rows[i].t);
    }
    let final_weights = log.rows.last().map(|r| r.weights.clone()).unwrap_or_default();
    let mut idx: Vec<usize> = (0..final_weights.len()).collect();
    idx.sort_by(|&a, &b| final_weights[b].total_cmp(&final_weights[a]).then(a.cmp(&b)));
    WeightConvergence {
        ordering: idx.into_iter().map(|i| log.orders[i]).collect(),
        final_weights,
        converged_at: converged,
        lag,
    }
}

/// Over the last `tail_frac` of the rows, no weight moves by `tol` or more
/// across `lag` rows.
pub fn weights_settled(log: &MetricsLog, tail_frac: f64, lag: usize, tol: f64) -> bool {
    let rows = log.rows.len();
    let start = rows - ((rows as f64 * tail_frac) as usize).min(rows);
    (start..rows).all(|i| change(log, i, lag.max(1)) < tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricsRow;

    fn log_from(weights: impl Fn(u64) -> Vec<f64>, n: u64) -> MetricsLog {
        let mut log = MetricsLog::new("neql", vec![1, 2, 3], Vec::new());
        for t in 0..n {
            log.rows.push(MetricsRow {
                t,
                u: Some(0.0),
                weights: weights(t),
                ape: None,
                learner_ape: Vec::new(),
                probe_errors: Vec::new(),
                learner_probe_errors: Vec::new(),
            });
        }
        log
    }

    #[test]
    fn constant_weights_converge_immediately() {
        let log = log_from(|_| vec![0.5, 0.2, 0.3], 100);
        let c = weight_convergence(&log, 0.1, 1e-3);
        assert_eq!(c.converged_at, Some(0));
        assert_eq!(c.ordering, vec![1, 3, 2]);
        assert!(weights_settled(&log, 0.2, 10, 0.01));
    }

    #[test]
    fn flat_after_a_ramp() {
        let ramp = |t: u64| {
            let x = 0.2 * (t.min(500) as f64 / 500.0);
            vec![0.4 + x, 0.3 - x / 2.0, 0.3 - x / 2.0]
        };
        let log = log_from(ramp, 2000);
        let c = weight_convergence(&log, 0.05, 1e-3);
        let at = c.converged_at.unwrap();
        assert!(at <= 500 + c.lag as u64, "{at}");
        assert!(at >= 400);
        assert!(weights_settled(&log, 0.2, 100, 0.01));
        assert!(!weights_settled(&log, 1.0, 100, 0.01));
    }
}
