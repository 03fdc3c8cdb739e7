//! Policy error, windowed error moments, closed-form error bounds and the
//! checks that compare them with trained ensembles.

mod bounds;
mod checks;
mod dcor;
mod report;
mod weights;

pub use bounds::{cor2_bound, prop1_bound, prop3_bound, BoundParams};
pub use checks::{
    check_error_limit, check_prop3, check_prop4_ordering, check_variance_vs_k, late_window_variance, variance_trend,
    VarianceSetup,
};
pub use dcor::{adc, adc_error_independence, distance_correlation};
pub use report::{CheckRow, Outcome, Report, REPORT_SCHEMA};
pub use weights::{weight_convergence, weights_settled, WeightConvergence};

use crate::error::{Error, Result};
use crate::mdp::{greedy_policy_from_q, Policy, QTable};

/// Fraction of states where `pi_hat` is not optimal: a state counts as
/// correct when `q_star(s, pi_hat(s))` is within `tol` of the optimal value.
pub fn ape(pi_star: &Policy, pi_hat: &Policy, q_star: &QTable, tol: f64) -> Result<f64> {
    let n = pi_star.num_states();
    if pi_hat.num_states() != n || q_star.num_states() != n {
        return Err(Error::Dimension("policies and Q* cover different state spaces".into()));
    }
    let wrong = (0..n)
        .filter(|&s| {
            let a = pi_hat.action(s);
            a >= q_star.num_actions() || q_star.get(s, a) > q_star.min_value(s) + tol
        })
        .count();
    Ok(wrong as f64 / n as f64)
}

/// Fraction of states where the two policies choose different actions.
pub fn ape_strict(pi_star: &Policy, pi_hat: &Policy) -> Result<f64> {
    if pi_hat.num_states() != pi_star.num_states() {
        return Err(Error::Dimension("policies cover different state spaces".into()));
    }
    let wrong = pi_star
        .actions()
        .iter()
        .zip(pi_hat.actions())
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / pi_star.num_states() as f64)
}

/// [`ape`] of the greedy policy of `q`.
pub fn ape_of_tables(q_star: &QTable, q: &QTable, tol: f64) -> Result<f64> {
    if q.matrix().shape() != q_star.matrix().shape() {
        return Err(Error::Dimension("Q tables differ in shape".into()));
    }
    ape(&greedy_policy_from_q(q_star), &greedy_policy_from_q(q), q_star, tol)
}

/// Logged errors against the optimal Q at the probe cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorTrace {
    pub t: Vec<u64>,
    pub probes: Vec<(usize, usize)>,
    /// `E_t` per probe: `ensemble[p][i]`.
    pub ensemble: Vec<Vec<f64>>,
    /// `X_t^(n)` per learner and probe: `learners[n][p][i]`.
    pub learners: Vec<Vec<Vec<f64>>>,
}

/// Mean and `E[x^2] - E[x]^2` over the `2 delta + 1` samples centered on
/// `center`.
pub fn error_moments(series: &[f64], center: usize, delta: usize) -> Result<(f64, f64)> {
    if center < delta || center + delta >= series.len() {
        return Err(Error::invalid(
            "window",
            format!("[{}, {}] is outside a series of {}", center as i64 - delta as i64, center + delta, series.len()),
        ));
    }
    moments(&series[center - delta..=center + delta])
}

/// Mean and population variance of `xs`.
pub fn moments(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::invalid("window", "empty sample"));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let second = xs.iter().map(|x| x * x).sum::<f64>() / n;
    Ok((mean, (second - mean * mean).max(0.0)))
}

/// `max_n sqrt(3 var(X^(n)))` over the first `fraction` of the trace at probe
/// `p`, the spread of a uniform error on `[-lambda, lambda]`.
pub fn lambda_hat(trace: &ErrorTrace, p: usize, fraction: f64) -> Result<f64> {
    if trace.learners.is_empty() {
        return Err(Error::invalid("trace", "no learner errors were logged"));
    }
    let len = trace.t.len();
    let m = ((len as f64 * fraction).ceil() as usize).clamp(1, len.max(1));
    trace
        .learners
        .iter()
        .map(|per_probe| moments(&per_probe[p][..m]).map(|(_, v)| (3.0 * v).sqrt()))
        .try_fold(0.0f64, |acc, x| x.map(|x| acc.max(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn strict_gap_q() -> QTable {
        // optimal action is a = s % 2, every gap is 1
        QTable::from_matrix(DMatrix::from_fn(10, 2, |s, a| if a == s % 2 { 0.0 } else { 1.0 }))
    }

    #[test]
    fn ape_counts_suboptimal_states() {
        let q = strict_gap_q();
        let star = greedy_policy_from_q(&q);
        assert_eq!(ape(&star, &star, &q, 1e-9).unwrap(), 0.0);
        let flipped = Policy::new(star.actions().iter().map(|a| 1 - a).collect(), 2).unwrap();
        assert_eq!(ape(&star, &flipped, &q, 1e-9).unwrap(), 1.0);
        let mut three = star.actions().to_vec();
        for s in [1, 4, 7] {
            three[s] = 1 - three[s];
        }
        let three = Policy::new(three, 2).unwrap();
        assert_abs_diff_eq!(ape(&star, &three, &q, 1e-9).unwrap(), 0.3);
        assert_abs_diff_eq!(ape_strict(&star, &three).unwrap(), 0.3);
    }

    #[test]
    fn ape_tolerates_ties_unless_strict() {
        let q = QTable::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]));
        let star = Policy::new(vec![0, 0], 2).unwrap();
        let other = Policy::new(vec![1, 0], 2).unwrap();
        assert_eq!(ape(&star, &other, &q, 1e-12).unwrap(), 0.0);
        assert_eq!(ape_strict(&star, &other).unwrap(), 0.5);
    }

    #[test]
    fn ape_is_invariant_to_argmin_preserving_rescaling() {
        let q = strict_gap_q();
        let scaled = QTable::from_matrix(q.matrix() * 7.5 + DMatrix::from_element(10, 2, 3.0));
        let star = greedy_policy_from_q(&q);
        let pi = Policy::new((0..10).map(|s| usize::from(s < 4)).collect(), 2).unwrap();
        assert_eq!(ape(&star, &pi, &q, 1e-9).unwrap(), ape(&star, &pi, &scaled, 1e-9).unwrap());
    }

    #[test]
    fn window_moments() {
        assert_eq!(error_moments(&[2.0; 9], 4, 3).unwrap(), (2.0, 0.0));
        let (m, v) = error_moments(&[0.0, 3.0, 6.0], 1, 1).unwrap();
        assert_abs_diff_eq!(m, 3.0);
        assert_abs_diff_eq!(v, 6.0);
        // alternating +-1: an odd number of samples leaves one sign over
        let alt: Vec<f64> = (0..21).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        for delta in 1..6 {
            let (m, v) = error_moments(&alt, 10, delta).unwrap();
            let expected = 1.0 / (2 * delta + 1) as f64 * if delta % 2 == 0 { 1.0 } else { -1.0 };
            assert_abs_diff_eq!(m, expected, epsilon = 1e-15);
            assert_abs_diff_eq!(v, 1.0 - expected * expected, epsilon = 1e-15);
        }
        assert!(error_moments(&[1.0, 2.0], 0, 1).is_err());
        assert!(error_moments(&[1.0, 2.0], 1, 1).is_err());
    }

    #[test]
    fn lambda_of_a_uniform_trace() {
        // the evenly spaced grid on [-1, 1] has variance close to 1/3
        let xs: Vec<f64> = (0..=2000).map(|i| -1.0 + i as f64 / 1000.0).collect();
        let trace = ErrorTrace {
            t: (0..xs.len() as u64).collect(),
            probes: vec![(0, 0)],
            ensemble: vec![xs.clone()],
            learners: vec![vec![xs.clone()], vec![xs.iter().map(|x| x / 2.0).collect()]],
        };
        assert_abs_diff_eq!(lambda_hat(&trace, 0, 1.0).unwrap(), 1.0, epsilon = 1e-3);
    }
}
