use super::report::Report;
use super::ErrorTrace;
use crate::error::{Error, Result};

/// Row means of `|x_i - x_j|` and their grand mean.
fn centering(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let rows: Vec<f64> = x.iter().map(|a| x.iter().map(|b| (a - b).abs()).sum::<f64>() / n).collect();
    let grand = rows.iter().sum::<f64>() / n;
    (rows, grand)
}

/// `(1/n^2) sum_ij A_ij B_ij` for the doubly centered distance matrices,
/// recomputed pairwise so memory stays linear.
fn dcov2(x: &[f64], cx: &(Vec<f64>, f64), y: &[f64], cy: &(Vec<f64>, f64)) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a = (x[i] - x[j]).abs() - cx.0[i] - cx.0[j] + cx.1;
            let b = (y[i] - y[j]).abs() - cy.0[i] - cy.0[j] + cy.1;
            total += a * b;
        }
    }
    total / (n * n) as f64
}

/// Sample distance correlation; 0 when either input has no spread.
pub fn distance_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("samples of length {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::invalid("samples", "at least two observations are required"));
    }
    let (cx, cy) = (centering(x), centering(y));
    let vx = dcov2(x, &cx, x, &cx);
    let vy = dcov2(y, &cy, y, &cy);
    if vx <= 0.0 || vy <= 0.0 {
        return Ok(0.0);
    }
    let r2 = dcov2(x, &cx, y, &cy) / (vx * vy).sqrt();
    Ok(r2.max(0.0).sqrt().min(1.0))
}

/// Mean distance correlation between the samples at `t1` and `t2` over the
/// given time pairs; `samples[r][i]` is replicate `r` at time index `i`.
pub fn adc(samples: &[Vec<f64>], time_pairs: &[(usize, usize)]) -> Result<f64> {
    if time_pairs.is_empty() {
        return Err(Error::invalid("time_pairs", "no time pairs given"));
    }
    let mut total = 0.0;
    for &(t1, t2) in time_pairs {
        if t1 == t2 {
            return Err(Error::invalid("time_pairs", "times in a pair must differ"));
        }
        let column = |t: usize| -> Result<Vec<f64>> {
            samples
                .iter()
                .map(|r| r.get(t).copied().ok_or_else(|| Error::invalid("time_pairs", format!("time index {t} out of range"))))
                .collect()
        };
        total += distance_correlation(&column(t1)?, &column(t2)?)?;
    }
    Ok(total / time_pairs.len() as f64)
}

/// Per-order dependence of learner errors across time at probe `p`, with
/// one replicate per trace (run).
pub fn adc_error_independence(
    traces: &[ErrorTrace],
    orders: &[usize],
    p: usize,
    time_pairs: &[(usize, usize)],
) -> Result<Report> {
    let mut report = Report::default();
    for (n, order) in orders.iter().enumerate() {
        let samples = traces
            .iter()
            .map(|tr| {
                tr.learners
                    .get(n)
                    .and_then(|l| l.get(p))
                    .cloned()
                    .ok_or_else(|| Error::invalid("trace", "learner errors missing for the requested order or probe"))
            })
            .collect::<Result<Vec<_>>>()?;
        report.note("adc", &format!("n{order}"), "adc", adc(&samples, time_pairs)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn affine_dependence_is_total() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_abs_diff_eq!(distance_correlation(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert_abs_diff_eq!(distance_correlation(&x, &y).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(distance_correlation(&x, &[4.0; 50]).unwrap(), 0.0);
        assert!(distance_correlation(&x, &x[..10]).is_err());
        assert!(distance_correlation(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn independent_uniforms_are_nearly_uncorrelated() {
        let mut rng = stream(21, 0);
        let x: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        assert!(distance_correlation(&x, &y).unwrap() < 0.1);
    }

    #[test]
    fn nonlinear_dependence_is_detected() {
        let x: Vec<f64> = (0..400).map(|i| -1.0 + i as f64 / 200.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert!(distance_correlation(&x, &y).unwrap() > 0.4);
    }

    #[test]
    fn adc_of_iid_and_repeated_traces() {
        let mut rng = stream(3, 0);
        let iid: Vec<Vec<f64>> = (0..1500).map(|_| (0..4).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let pairs = [(0, 1), (1, 3), (0, 2)];
        assert!(adc(&iid, &pairs).unwrap() < 0.1);
        let repeated: Vec<Vec<f64>> = iid.iter().map(|r| vec![r[0]; 4]).collect();
        assert_abs_diff_eq!(adc(&repeated, &pairs).unwrap(), 1.0, epsilon = 1e-12);
        assert!(adc(&iid, &[(1, 1)]).is_err());
        assert!(adc(&iid, &[(0, 9)]).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_affine_invariant(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = distance_correlation(&x, &y).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((r - distance_correlation(&y, &x).unwrap()).abs() < 1e-9);
            let mapped: Vec<f64> = x.iter().map(|v| -scale * v + shift).collect();
            prop_assert!((r - distance_correlation(&mapped, &y).unwrap()).abs() < 1e-9);
        }
    }
}
