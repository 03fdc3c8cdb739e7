//! Jensen-Shannon weighting of the ensemble members.

use std::borrow::Borrow;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mdp::QTable;

/// Softmax with max-shift.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Negative softmax of a row of action values: cheaper actions get more mass.
pub fn q_to_probabilities(q_row: &[f64]) -> Vec<f64> {
    let min = q_row.iter().copied().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = q_row.iter().map(|q| (min - q).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise [`q_to_probabilities`].
pub fn probability_table(q: &QTable) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(q.num_states(), q.num_actions());
    for s in 0..q.num_states() {
        fill_probability_row(q, s, &mut out);
    }
    out
}

fn fill_probability_row(q: &QTable, s: usize, out: &mut DMatrix<f64>) {
    let row = q_to_probabilities(&q.row(s));
    for (a, p) in row.into_iter().enumerate() {
        out[(s, a)] = p;
    }
}

/// Base-2 Jensen-Shannon divergence, in `[0, 1]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    if p.iter().chain(q).any(|x| !(*x >= 0.0)) {
        return Err(Error::invalid("distribution", "entries must be nonnegative"));
    }
    Ok(jsd_unchecked(p.iter().copied(), q.iter().copied()))
}

fn jsd_unchecked(p: impl Iterator<Item = f64>, q: impl Iterator<Item = f64>) -> f64 {
    // 0 log 0 = 0
    let term = |x: f64, m: f64| if x > 0.0 { x * (x / m).log2() } else { 0.0 };
    let mut total = 0.0;
    for (a, b) in p.zip(q) {
        let m = 0.5 * (a + b);
        total += term(a, m) + term(b, m);
    }
    (0.5 * total).clamp(0.0, 1.0)
}

fn row_jsd(p: &DMatrix<f64>, q: &DMatrix<f64>, s: usize) -> f64 {
    jsd_unchecked(p.row(s).iter().copied(), q.row(s).iter().copied())
}

/// Mean over states of the per-state divergence between two probability tables.
pub fn ajsd(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::Dimension(format!("tables of shape {:?} and {:?}", p.shape(), q.shape())));
    }
    if p.iter().chain(q.iter()).any(|x| !(*x >= 0.0)) {
        return Err(Error::invalid("distribution", "entries must be nonnegative"));
    }
    let per_state: Vec<f64> = (0..p.nrows()).map(|s| row_jsd(p, q, s)).collect();
    Ok(mean(&per_state))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `softmax(1 - AJSD(Q^(1), Q^(n)))` over the learners; the first table is the
/// original environment's.
pub fn compute_weights(q_tables: &[QTable]) -> Result<Vec<f64>> {
    if q_tables.len() < 2 {
        return Err(Error::invalid("q_tables", "at least two learners are required"));
    }
    let reference = probability_table(&q_tables[0]);
    let raw = q_tables
        .iter()
        .map(|q| Ok(1.0 - ajsd(&reference, &probability_table(q))?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(softmax(&raw))
}

/// Range every weight must lie in: the softmax extremes over raw scores in
/// `[0, 1]`.
pub fn weight_bounds(k: usize) -> (f64, f64) {
    let e = std::f64::consts::E;
    let k = k as f64;
    (1.0 / (1.0 + (k - 1.0) * e), e / (e + k - 1.0))
}

/// `u q_it + (1 - u) sum_n w_n Q_n`.
pub fn ensemble_update(q_it: &QTable, q_tables: &[QTable], weights: &[f64], u: f64) -> Result<QTable> {
    let mut out = q_it.clone();
    ensemble_update_in_place(&mut out, q_tables, weights, u)?;
    Ok(out)
}

pub(crate) fn ensemble_update_in_place<T: Borrow<QTable>>(
    q_it: &mut QTable,
    q_tables: &[T],
    weights: &[f64],
    u: f64,
) -> Result<()> {
    if q_tables.len() != weights.len() {
        return Err(Error::Dimension(format!("{} tables and {} weights", q_tables.len(), weights.len())));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::invalid("u", format!("{u} is outside [0, 1]")));
    }
    let shape = q_it.matrix().shape();
    if q_tables.iter().any(|q| q.borrow().matrix().shape() != shape) {
        return Err(Error::Dimension("learner tables differ in shape from the iterate".into()));
    }
    let m = q_it.matrix_mut();
    for (i, x) in m.iter_mut().enumerate() {
        let blended: f64 = q_tables
            .iter()
            .zip(weights)
            .map(|(q, w)| w * q.borrow().matrix().as_slice()[i])
            .sum();
        *x = u * *x + (1.0 - u) * blended;
    }
    Ok(())
}

/// Keeps each learner's probability table and per-state divergence to the
/// first learner current as single rows change, so a weight refresh only
/// touches the rows that moved.
#[derive(Debug, Clone)]
pub struct WeightTracker {
    probs: Vec<DMatrix<f64>>,
    /// `divergence[n][s]`
    divergence: Vec<Vec<f64>>,
}

impl WeightTracker {
    pub fn new<T: Borrow<QTable>>(q_tables: &[T]) -> Self {
        let probs: Vec<_> = q_tables.iter().map(|q| probability_table(q.borrow())).collect();
        let divergence = probs
            .iter()
            .map(|p| (0..p.nrows()).map(|s| row_jsd(&probs[0], p, s)).collect())
            .collect();
        Self { probs, divergence }
    }

    /// Learner `n` changed the values of state `changed[n]`.
    pub fn refresh<T: Borrow<QTable>>(&mut self, q_tables: &[T], changed: &[usize]) {
        for (n, &s) in changed.iter().enumerate() {
            fill_probability_row(q_tables[n].borrow(), s, &mut self.probs[n]);
        }
        let reference_state = changed[0];
        for n in 1..self.probs.len() {
            for s in [reference_state, changed[n]] {
                self.divergence[n][s] = row_jsd(&self.probs[0], &self.probs[n], s);
            }
        }
    }

    pub fn raw_scores(&self) -> Vec<f64> {
        self.divergence.iter().map(|d| 1.0 - mean(d)).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.raw_scores())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn worked_example_probabilities() {
        let p = q_to_probabilities(&[1.0, 1.4, 0.8, 2.0]);
        for (got, want) in p.iter().zip([0.31, 0.21, 0.37, 0.11]) {
            assert!((got - want).abs() <= 0.005, "{p:?}");
        }
    }

    #[test]
    fn negative_softmax_symmetry_and_shift() {
        assert_eq!(q_to_probabilities(&[3.0; 4]), vec![0.25; 4]);
        let a = q_to_probabilities(&[0.1, 0.7, -0.3]);
        let b = q_to_probabilities(&[1000.1, 1000.7, 999.7]);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        // no overflow at large magnitudes
        let big = q_to_probabilities(&[1e6, 1e6 + 1.0]);
        assert!(big.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn jsd_reference_values() {
        assert_eq!(jsd(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        // 1/2 [KL((.5,.5) || (.75,.25)) + KL((1,0) || (.75,.25))]
        // = 1/2 [.5 log2(2/3) + .5 log2 2 + log2(4/3)] = 0.311278...
        let oracle = 0.5 * (0.5 * (2.0f64 / 3.0).log2() + 0.5 + (4.0f64 / 3.0).log2());
        assert_abs_diff_eq!(jsd(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(oracle, 0.3113, epsilon = 5e-5);
        assert!(jsd(&[-0.1, 1.1], &[0.5, 0.5]).is_err());
        assert!(jsd(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn ajsd_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 1.0, 0.0]);
        let per_state = jsd(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert_eq!(ajsd(&a, &a).unwrap(), 0.0);
        assert_abs_diff_eq!(ajsd(&a, &b).unwrap(), per_state / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ajsd(&a, &b).unwrap(), 0.15565, epsilon = 5e-5);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(ajsd(&x, &y).unwrap(), 1.0);
        assert!(ajsd(&a, &DMatrix::from_element(3, 2, 0.5)).is_err());
    }

    #[test]
    fn weight_examples() {
        let q = QTable::from_matrix(DMatrix::from_row_slice(2, 2, &[0.3, 0.9, 1.2, 0.1]));
        let w = compute_weights(&[q.clone(), q.clone(), q]).unwrap();
        for x in &w {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let e = std::f64::consts::E;
        let w = softmax(&[1.0, 0.0]);
        assert_abs_diff_eq!(w[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(w[0], 0.731, epsilon = 5e-4);
        assert!(compute_weights(&[QTable::zeros(2, 2)]).is_err());
    }

    #[test]
    fn ensemble_update_limits() {
        let it = QTable::from_matrix(DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
        let qs = [
            QTable::from_matrix(DMatrix::from_row_slice(1, 2, &[3.0, 5.0])),
            QTable::from_matrix(DMatrix::from_row_slice(1, 2, &[7.0, 1.0])),
        ];
        let w = [0.25, 0.75];
        assert_eq!(ensemble_update(&it, &qs, &w, 1.0).unwrap(), it);
        let pure = ensemble_update(&it, &qs, &w, 0.0).unwrap();
        assert_abs_diff_eq!(pure.get(0, 0), 0.25 * 3.0 + 0.75 * 7.0);
        assert_abs_diff_eq!(pure.get(0, 1), 0.25 * 5.0 + 0.75 * 1.0);
        assert!(ensemble_update(&it, &qs, &w, 1.5).is_err());
    }

    #[test]
    fn constant_ratio_matches_unrolled_recursion() {
        // Q_3 = u^3 Q_0 + (1 - u) sum_{i<3} u^{3-i-1} sum_n w_i^n Q_i^n
        let u = 0.3;
        let mut rng = stream(5, 0);
        let table = |rng: &mut crate::rng::Stream| {
            QTable::from_matrix(DMatrix::from_fn(3, 2, |_, _| rng.random::<f64>() * 4.0 - 2.0))
        };
        let q0 = table(&mut rng);
        let steps: Vec<(Vec<QTable>, Vec<f64>)> = (0..3)
            .map(|_| {
                let qs = vec![table(&mut rng), table(&mut rng)];
                let w = softmax(&[rng.random(), rng.random()]);
                (qs, w)
            })
            .collect();
        let mut it = q0.clone();
        for (qs, w) in &steps {
            it = ensemble_update(&it, qs, w, u).unwrap();
        }
        let mut unrolled = q0.matrix() * u.powi(3);
        for (i, (qs, w)) in steps.iter().enumerate() {
            let mix = qs[0].matrix() * w[0] + qs[1].matrix() * w[1];
            unrolled += mix * ((1.0 - u) * u.powi(3 - i as i32 - 1));
        }
        assert_abs_diff_eq!(it.matrix(), &unrolled, epsilon = 1e-12);
    }

    #[test]
    fn tracker_matches_full_recomputation() {
        let mut rng = stream(8, 0);
        let mut qs: Vec<QTable> = (0..3)
            .map(|_| QTable::from_matrix(DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>())))
            .collect();
        let mut tracker = WeightTracker::new(&qs);
        for _ in 0..200 {
            let changed: Vec<usize> = (0..3).map(|_| rng.random_range(0..6)).collect();
            for (n, &s) in changed.iter().enumerate() {
                let a = rng.random_range(0..3);
                let v = qs[n].get(s, a) + rng.random::<f64>() - 0.5;
                qs[n].set(s, a, v);
            }
            tracker.refresh(&qs, &changed);
            let full = compute_weights(&qs).unwrap();
            for (a, b) in tracker.weights().iter().zip(&full) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], len).prop_filter_map("nonzero", |v| {
            let total: f64 = v.iter().sum();
            (total > 0.0).then(|| v.iter().map(|x| x / total).collect())
        })
    }

    proptest! {
        #[test]
        fn jsd_is_symmetric_and_bounded((p, q) in (1usize..8).prop_flat_map(|n| (distribution(n), distribution(n)))) {
            let a = jsd(&p, &q).unwrap();
            let b = jsd(&q, &p).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() < 1e-15);
            prop_assert!(jsd(&p, &p).unwrap().abs() < 1e-15);
        }

        #[test]
        fn weights_respect_softmax_extremes(
            k in 2usize..7,
            values in prop::collection::vec(-50.0f64..50.0, 7 * 4 * 3),
        ) {
            let qs: Vec<QTable> = (0..k)
                .map(|n| QTable::from_matrix(DMatrix::from_fn(4, 3, |s, a| values[(n * 4 + s) * 3 + a])))
                .collect();
            let w = compute_weights(&qs).unwrap();
            let (lo, hi) = weight_bounds(k);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for x in w {
                prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }

        #[test]
        fn update_stays_in_convex_hull(
            u in 0.0f64..=1.0,
            values in prop::collection::vec(-10.0f64..10.0, 3 * 6),
            raw in prop::collection::vec(0.0f64..1.0, 2),
        ) {
            let table = |i: usize| QTable::from_matrix(DMatrix::from_row_slice(3, 2, &values[i * 6..(i + 1) * 6]));
            let it = table(0);
            let qs = [table(1), table(2)];
            let out = ensemble_update(&it, &qs, &softmax(&raw), u).unwrap();
            for i in 0..6 {
                let xs = [it.matrix()[i], qs[0].matrix()[i], qs[1].matrix()[i]];
                let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.matrix()[i] >= lo - 1e-12 && out.matrix()[i] <= hi + 1e-12);
            }
        }
    }
}
