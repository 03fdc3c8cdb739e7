use std::collections::BTreeMap;

use rayon::prelude::*;

use super::bounds::{cor2_bound, prop3_bound, BoundParams};
use super::report::Report;
use super::{lambda_hat, moments, ErrorTrace};
use crate::ensemble::{run_neql, Reference, RunOptions, ScheduleSet, Termination, UpdateRatio};
use crate::env::TabularEnvironment;
use crate::error::{Error, Result};
use crate::estimation::{select_orders, SamplingConfig};
use crate::mdp::{policy_q_evaluation, value_iteration, DiscountFactor, Policy, QTable};

fn evaluate_all(envs: &[TabularEnvironment], pi: &Policy, gamma: DiscountFactor) -> Result<BTreeMap<usize, QTable>> {
    envs.iter()
        .map(|e| Ok((e.order(), policy_q_evaluation(e.ptt(), e.costs(), gamma, pi)?)))
        .collect()
}

/// `||Q^(1)_pi - Q^(n)_pi||_2 < prop3_bound` for every `n`-hop environment
/// after the first; `envs[0]` is the order-1 model.
pub fn check_prop3(envs: &[TabularEnvironment], pi: &Policy, gamma: DiscountFactor) -> Result<Report> {
    let first = envs.first().ok_or_else(|| Error::invalid("environments", "no environments given"))?;
    if first.order() != 1 {
        return Err(Error::invalid("environments", "the first environment must have order 1"));
    }
    let q1 = policy_q_evaluation(first.ptt(), first.costs(), gamma, pi)?;
    let cost_norm = first.costs().under_policy(pi).norm();
    let mut report = Report::default();
    let mut gaps = Vec::new();
    for env in &envs[1..] {
        let n = env.order();
        let qn = policy_q_evaluation(env.ptt(), env.costs(), gamma, pi)?;
        let gap = (q1.matrix() - qn.matrix()).norm();
        let bound = prop3_bound(&BoundParams::order_gap(gamma.value(), n, cost_norm))?;
        report.assert("prop3", &format!("n{n}"), "q_gap_l2", gap, bound, gap < bound);
        gaps.push(gap);
    }
    let monotone = gaps.windows(2).all(|w| w[0] <= w[1]) || gaps.windows(2).all(|w| w[0] >= w[1]);
    report.note("prop3", "all", "gap_monotone_in_n", f64::from(u8::from(monotone)));
    Ok(report)
}

/// Largest relative amount by which `lower` exceeds `upper` over all cells;
/// nonpositive when `upper >= lower` everywhere.
fn relative_excess(upper: &QTable, lower: &QTable) -> f64 {
    upper
        .matrix()
        .iter()
        .zip(lower.matrix().iter())
        .map(|(a, b)| (b - a) / a.abs().max(b.abs()).max(f64::MIN_POSITIVE))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Elementwise `Q^(n) >= Q^(2n) >= ...` along each chain of orders within
/// relative tolerance `rel_tol`, and `Q^(1)` elementwise largest among all
/// environments. Pairs from different chains are reported, not asserted.
pub fn check_prop4_ordering(
    envs: &[TabularEnvironment],
    chains: &[Vec<usize>],
    pi: &Policy,
    gamma: DiscountFactor,
    rel_tol: f64,
) -> Result<Report> {
    let q = evaluate_all(envs, pi, gamma)?;
    let get = |n: usize| q.get(&n).ok_or_else(|| Error::invalid("chains", format!("no environment of order {n}")));
    let mut report = Report::default();
    for chain in chains {
        for pair in chain.windows(2) {
            let excess = relative_excess(get(pair[0])?, get(pair[1])?);
            report.assert(
                "prop4",
                &format!("n{}>=n{}", pair[0], pair[1]),
                "max_relative_excess",
                excess,
                rel_tol,
                excess <= rel_tol,
            );
        }
    }
    if let Some(q1) = q.get(&1) {
        for (&n, qn) in q.range(2..) {
            if chains.iter().any(|c| c.windows(2).any(|w| w == [1, n])) {
                continue;
            }
            let excess = relative_excess(q1, qn);
            report.assert("prop4", &format!("n1>=n{n}"), "max_relative_excess", excess, rel_tol, excess <= rel_tol);
        }
    }
    for (i, a) in chains.iter().enumerate() {
        for b in &chains[i + 1..] {
            for &x in a {
                for &y in b {
                    let (qx, qy) = (get(x)?, get(y)?);
                    let cells = qx.matrix().len() as f64;
                    let above = qx.matrix().iter().zip(qy.matrix().iter()).filter(|(p, r)| p >= r).count();
                    report.note("prop4", &format!("n{x}_vs_n{y}"), "fraction_cells_geq", above as f64 / cells);
                }
            }
        }
    }
    Ok(report)
}

/// Population variance of the last `tail_frac` of `series`.
pub fn late_window_variance(series: &[f64], tail_frac: f64) -> Result<f64> {
    let m = ((series.len() as f64 * tail_frac).ceil() as usize).clamp(1, series.len().max(1));
    moments(&series[series.len() - m..]).map(|(_, v)| v)
}

fn window(series: &[f64], frac: f64, late: bool) -> &[f64] {
    let m = ((series.len() as f64 * frac).ceil() as usize).clamp(1, series.len());
    if late {
        &series[series.len() - m..]
    } else {
        &series[..m]
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Large-sample standard error of a median.
fn median_se(xs: &[f64]) -> f64 {
    1.2533 * sample_sd(xs) / (xs.len() as f64).sqrt()
}

/// Limiting behavior of the fused error at probe `p` over replicate runs:
/// the late-window mean across runs lies within 3 standard errors of 0 and
/// the median late-window variance is at most `max_ratio` of the median
/// early-window variance. The variance is also compared, for the record,
/// with the bound for correlated errors at the final update ratio.
pub fn check_error_limit(traces: &[ErrorTrace], p: usize, frac: f64, max_ratio: f64, final_u: f64) -> Result<Report> {
    if traces.len() < 2 {
        return Err(Error::invalid("traces", "at least two runs are required"));
    }
    let mut late_means = Vec::new();
    let mut late_vars = Vec::new();
    let mut early_vars = Vec::new();
    let mut lambdas = Vec::new();
    for tr in traces {
        let series = tr.ensemble.get(p).ok_or_else(|| Error::invalid("probe", "probe index out of range"))?;
        if series.is_empty() {
            return Err(Error::invalid("traces", "empty error trace"));
        }
        let (m, v) = moments(window(series, frac, true))?;
        late_means.push(m);
        late_vars.push(v);
        early_vars.push(moments(window(series, frac, false))?.1);
        if !tr.learners.is_empty() {
            lambdas.push(lambda_hat(tr, p, frac)?);
        }
    }
    let mut report = Report::default();
    let mean = late_means.iter().sum::<f64>() / late_means.len() as f64;
    let se = sample_sd(&late_means) / (late_means.len() as f64).sqrt();
    report.assert("error_limit", "late_window", "abs_mean_over_se", mean.abs(), 3.0 * se, mean.abs() <= 3.0 * se);
    let (late, early) = (median(&late_vars), median(&early_vars));
    report.assert("error_limit", "late_window", "variance_ratio", late / early, max_ratio, late <= max_ratio * early);
    if !lambdas.is_empty() {
        let lambda = median(&lambdas);
        let bound = cor2_bound(&BoundParams::variance(final_u, lambda));
        report.note("error_limit", "late_window", "median_variance", late);
        report.note("error_limit", "late_window", "cor2_bound", bound);
        report.note("error_limit", "late_window", "lambda_hat", lambda);
    }
    Ok(report)
}

/// Median variance per ensemble size must not increase with `K`, except for
/// at most one increase no larger than the combined standard error of the
/// two medians. Successive gaps are reported.
pub fn variance_trend(k_list: &[usize], variances: &[Vec<f64>]) -> Report {
    let mut report = Report::default();
    let medians: Vec<f64> = variances.iter().map(|v| median(v)).collect();
    let ses: Vec<f64> = variances.iter().map(|v| median_se(v)).collect();
    for (k, (m, se)) in k_list.iter().zip(medians.iter().zip(&ses)) {
        report.note("variance_vs_k", &format!("K{k}"), "median_variance", *m);
        report.note("variance_vs_k", &format!("K{k}"), "median_se", *se);
    }
    let mut inversions = 0;
    let mut within_se = true;
    for i in 1..medians.len() {
        let gap = medians[i - 1] - medians[i];
        report.note("variance_vs_k", &format!("K{}->K{}", k_list[i - 1], k_list[i]), "gap", gap);
        if gap < 0.0 {
            inversions += 1;
            within_se &= -gap <= (ses[i - 1].powi(2) + ses[i].powi(2)).sqrt();
        }
    }
    let pass = inversions == 0 || (inversions == 1 && within_se);
    report.assert("variance_vs_k", "all", "inversions", f64::from(inversions), 1.0, pass);
    report
}

/// Settings shared by every run of [`check_variance_vs_k`].
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSetup {
    pub trajectory_length: usize,
    pub min_visits: usize,
    pub alpha_c1: f64,
    pub epsilon_floor: f64,
    pub update: UpdateRatio,
    pub gamma: DiscountFactor,
    /// Time steps per run.
    pub budget: u64,
    pub probe: (usize, usize),
    /// Fraction of the run, at its end, whose variance is measured.
    pub tail_frac: f64,
}

/// Trains the ensemble for every `K` in `k_list` and seed, and checks the
/// late-window variance of the fused error at the probe with
/// [`variance_trend`]. Returns the report and `variances[k][seed]`.
pub fn check_variance_vs_k(
    original: &TabularEnvironment,
    k_list: &[usize],
    seeds: &[u64],
    setup: &VarianceSetup,
) -> Result<(Report, Vec<Vec<f64>>)> {
    if k_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("k_list", "ensemble sizes must increase"));
    }
    let q_star = value_iteration(original.ptt(), original.costs(), setup.gamma, 1e-10, 10_000_000)?.q;
    let reference = Reference::new(q_star);
    let jobs: Vec<(usize, u64)> = k_list.iter().flat_map(|&k| seeds.iter().map(move |&s| (k, s))).collect();
    let results = jobs
        .par_iter()
        .map(|&(k, seed)| {
            let orders = select_orders(k, 2 * k)?;
            let mut cfg = SamplingConfig::new(setup.trajectory_length, setup.min_visits, orders);
            cfg.num_environments = k;
            let schedules = ScheduleSet::new(setup.alpha_c1, k, setup.epsilon_floor, setup.update);
            let opts = RunOptions::new(setup.trajectory_length, Termination::Budget(setup.budget))
                .with_reference(reference.clone())
                .with_probes(vec![setup.probe]);
            let out = run_neql(original, &cfg, &schedules, setup.gamma, seed, &opts)?;
            late_window_variance(&out.log.error_trace().ensemble[0], setup.tail_frac)
        })
        .collect::<Result<Vec<f64>>>()?;
    let variances: Vec<Vec<f64>> = results.chunks(seeds.len()).map(<[f64]>::to_vec).collect();
    Ok((variance_trend(k_list, &variances), variances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_er_env, ErdosRenyiSpec};
    use crate::estimation::multiscale_from;
    use crate::mdp::{CostModel, Ptt};
    use nalgebra::DMatrix;

    #[test]
    fn identity_dynamics_have_no_gap() {
        let costs = CostModel::from_expected(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 0.4])).unwrap();
        let envs = multiscale_from(&Ptt::identity(2, 2), &costs, &[1, 2, 3]).unwrap();
        let pi = Policy::new(vec![1, 0], 2).unwrap();
        let r = check_prop3(&envs, &pi, DiscountFactor::new(0.9).unwrap()).unwrap();
        assert!(r.passed());
        assert!(r.rows.iter().filter(|r| r.statistic == "q_gap_l2").all(|r| r.value.abs() < 1e-12));
    }

    #[test]
    fn uniform_costs_order_with_equality() {
        let env = build_er_env(&ErdosRenyiSpec::new(8, 2, 1)).unwrap();
        let envs = multiscale_from(env.ptt(), &CostModel::uniform(8, 2, 0.3), &[1, 2, 3, 4, 6]).unwrap();
        let pi = Policy::constant(8, 0);
        let gamma = DiscountFactor::new(1.0 - 1e-5).unwrap();
        let r = check_prop4_ordering(&envs, &[vec![1, 2, 4], vec![3, 6]], &pi, gamma, 1e-6).unwrap();
        assert!(r.passed(), "{:?}", r.failures().collect::<Vec<_>>());
        assert!(r.rows.iter().any(|r| r.instance == "n4_vs_n6"));
    }

    #[test]
    fn superharmonic_costs_are_ordered_for_any_discount() {
        // a cost that only decreases along the chain s -> s + 1 satisfies P c <= c
        let n = 6;
        let p = DMatrix::from_fn(n, n, |s, t| {
            if s + 1 == n {
                f64::from(u8::from(t == s))
            } else if t == s + 1 {
                0.6
            } else if t == s {
                0.4
            } else {
                0.0
            }
        });
        let ptt = Ptt::new(vec![p]).unwrap();
        let costs = CostModel::from_expected(DMatrix::from_fn(n, 1, |s, _| (n - s) as f64)).unwrap();
        let envs = multiscale_from(&ptt, &costs, &[1, 2, 3, 4, 6, 8]).unwrap();
        for gamma in [0.5, 0.95, 1.0 - 1e-5] {
            let r = check_prop4_ordering(
                &envs,
                &[vec![1, 2, 4, 8], vec![3, 6]],
                &Policy::constant(n, 0),
                DiscountFactor::new(gamma).unwrap(),
                1e-6,
            )
            .unwrap();
            assert!(r.passed(), "gamma {gamma}: {:?}", r.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn trend_allows_one_small_inversion() {
        let base = |m: f64| vec![m - 0.1, m, m + 0.1, m - 0.05, m + 0.05];
        assert!(variance_trend(&[2, 4, 6], &[base(3.0), base(2.0), base(1.0)]).passed());
        assert!(variance_trend(&[2, 4, 6], &[base(3.0), base(2.0), base(2.01)]).passed());
        assert!(!variance_trend(&[2, 4, 6], &[base(1.0), base(2.0), base(3.0)]).passed());
        assert!(!variance_trend(&[2, 4], &[base(1.0), base(5.0)]).passed());
    }

    #[test]
    fn single_state_variance_vanishes() {
        let costs = CostModel::from_expected(DMatrix::from_row_slice(1, 2, &[0.3, 0.6])).unwrap();
        let env = TabularEnvironment::new(Ptt::identity(1, 2), costs, 0, 1).unwrap();
        let setup = VarianceSetup {
            trajectory_length: 5,
            min_visits: 2,
            alpha_c1: 100.0,
            epsilon_floor: 0.01,
            update: UpdateRatio::Exponential { c4: 50.0 },
            gamma: DiscountFactor::new(0.5).unwrap(),
            budget: 20_000,
            probe: (0, 0),
            tail_frac: 0.1,
        };
        let (report, vars) = check_variance_vs_k(&env, &[2, 3], &[1, 2], &setup).unwrap();
        assert!(report.passed());
        assert!(vars.iter().flatten().all(|v| *v < 1e-6), "{vars:?}");
    }

    #[test]
    fn error_limit_on_synthetic_traces() {
        let trace = |seed: u64| {
            let series: Vec<f64> = (0..1000)
                .map(|t| {
                    let decay = (-(t as f64) / 100.0).exp();
                    let wiggle = ((t as f64 + seed as f64 * 17.0) * 0.77).sin();
                    decay * wiggle + 1e-3 * wiggle * if seed % 2 == 0 { 1.0 } else { -1.0 }
                })
                .collect();
            ErrorTrace {
                t: (0..1000).collect(),
                probes: vec![(0, 0)],
                ensemble: vec![series.clone()],
                learners: vec![vec![series]],
            }
        };
        let traces: Vec<ErrorTrace> = (0..10).map(trace).collect();
        let r = check_error_limit(&traces, 0, 0.1, 0.1, 0.99).unwrap();
        assert!(r.passed(), "{:?}", r.rows);
    }
}
