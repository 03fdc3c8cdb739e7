//! Drivers behind the `estimate`, `train` and `verify` subcommands.
//!
//! Every CSV depends only on the configuration and its seeds. Wall time and
//! other run metadata go to `meta.toml`, which is the only file that changes
//! between reruns.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    adc_error_independence, check_error_limit, check_prop3, check_prop4_ordering, check_variance_vs_k, cor2_bound,
    lambda_hat, late_window_variance, prop1_bound, weight_convergence, weights_settled, BoundParams, ErrorTrace, Report,
    VarianceSetup,
};
use crate::config::{parse_config, Check, ExperimentConfig};
use crate::ensemble::{run_neql, run_simple_q, run_vi_ensemble, Reference, RunOptions, Termination};
use crate::env::TabularEnvironment;
use crate::error::{Error, Result};
use crate::estimation::{error_at_milestones, estimate_model, geometric_milestones, multiscale_from};
use crate::mdp::{value_iteration, DiscountFactor, Policy, QTable};
use crate::metrics::{num, MetricsLog};
use crate::plots::{line_plot, Series};
use crate::rng::{stream, ESTIMATION_STREAM};
use crate::tensor_io;

pub const OUT_ENV: &str = "NHOP_EQL_OUT";
pub const THREADS_ENV: &str = "NHOP_EQL_THREADS";

pub const ESTIMATION_SCHEMA: &str = "nhop-eql estimation v1";
pub const POLICY_SCHEMA: &str = "nhop-eql policy v1";
pub const SUMMARY_SCHEMA: &str = "nhop-eql summary v1";

const VI_TOL: f64 = 1e-10;
const VI_MAX_ITERS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Estimate,
    Train,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Train => "train",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Simple,
    Vi,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Simple => "simple",
            Baseline::Vi => "vi",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandOptions {
    /// Output directory; overrides the environment and the config.
    pub out: Option<PathBuf>,
    pub baseline: Option<Baseline>,
    pub plots: bool,
    /// Where estimated model files go; defaults to the output directory.
    pub estimation_out: Option<PathBuf>,
}

/// How a command ended; maps onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Incomplete,
    VerificationFailed,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Incomplete => 3,
            Outcome::VerificationFailed => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("configuration error: {0}")]
    Config(Error),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::Run(_) => 1,
        }
    }
}

/// `--out`, then `NHOP_EQL_OUT`, then the config's `output_dir`.
pub fn resolve_output_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.clone())
}

/// Worker threads from `NHOP_EQL_THREADS`; `None` leaves the pool default.
pub fn threads_from_env() -> std::result::Result<Option<usize>, CommandError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CommandError::Config(Error::invalid(THREADS_ENV, format!("`{v}` is not a positive integer")))),
        },
        _ => Ok(None),
    }
}

/// Parses the config, then runs the command on a pool sized by
/// `NHOP_EQL_THREADS`.
pub fn execute(command: Command, config: &Path, opts: &CommandOptions) -> std::result::Result<Outcome, CommandError> {
    let cfg = parse_config(config).map_err(CommandError::Config)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads_from_env()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    pool.install(|| run_command(command, &cfg, opts))
}

pub fn run_command(
    command: Command,
    cfg: &ExperimentConfig,
    opts: &CommandOptions,
) -> std::result::Result<Outcome, CommandError> {
    let started = Instant::now();
    let env = cfg.environment.build().map_err(CommandError::Config)?;
    if command == Command::Verify {
        check_verify_settings(cfg).map_err(CommandError::Config)?;
    }
    let out = resolve_output_dir(opts.out.as_deref(), cfg);
    fs::create_dir_all(&out).map_err(Error::from)?;
    let (outcome, seed_times) = match command {
        Command::Estimate => cmd_estimate(cfg, &env, &out, opts)?,
        Command::Train => cmd_train(cfg, &env, &out, opts)?,
        Command::Verify => cmd_verify(cfg, &env, &out)?,
    };
    let meta = RunMeta {
        command: command.name().to_string(),
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        seed_wall_time_s: seed_times,
        wall_time_s: started.elapsed().as_secs_f64(),
        outcome: format!("{outcome:?}").to_lowercase(),
        warnings: cfg.warnings.clone(),
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    write_atomic(&out.join("meta.toml"), |w| Ok(w.write_all(text.as_bytes())?))?;
    Ok(outcome)
}

#[derive(Debug, Serialize)]
struct RunMeta {
    command: String,
    config_hash: String,
    seeds: Vec<u64>,
    seed_wall_time_s: Vec<f64>,
    wall_time_s: f64,
    outcome: String,
    warnings: Vec<String>,
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn optimal_q(env: &TabularEnvironment, gamma: DiscountFactor) -> Result<QTable> {
    Ok(value_iteration(env.ptt(), env.costs(), gamma, VI_TOL, VI_MAX_ITERS)?.q)
}

fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    f().map(|x| (x, t.elapsed().as_secs_f64()))
}

struct EstimateRun {
    seed: u64,
    model: crate::estimation::EstimatedModel,
    errors: Vec<(u64, f64)>,
}

fn cmd_estimate(
    cfg: &ExperimentConfig,
    env: &TabularEnvironment,
    out: &Path,
    opts: &CommandOptions,
) -> Result<(Outcome, Vec<f64>)> {
    let ns = env.num_states() as f64;
    let first = (cfg.estimate.first_milestone_per_state * ns).round().max(1.0) as u64;
    let last = (cfg.estimate.final_milestone_per_state * ns).round().max(first as f64) as u64;
    let milestones = geometric_milestones(first, last)?;
    let l = cfg.sampling.trajectory_length;
    let runs: Vec<(EstimateRun, f64)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            timed(|| {
                let model = estimate_model(env, &cfg.sampling, &mut stream(seed, ESTIMATION_STREAM))?;
                let errors =
                    error_at_milestones(env, l, &milestones, cfg.estimate.norm, &mut stream(seed, ESTIMATION_STREAM))?;
                Ok(EstimateRun { seed, model, errors })
            })
        })
        .collect::<Result<_>>()?;

    let model_dir = opts.estimation_out.clone().unwrap_or_else(|| out.to_path_buf());
    fs::create_dir_all(&model_dir)?;
    for (run, _) in &runs {
        let mut meta = run.model.metadata();
        meta.insert(0, ("seed".into(), run.seed.to_string()));
        write_atomic(&model_dir.join(format!("model_seed{}.tensor", run.seed)), |w| {
            tensor_io::write(w, &run.model.p_hat, &run.model.c_hat, &meta)
        })?;
    }

    write_atomic(&out.join("estimation_error.csv"), |w| {
        writeln!(w, "# {ESTIMATION_SCHEMA} norm={:?}", cfg.estimate.norm)?;
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["seed", "samples", "error"])?;
        for (run, _) in &runs {
            for &(m, e) in &run.errors {
                c.write_record([run.seed.to_string(), m.to_string(), num(e)])?;
            }
        }
        c.flush()?;
        Ok(())
    })?;
    let medians: Vec<(u64, f64)> = milestones
        .iter()
        .enumerate()
        .map(|(i, &m)| (m, median(&runs.iter().map(|(r, _)| r.errors[i].1).collect::<Vec<_>>())))
        .collect();
    write_atomic(&out.join("estimation_error_median.csv"), |w| {
        writeln!(w, "# {ESTIMATION_SCHEMA} norm={:?} seeds={}", cfg.estimate.norm, runs.len())?;
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["samples", "median_error"])?;
        for &(m, e) in &medians {
            c.write_record([m.to_string(), num(e)])?;
        }
        c.flush()?;
        Ok(())
    })?;
    write_atomic(&out.join("estimation_summary.csv"), |w| {
        writeln!(w, "# {SUMMARY_SCHEMA}")?;
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["seed", "samples_used", "complete"])?;
        for (run, _) in &runs {
            c.write_record([run.seed.to_string(), run.model.samples_used.to_string(), run.model.complete.to_string()])?;
        }
        c.flush()?;
        Ok(())
    })?;
    if opts.plots {
        let series = vec![Series {
            label: "median".into(),
            points: medians.iter().map(|&(m, e)| (m as f64, e)).collect(),
        }];
        line_plot(&out.join("estimation_error.svg"), "Estimation error", "samples", "error", &series)?;
    }
    let complete = runs.iter().all(|(r, _)| r.model.complete);
    let times = runs.iter().map(|(_, t)| *t).collect();
    Ok((if complete { Outcome::Success } else { Outcome::Incomplete }, times))
}

struct TrainRun {
    seed: u64,
    neql: MetricsLog,
    policy: Policy,
    baseline: Option<(MetricsLog, Policy)>,
}

fn train_options(cfg: &ExperimentConfig, reference: &Reference) -> RunOptions {
    RunOptions::from_sampling(&cfg.sampling, cfg.max_iterations)
        .with_reference(reference.clone())
        .with_probes(cfg.probes.clone())
        .with_log_every(cfg.log_every)
}

fn cmd_train(
    cfg: &ExperimentConfig,
    env: &TabularEnvironment,
    out: &Path,
    opts: &CommandOptions,
) -> Result<(Outcome, Vec<f64>)> {
    let gamma = cfg.discount();
    let reference = Reference::new(optimal_q(env, gamma)?);
    let base = train_options(cfg, &reference);
    let runs: Vec<(TrainRun, f64)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            timed(|| {
                let r = run_neql(env, &cfg.sampling, &cfg.schedules, gamma, seed, &base)?;
                let budget = RunOptions {
                    termination: Termination::Budget(r.log.iterations),
                    ..base.clone()
                };
                let baseline = match opts.baseline {
                    None => None,
                    Some(Baseline::Simple) => {
                        let b = run_simple_q(env, &cfg.schedules, gamma, seed, &budget)?;
                        Some((b.log, b.policy))
                    }
                    Some(Baseline::Vi) => {
                        let b = run_vi_ensemble(env, &cfg.sampling, cfg.schedules.update, gamma, seed, &budget)?;
                        Some((b.log, b.policy))
                    }
                };
                Ok(TrainRun {
                    seed,
                    neql: r.log,
                    policy: r.policy,
                    baseline,
                })
            })
        })
        .collect::<Result<_>>()?;

    for (run, _) in &runs {
        let seed = run.seed;
        write_atomic(&out.join(format!("metrics_seed{seed}.csv")), |w| {
            run.neql.write_csv(w, cfg.moment_window)
        })?;
        if let Some((log, _)) = &run.baseline {
            write_atomic(&out.join(format!("baseline_{}_seed{seed}.csv", log.series)), |w| {
                log.write_csv(w, cfg.moment_window)
            })?;
        }
        write_atomic(&out.join(format!("policy_seed{seed}.csv")), |w| {
            writeln!(w, "# {POLICY_SCHEMA} seed={seed}")?;
            let mut c = csv::Writer::from_writer(w);
            let mut header = vec!["state".to_string(), "neql".to_string(), "optimal".to_string()];
            if let Some((log, _)) = &run.baseline {
                header.push(log.series.clone());
            }
            c.write_record(&header)?;
            for s in 0..env.num_states() {
                let mut rec = vec![
                    s.to_string(),
                    run.policy.action(s).to_string(),
                    reference.policy.action(s).to_string(),
                ];
                if let Some((_, p)) = &run.baseline {
                    rec.push(p.action(s).to_string());
                }
                c.write_record(&rec)?;
            }
            c.flush()?;
            Ok(())
        })?;
        if opts.plots {
            let mut series = vec![Series {
                label: "ensemble".into(),
                points: run.neql.rows.iter().filter_map(|r| r.ape.map(|a| (r.t as f64, a))).collect(),
            }];
            for (n, order) in run.neql.orders.iter().enumerate() {
                series.push(Series {
                    label: format!("learner n={order}"),
                    points: run.neql.rows.iter().map(|r| (r.t as f64, r.learner_ape[n])).collect(),
                });
            }
            if let Some((log, _)) = &run.baseline {
                series.push(Series {
                    label: log.series.clone(),
                    points: log.rows.iter().filter_map(|r| r.ape.map(|a| (r.t as f64, a))).collect(),
                });
            }
            line_plot(&out.join(format!("ape_seed{seed}.svg")), "APE", "t", "APE", &series)?;
            let weights: Vec<Series> = run
                .neql
                .orders
                .iter()
                .enumerate()
                .map(|(n, order)| Series {
                    label: format!("w n={order}"),
                    points: run.neql.rows.iter().map(|r| (r.t as f64, r.weights[n])).collect(),
                })
                .collect();
            line_plot(&out.join(format!("weights_seed{seed}.svg")), "Weights", "t", "weight", &weights)?;
        }
    }

    write_atomic(&out.join("summary.csv"), |w| {
        writeln!(w, "# {SUMMARY_SCHEMA}")?;
        let mut c = csv::Writer::from_writer(w);
        let mut header: Vec<String> =
            ["seed", "series", "iterations", "estimation_samples", "complete", "final_ape"].map(String::from).to_vec();
        header.extend(cfg.sampling.orders.iter().map(|n| format!("final_ape_n{n}")));
        c.write_record(&header)?;
        let k = cfg.sampling.orders.len();
        for (run, _) in &runs {
            let logs = std::iter::once(&run.neql).chain(run.baseline.as_ref().map(|(l, _)| l));
            for log in logs {
                let last = log.last();
                let mut rec = vec![
                    run.seed.to_string(),
                    log.series.clone(),
                    log.iterations.to_string(),
                    log.estimation_samples.to_string(),
                    log.complete.to_string(),
                    log.final_ape().map(num).unwrap_or_default(),
                ];
                let learners = last.map(|r| r.learner_ape.clone()).unwrap_or_default();
                rec.extend((0..k).map(|n| learners.get(n).map(|x| num(*x)).unwrap_or_default()));
                c.write_record(&rec)?;
            }
        }
        c.flush()?;
        Ok(())
    })?;

    let complete = runs.iter().all(|(r, _)| r.neql.complete);
    let times = runs.iter().map(|(_, t)| *t).collect();
    Ok((if complete { Outcome::Success } else { Outcome::Incomplete }, times))
}

fn needs_training_runs(checks: &[Check]) -> bool {
    checks
        .iter()
        .any(|c| matches!(c, Check::Bounds | Check::ErrorLimit | Check::Adc | Check::Weights))
}

fn check_verify_settings(cfg: &ExperimentConfig) -> Result<()> {
    let v = &cfg.verify;
    let needs_probe = v
        .checks
        .iter()
        .any(|c| matches!(c, Check::Bounds | Check::ErrorLimit | Check::Adc | Check::VarianceVsK));
    if needs_probe && cfg.probes.is_empty() {
        return Err(Error::invalid("probes", "the selected checks need at least one probe cell"));
    }
    let needs_runs = v.checks.iter().any(|c| matches!(c, Check::ErrorLimit | Check::Adc));
    if needs_runs && cfg.seeds.len() < 2 {
        return Err(Error::invalid("seeds", "the selected checks need at least two seeds"));
    }
    Ok(())
}

fn cmd_verify(cfg: &ExperimentConfig, env: &TabularEnvironment, out: &Path) -> Result<(Outcome, Vec<f64>)> {
    let gamma = cfg.discount();
    let v = &cfg.verify;
    let star = value_iteration(env.ptt(), env.costs(), gamma, VI_TOL, VI_MAX_ITERS)?;
    let mut report = Report::default();
    let mut times = Vec::new();

    let runs: Vec<(MetricsLog, f64)> = if needs_training_runs(&v.checks) {
        let opts = train_options(cfg, &Reference::new(star.q.clone()));
        cfg.seeds
            .par_iter()
            .map(|&seed| timed(|| Ok(run_neql(env, &cfg.sampling, &cfg.schedules, gamma, seed, &opts)?.log)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    times.extend(runs.iter().map(|(_, t)| *t));
    let logs: Vec<&MetricsLog> = runs.iter().map(|(l, _)| l).collect();
    let traces: Vec<ErrorTrace> = logs.iter().map(|l| l.error_trace()).collect();

    for check in &v.checks {
        match check {
            Check::Bounds => {
                for ((log, trace), seed) in logs.iter().zip(&traces).zip(&cfg.seeds) {
                    let u = cfg.schedules.update.at(log.last().map_or(0, |r| r.t));
                    let lambda = lambda_hat(trace, 0, v.window_fraction)?;
                    let params = BoundParams::variance(u, lambda);
                    let var = late_window_variance(&trace.ensemble[0], v.window_fraction)?;
                    let instance = format!("seed{seed}");
                    report.assert("cor2", &instance, "late_variance", var, cor2_bound(&params), var <= cor2_bound(&params));
                    report.note("prop1", &instance, "bound_uncorrelated", prop1_bound(&params));
                    report.note("prop1", &instance, "lambda_hat", lambda);
                }
            }
            Check::ErrorLimit => {
                let final_u = cfg.schedules.update.at(logs.iter().filter_map(|l| l.last()).map(|r| r.t).max().unwrap_or(0));
                for p in 0..cfg.probes.len() {
                    let mut r = check_error_limit(&traces, p, v.window_fraction, v.max_variance_ratio, final_u)?;
                    let (s, a) = cfg.probes[p];
                    for row in &mut r.rows {
                        row.instance = format!("s{s}_a{a}/{}", row.instance);
                    }
                    report.extend(r);
                }
            }
            Check::Adc => {
                let rows = traces.iter().map(|t| t.t.len()).min().unwrap_or(0);
                let pairs: Vec<(usize, usize)> =
                    v.adc_time_pairs.iter().copied().filter(|&(a, b)| a < rows && b < rows).collect();
                if !pairs.is_empty() && traces.iter().all(|t| !t.learners.is_empty()) {
                    for p in 0..cfg.probes.len() {
                        report.extend(adc_error_independence(&traces, &cfg.sampling.orders, p, &pairs)?);
                    }
                }
                report.note("adc", "all", "time_pairs_used", pairs.len() as f64);
            }
            Check::Weights => {
                for (i, log) in logs.iter().enumerate() {
                    let instance = format!("seed{}", cfg.seeds[i]);
                    let conv = weight_convergence(log, v.weight_tail, v.weight_tol);
                    let settled = weights_settled(log, v.weight_tail, v.weight_lag, v.weight_tol);
                    report.assert("weights", &instance, "settled", f64::from(u8::from(settled)), 1.0, settled);
                    report.note("weights", &instance, "converged_at", conv.converged_at.map_or(f64::NAN, |t| t as f64));
                    for (order, w) in log.orders.iter().zip(&conv.final_weights) {
                        report.note("weights", &format!("{instance}/n{order}"), "final_weight", *w);
                    }
                }
            }
            Check::Prop3 => {
                let mut orders = vec![1];
                orders.extend(v.prop3_orders.iter().copied().filter(|&n| n != 1));
                let envs = multiscale_from(env.ptt(), &env.costs().expected_only(), &orders)?;
                report.extend(check_prop3(&envs, &star.policy, gamma)?);
            }
            Check::Prop4 => {
                let mut orders: Vec<usize> = v.prop4_chains.iter().flatten().copied().collect();
                orders.push(1);
                orders.sort_unstable();
                orders.dedup();
                let envs = multiscale_from(env.ptt(), &env.costs().expected_only(), &orders)?;
                let g = DiscountFactor::new(v.prop4_gamma)?;
                report.extend(check_prop4_ordering(&envs, &v.prop4_chains, &star.policy, g, v.prop4_rel_tol)?);
            }
            Check::VarianceVsK => {
                let setup = VarianceSetup {
                    trajectory_length: cfg.sampling.trajectory_length,
                    min_visits: cfg.sampling.min_visits,
                    alpha_c1: cfg.schedules.alpha_c1,
                    epsilon_floor: cfg.schedules.epsilon_floor,
                    update: v.variance_update,
                    gamma,
                    budget: v.variance_budget,
                    probe: cfg.probes[0],
                    tail_frac: v.window_fraction,
                };
                let (r, variances) = check_variance_vs_k(env, &v.k_list, &cfg.seeds, &setup)?;
                report.extend(r);
                for (k, vars) in v.k_list.iter().zip(&variances) {
                    report.note("variance_vs_k", &format!("k{k}"), "median_late_variance", median(vars));
                }
            }
        }
    }

    write_atomic(&out.join("report.csv"), |w| report.write_csv(w))?;
    for row in report.failures() {
        log::error!(
            "check failed: {} {} {} = {} (threshold {})",
            row.check,
            row.instance,
            row.statistic,
            row.value,
            row.threshold.map(num).unwrap_or_default()
        );
    }
    let outcome = if report.passed() {
        Outcome::Success
    } else {
        Outcome::VerificationFailed
    };
    Ok((outcome, times))
}
