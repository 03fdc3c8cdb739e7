//! Experiment configuration files (TOML).
//!
//! ```toml
//! gamma = 0.95
//! seeds = [0, 1, 2]
//! probes = [[6, 1]]
//!
//! [environment]
//! family = "erdos-renyi"        # erdos-renyi | cliff-walk | siso | file
//! num_states = 30
//! seed = 7
//!
//! [sampling]                    # every key optional
//! trajectory_length = 10
//! min_visits = 40
//! num_environments = 4
//!
//! [schedules]                   # every key optional
//! alpha_c1 = 100
//! update = { form = "exponential", c4 = 1000 }
//! ```
//!
//! Missing values are filled from the size band of the environment; values
//! outside the band's recommended ranges produce warnings, not errors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{ScheduleSet, UpdateRatio};
use crate::env::{build_cliffwalk_env, build_er_env, build_siso_env, CliffWalkSpec, ErdosRenyiSpec, SisoSpec, TabularEnvironment};
use crate::error::{Error, Result};
use crate::estimation::{select_orders, MatrixNorm, SamplingConfig, VisitRule};
use crate::mdp::DiscountFactor;
use crate::tensor_io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum EnvironmentSpec {
    ErdosRenyi(ErdosRenyiSpec),
    CliffWalk(CliffWalkSpec),
    Siso(SisoSpec),
    /// A tensor file; relative paths are resolved against the config file.
    File { path: PathBuf },
}

impl EnvironmentSpec {
    pub fn build(&self) -> Result<TabularEnvironment> {
        match self {
            EnvironmentSpec::ErdosRenyi(s) => build_er_env(s),
            EnvironmentSpec::CliffWalk(s) => build_cliffwalk_env(s),
            EnvironmentSpec::Siso(s) => build_siso_env(s),
            EnvironmentSpec::File { path } => {
                let file = fs::File::open(path).map_err(|e| Error::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                let t = tensor_io::read(std::io::BufReader::new(file))?;
                TabularEnvironment::new(t.ptt, t.costs, 0, 1)
            }
        }
    }
}

/// Network-size band used to pick defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Band {
    Small,
    Modest,
    Large,
}

/// Recommended ranges and defaults for one band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandDefaults {
    pub trajectory_length: (usize, usize),
    pub num_environments: &'static [usize],
    pub alpha_c1: (f64, f64),
    pub epsilon_decay: (f64, f64),
    pub epsilon_floor: (f64, f64),
    pub c4: (f64, f64),
    pub default_length: usize,
    pub default_k: usize,
    pub default_c1: f64,
    pub default_floor: f64,
    pub default_c4: f64,
}

pub const MIN_VISITS: usize = 40;

impl Band {
    pub fn for_states(n: usize) -> Self {
        if n <= 1_000 {
            Band::Small
        } else if n < 10_000 {
            Band::Modest
        } else {
            Band::Large
        }
    }

    pub fn defaults(self) -> BandDefaults {
        match self {
            Band::Small => BandDefaults {
                trajectory_length: (1, 5),
                num_environments: &[2, 3],
                alpha_c1: (1e2, 5e2),
                epsilon_decay: (0.9, 0.95),
                epsilon_floor: (0.01, 0.1),
                c4: (1e2, 5e2),
                default_length: 5,
                default_k: 3,
                default_c1: 5e2,
                default_floor: 0.01,
                default_c4: 5e2,
            },
            Band::Modest => BandDefaults {
                trajectory_length: (5, 10),
                num_environments: &[3, 4, 5],
                alpha_c1: (1e2, 1e3),
                epsilon_decay: (0.95, 0.99),
                epsilon_floor: (0.01, 0.05),
                c4: (1e2, 1e3),
                default_length: 10,
                default_k: 4,
                default_c1: 1e2,
                default_floor: 0.01,
                default_c4: 1e3,
            },
            Band::Large => BandDefaults {
                trajectory_length: (10, 20),
                num_environments: &[5, 6, 7, 8],
                alpha_c1: (1e3, 1e4),
                epsilon_decay: (0.99, 0.999),
                epsilon_floor: (0.005, 0.01),
                c4: (5e3, 1e4),
                default_length: 20,
                default_k: 6,
                default_c1: 1e4,
                default_floor: 0.005,
                default_c4: 1e4,
            },
        }
    }

    /// Fastest decay for the original environment, slowest for the last
    /// order, the midpoint in between.
    pub fn epsilon_decay(self, k: usize) -> Vec<f64> {
        let (lo, hi) = self.defaults().epsilon_decay;
        (0..k)
            .map(|n| match n {
                0 => lo,
                n if n + 1 == k => hi,
                _ => 0.5 * (lo + hi),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampling {
    trajectory_length: Option<usize>,
    min_visits: Option<usize>,
    num_environments: Option<usize>,
    orders: Option<Vec<usize>>,
    max_total_samples: Option<usize>,
    max_iterations: Option<u64>,
    visit_rule: Option<VisitRule>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedules {
    alpha_c1: Option<f64>,
    epsilon_decay: Option<Vec<f64>>,
    epsilon_floor: Option<f64>,
    update: Option<UpdateRatio>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSettings {
    /// First milestone as a multiple of `|S|`.
    pub first_milestone_per_state: f64,
    /// Last milestone as a multiple of `|S|`.
    pub final_milestone_per_state: f64,
    pub norm: MatrixNorm,
}

impl Default for EstimateSettings {
    fn default() -> Self {
        Self {
            first_milestone_per_state: 1.0,
            final_milestone_per_state: 50.0,
            norm: MatrixNorm::Frobenius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    /// Variance and corollary bounds evaluated at the run's settings.
    Bounds,
    Prop3,
    Prop4,
    ErrorLimit,
    VarianceVsK,
    Adc,
    Weights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    pub checks: Vec<Check>,
    pub prop3_orders: Vec<usize>,
    pub prop4_gamma: f64,
    pub prop4_chains: Vec<Vec<usize>>,
    pub prop4_rel_tol: f64,
    /// Fraction of a run forming its early and late windows.
    pub window_fraction: f64,
    /// Largest allowed late-to-early variance ratio.
    pub max_variance_ratio: f64,
    pub k_list: Vec<usize>,
    pub variance_budget: u64,
    pub variance_update: UpdateRatio,
    /// Pairs of logged row indices compared by the dependence check.
    pub adc_time_pairs: Vec<(usize, usize)>,
    pub weight_tail: f64,
    pub weight_lag: usize,
    pub weight_tol: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            checks: vec![Check::Bounds, Check::Prop3, Check::Prop4],
            prop3_orders: (2..=10).collect(),
            prop4_gamma: 1.0 - 1e-5,
            prop4_chains: vec![vec![1, 2, 4, 8], vec![3, 6, 12]],
            prop4_rel_tol: 1e-6,
            window_fraction: 0.1,
            max_variance_ratio: 0.1,
            k_list: vec![2, 4, 6],
            variance_budget: 20_000,
            variance_update: UpdateRatio::Constant { u: 0.5 },
            adc_time_pairs: vec![(100, 200), (200, 400), (400, 800), (800, 1600)],
            weight_tail: 0.2,
            weight_lag: 100,
            weight_tol: 0.01,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    environment: EnvironmentSpec,
    gamma: Option<f64>,
    seeds: Option<Vec<u64>>,
    probes: Option<Vec<(usize, usize)>>,
    log_every: Option<u64>,
    moment_window: Option<usize>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    sampling: RawSampling,
    #[serde(default)]
    schedules: RawSchedules,
    #[serde(default)]
    estimate: EstimateSettings,
    #[serde(default)]
    verify: VerifySettings,
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    pub num_states: usize,
    pub band: Band,
    pub gamma: f64,
    pub seeds: Vec<u64>,
    pub probes: Vec<(usize, usize)>,
    pub log_every: u64,
    /// Half-width, in logged rows, of the windowed error moments.
    pub moment_window: usize,
    pub output_dir: PathBuf,
    pub sampling: SamplingConfig,
    pub max_iterations: u64,
    pub schedules: ScheduleSet,
    pub estimate: EstimateSettings,
    pub verify: VerifySettings,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl ExperimentConfig {
    pub fn discount(&self) -> DiscountFactor {
        DiscountFactor::new(self.gamma).expect("validated at parse time")
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("configuration serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base).map_err(|e| match e {
        Error::Parse { .. } => e,
        other => Error::Parse {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Parses configuration text; relative paths resolve against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
        path: PathBuf::from("<config>"),
        message: e.to_string(),
    })?;
    resolve(raw, base)
}

fn resolve(raw: RawConfig, base: &Path) -> Result<ExperimentConfig> {
    let mut environment = raw.environment;
    if let EnvironmentSpec::File { path } = &mut environment {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
    let num_states = match &environment {
        EnvironmentSpec::ErdosRenyi(s) => s.num_states,
        EnvironmentSpec::CliffWalk(s) => s.rows * s.cols.unwrap_or(3 * s.rows),
        EnvironmentSpec::Siso(s) => s.buffer_size + 1,
        EnvironmentSpec::File { .. } => environment.build()?.num_states(),
    };
    let band = Band::for_states(num_states);
    let d = band.defaults();
    let mut warnings = Vec::new();

    let gamma = raw.gamma.unwrap_or(0.95);
    DiscountFactor::new(gamma)?;
    let seeds = raw.seeds.unwrap_or_else(|| vec![0]);
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "at least one seed is required"));
    }

    let s = raw.sampling;
    let k = s.num_environments.or(s.orders.as_ref().map(Vec::len)).unwrap_or(d.default_k);
    let orders = match s.orders {
        Some(o) => o,
        None => select_orders(k, 2 * k.max(2))?,
    };
    let mut sampling = SamplingConfig::new(s.trajectory_length.unwrap_or(d.default_length), s.min_visits.unwrap_or(MIN_VISITS), orders);
    sampling.num_environments = k;
    if let Some(cap) = s.max_total_samples {
        sampling.max_total_samples = cap;
    }
    if let Some(rule) = s.visit_rule {
        sampling.visit_rule = rule;
    }
    sampling.validate()?;
    let max_iterations = s.max_iterations.unwrap_or(10_000_000);
    if max_iterations == 0 {
        return Err(Error::invalid("max_iterations", "must be positive"));
    }

    let c = raw.schedules;
    let schedules = ScheduleSet {
        alpha_c1: c.alpha_c1.unwrap_or(d.default_c1),
        epsilon_decay: c.epsilon_decay.unwrap_or_else(|| band.epsilon_decay(k)),
        epsilon_floor: c.epsilon_floor.unwrap_or(d.default_floor),
        update: c.update.unwrap_or(UpdateRatio::Exponential { c4: d.default_c4 }),
    };
    schedules.validate(k)?;

    let probes = raw.probes.unwrap_or_default();
    let num_actions = match &environment {
        EnvironmentSpec::ErdosRenyi(s) => s.num_actions,
        EnvironmentSpec::CliffWalk(_) => 4,
        EnvironmentSpec::Siso(_) => 2,
        EnvironmentSpec::File { .. } => environment.build()?.num_actions(),
    };
    if probes.iter().any(|&(s, a)| s >= num_states || a >= num_actions) {
        return Err(Error::invalid("probes", "probe cell outside the state-action space"));
    }
    let log_every = raw.log_every.unwrap_or(1);
    if log_every == 0 {
        return Err(Error::invalid("log_every", "must be at least 1"));
    }
    let v = &raw.verify;
    if !(v.window_fraction > 0.0 && v.window_fraction <= 0.5) {
        return Err(Error::invalid("verify.window_fraction", "must lie in (0, 0.5]"));
    }
    if v.prop3_orders.iter().any(|&n| n < 2) {
        return Err(Error::invalid("verify.prop3_orders", "orders must be at least 2"));
    }
    DiscountFactor::new(v.prop4_gamma).map_err(|_| Error::invalid("verify.prop4_gamma", "must lie in (0, 1)"))?;
    if v.k_list.windows(2).any(|w| w[0] >= w[1]) || v.k_list.first().is_some_and(|&k| k < 2) {
        return Err(Error::invalid("verify.k_list", "sizes must be at least 2 and increasing"));
    }
    let e = &raw.estimate;
    if !(e.first_milestone_per_state > 0.0 && e.final_milestone_per_state >= e.first_milestone_per_state) {
        return Err(Error::invalid("estimate", "milestones must satisfy 0 < first <= final"));
    }

    let mut warn = |field: &str, value: String, range: String| {
        warnings.push(format!("{field} = {value} is outside the {band:?} band's recommended {range}"));
    };
    let l = sampling.trajectory_length;
    if l < d.trajectory_length.0 || l > d.trajectory_length.1 {
        warn("trajectory_length", l.to_string(), format!("[{}, {}]", d.trajectory_length.0, d.trajectory_length.1));
    }
    if !d.num_environments.contains(&k) {
        warn("num_environments", k.to_string(), format!("{:?}", d.num_environments));
    }
    let outside = |x: f64, (lo, hi): (f64, f64)| x < lo || x > hi;
    if outside(schedules.alpha_c1, d.alpha_c1) {
        warn("alpha_c1", schedules.alpha_c1.to_string(), format!("{:?}", d.alpha_c1));
    }
    for c2 in &schedules.epsilon_decay {
        if outside(*c2, d.epsilon_decay) {
            warn("epsilon_decay", c2.to_string(), format!("{:?}", d.epsilon_decay));
        }
    }
    if outside(schedules.epsilon_floor, d.epsilon_floor) {
        warn("epsilon_floor", schedules.epsilon_floor.to_string(), format!("{:?}", d.epsilon_floor));
    }
    if let UpdateRatio::Exponential { c4 } | UpdateRatio::Hyperbolic { c4 } = schedules.update {
        if outside(c4, d.c4) {
            warn("c4", c4.to_string(), format!("{:?}", d.c4));
        }
    }
    if sampling.min_visits != MIN_VISITS {
        warn("min_visits", sampling.min_visits.to_string(), MIN_VISITS.to_string());
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(ExperimentConfig {
        environment,
        num_states,
        band,
        gamma,
        seeds,
        probes,
        log_every,
        moment_window: raw.moment_window.unwrap_or(20),
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("out")),
        sampling,
        max_iterations,
        schedules,
        estimate: raw.estimate,
        verify: raw.verify,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config_str(text, Path::new("."))
    }

    #[test]
    fn minimal_modest_config_gets_band_defaults() {
        let cfg = parse("[environment]\nfamily = \"erdos-renyi\"\nnum_states = 5000\n").unwrap();
        assert_eq!(cfg.band, Band::Modest);
        assert_eq!(cfg.sampling.trajectory_length, 10);
        assert_eq!(cfg.sampling.num_environments, 4);
        assert_eq!(cfg.sampling.orders, vec![1, 2, 3, 5]);
        assert_eq!(cfg.sampling.min_visits, 40);
        assert_eq!(cfg.schedules.epsilon_decay, vec![0.95, 0.97, 0.97, 0.99]);
        assert_eq!(cfg.schedules.update, UpdateRatio::Exponential { c4: 1000.0 });
        assert!(cfg.warnings.is_empty(), "{:?}", cfg.warnings);
    }

    #[test]
    fn bands_follow_state_count() {
        assert_eq!(Band::for_states(1000), Band::Small);
        assert_eq!(Band::for_states(1001), Band::Modest);
        assert_eq!(Band::for_states(10_000), Band::Large);
        let small = parse("[environment]\nfamily = \"siso\"\nbuffer_size = 9\n").unwrap();
        assert_eq!(small.num_states, 10);
        assert_eq!(small.sampling.num_environments, 3);
        let cliff = parse("[environment]\nfamily = \"cliff-walk\"\nrows = 4\n").unwrap();
        assert_eq!(cliff.num_states, 48);
    }

    #[test]
    fn out_of_band_values_warn() {
        let cfg = parse(
            "[environment]\nfamily = \"erdos-renyi\"\nnum_states = 30\n\
             [sampling]\ntrajectory_length = 10\nnum_environments = 4\n",
        )
        .unwrap();
        assert!(cfg.warnings.iter().any(|w| w.starts_with("trajectory_length")));
        assert!(cfg.warnings.iter().any(|w| w.starts_with("num_environments")));
    }

    #[test]
    fn errors_name_the_field() {
        let err = parse("gamma = 1.5\n[environment]\nfamily = \"erdos-renyi\"\nnum_states = 30\n").unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
        let err = parse("[environment]\nfamily = \"erdos-renyi\"\nnum_states = 30\n[sampling]\norders = [2, 3]\n")
            .unwrap_err();
        assert!(err.to_string().contains("orders"), "{err}");
        let err = parse("[environment]\nfamily = \"erdos-renyi\"\nnum_states = 30\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!(parse("[environment]\nfamily = \"torus\"\n").is_err());
        assert!(parse("probes = [[30, 0]]\n[environment]\nfamily = \"erdos-renyi\"\nnum_states = 30\n").is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let text = "seeds = [1, 2]\n[environment]\nfamily = \"erdos-renyi\"\nnum_states = 30\nseed = 7\n";
        let a = parse(text).unwrap();
        let b = parse(text).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = parse(&text.replace("seed = 7", "seed = 8")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn schedule_forms_parse() {
        let cfg = parse(
            "[environment]\nfamily = \"erdos-renyi\"\nnum_states = 30\n\
             [schedules]\nupdate = { form = \"hyperbolic\", c4 = 200 }\n",
        )
        .unwrap();
        assert_eq!(cfg.schedules.update, UpdateRatio::Hyperbolic { c4: 200.0 });
        assert!(parse(
            "[environment]\nfamily = \"erdos-renyi\"\nnum_states = 30\n\
             [schedules]\nupdate = { form = \"geometric\", c4 = 2 }\n",
        )
        .is_err());
    }
}
