//! C ABI for nhop-eql.
//!
//! Objects are opaque handles created by `nhop_*_new`-style constructors and
//! released with the matching `nhop_*_free`. Every fallible function returns
//! an [`NhopStatus`]; on failure, [`nhop_last_error`] describes the error on
//! the calling thread. Array outputs are copied into caller-owned buffers
//! whose length is passed alongside and checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nhop_eql::ensemble::{jsd, q_to_probabilities, run_neql, Reference, RunOptions, RunOutput, ScheduleSet, UpdateRatio};
use nhop_eql::env::{build_cliffwalk_env, build_er_env, build_siso_env, CliffWalkSpec, ErdosRenyiSpec, SisoSpec, TabularEnvironment};
use nhop_eql::estimation::{select_orders, SamplingConfig};
use nhop_eql::mdp::{value_iteration, DiscountFactor, Solution};
use nhop_eql::{tensor_io, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NhopStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    NotStochastic = 4,
    NotConverged = 5,
    Parse = 6,
    Io = 7,
    BufferTooSmall = 8,
    Internal = 9,
    Panic = 10,
}

/// A tabular environment.
pub struct NhopEnv(TabularEnvironment);

/// Optimal values, Q-table and policy of an environment.
pub struct NhopSolution(Solution);

/// Result of an ensemble training run.
pub struct NhopRun {
    out: RunOutput,
    num_states: usize,
    num_actions: usize,
}

/// Settings of [`nhop_run_neql`]. Zero fields take the defaults of
/// [`nhop_run_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NhopRunConfig {
    pub trajectory_length: usize,
    pub min_visits: usize,
    pub num_environments: usize,
    pub max_iterations: u64,
    pub alpha_c1: f64,
    pub epsilon_floor: f64,
    /// Time constant of the update ratio `1 - exp(-t / c4)`.
    pub c4: f64,
    pub gamma: f64,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> NhopStatus {
    match e {
        Error::Dimension(_) => NhopStatus::Dimension,
        Error::InvalidArgument { .. } => NhopStatus::InvalidArgument,
        Error::NotStochastic(_) => NhopStatus::NotStochastic,
        Error::NotConverged { .. } | Error::EvaluationResidual { .. } | Error::Singular => NhopStatus::NotConverged,
        Error::Parse { .. } | Error::Format { .. } => NhopStatus::Parse,
        Error::Io(_) | Error::Csv(_) => NhopStatus::Io,
        _ => NhopStatus::Internal,
    }
}

struct Fail(NhopStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NhopStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NhopStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            NhopStatus::Panic
        }
    }
}

fn null() -> Fail {
    Fail(NhopStatus::NullPointer, "null pointer argument".into())
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn fill<T: Copy>(src: &[T], out: *mut T, len: usize) -> Result<(), Fail> {
    if len < src.len() {
        return Err(Fail(
            NhopStatus::BufferTooSmall,
            format!("buffer holds {len} elements, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null());
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    *out = value;
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn nhop_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_env_erdos_renyi(
    num_states: usize,
    num_actions: usize,
    edge_probability: f64,
    seed: u64,
    out: *mut *mut NhopEnv,
) -> NhopStatus {
    guard(|| {
        let mut spec = ErdosRenyiSpec::new(num_states, num_actions, seed);
        spec.edge_probability = edge_probability;
        put(out, NhopEnv(build_er_env(&spec)?))
    })
}

/// `cols == 0` selects three columns per row.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_env_cliff_walk(rows: usize, cols: usize, out: *mut *mut NhopEnv) -> NhopStatus {
    guard(|| {
        let spec = CliffWalkSpec {
            rows,
            cols: (cols > 0).then_some(cols),
        };
        put(out, NhopEnv(build_cliffwalk_env(&spec)?))
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_env_siso(buffer_size: usize, out: *mut *mut NhopEnv) -> NhopStatus {
    guard(|| put(out, NhopEnv(build_siso_env(&SisoSpec::new(buffer_size))?)))
}

/// Loads a tensor text file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_env_load(path: *const c_char, out: *mut *mut NhopEnv) -> NhopStatus {
    guard(|| {
        if path.is_null() {
            return Err(null());
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(NhopStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
        let file = File::open(path).map_err(|e| Fail(NhopStatus::Io, format!("{path}: {e}")))?;
        let t = tensor_io::read(BufReader::new(file))?;
        put(out, NhopEnv(TabularEnvironment::new(t.ptt, t.costs, 0, 1)?))
    })
}

/// # Safety
/// `env` must be a live handle and the outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_env_shape(
    env: *const NhopEnv,
    num_states: *mut usize,
    num_actions: *mut usize,
) -> NhopStatus {
    guard(|| {
        let env = &deref(env)?.0;
        write(num_states, env.num_states())?;
        write(num_actions, env.num_actions())
    })
}

/// Expected stage costs, row-major `[s * num_actions + a]`.
///
/// # Safety
/// `env` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_env_costs(env: *const NhopEnv, out: *mut f64, len: usize) -> NhopStatus {
    guard(|| {
        let c = deref(env)?.0.costs().expected();
        let flat: Vec<f64> = (0..c.nrows()).flat_map(|s| (0..c.ncols()).map(move |a| c[(s, a)])).collect();
        fill(&flat, out, len)
    })
}

/// # Safety
/// `env` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nhop_env_free(env: *mut NhopEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// `env` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_value_iteration(
    env: *const NhopEnv,
    gamma: f64,
    tol: f64,
    max_iterations: usize,
    out: *mut *mut NhopSolution,
) -> NhopStatus {
    guard(|| {
        let env = &deref(env)?.0;
        let sol = value_iteration(env.ptt(), env.costs(), DiscountFactor::new(gamma)?, tol, max_iterations)?;
        put(out, NhopSolution(sol))
    })
}

/// # Safety
/// `sol` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_solution_values(sol: *const NhopSolution, out: *mut f64, len: usize) -> NhopStatus {
    guard(|| fill(deref(sol)?.0.values.vector().as_slice(), out, len))
}

/// # Safety
/// `sol` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_solution_policy(sol: *const NhopSolution, out: *mut usize, len: usize) -> NhopStatus {
    guard(|| fill(deref(sol)?.0.policy.actions(), out, len))
}

/// Q-table, row-major `[s * num_actions + a]`.
///
/// # Safety
/// `sol` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_solution_q(sol: *const NhopSolution, out: *mut f64, len: usize) -> NhopStatus {
    guard(|| {
        let q = &deref(sol)?.0.q;
        let flat: Vec<f64> = (0..q.num_states()).flat_map(|s| q.row(s)).collect();
        fill(&flat, out, len)
    })
}

/// # Safety
/// `sol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nhop_solution_free(sol: *mut NhopSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Settings for a modest-sized problem with four learners.
#[no_mangle]
pub extern "C" fn nhop_run_config_default() -> NhopRunConfig {
    NhopRunConfig {
        trajectory_length: 10,
        min_visits: 40,
        num_environments: 4,
        max_iterations: 10_000_000,
        alpha_c1: 100.0,
        epsilon_floor: 0.01,
        c4: 1000.0,
        gamma: 0.95,
        seed: 0,
    }
}

fn resolve(cfg: &NhopRunConfig) -> NhopRunConfig {
    let d = nhop_run_config_default();
    let pick = |x: usize, y: usize| if x == 0 { y } else { x };
    let pickf = |x: f64, y: f64| if x == 0.0 { y } else { x };
    NhopRunConfig {
        trajectory_length: pick(cfg.trajectory_length, d.trajectory_length),
        min_visits: pick(cfg.min_visits, d.min_visits),
        num_environments: pick(cfg.num_environments, d.num_environments),
        max_iterations: if cfg.max_iterations == 0 { d.max_iterations } else { cfg.max_iterations },
        alpha_c1: pickf(cfg.alpha_c1, d.alpha_c1),
        epsilon_floor: pickf(cfg.epsilon_floor, d.epsilon_floor),
        c4: pickf(cfg.c4, d.c4),
        gamma: pickf(cfg.gamma, d.gamma),
        seed: cfg.seed,
    }
}

/// Estimates the model of `env`, trains the ensemble and scores it against
/// the optimal policy of `env`. `orders` may be null, in which case the
/// orders are chosen from `num_environments`. A run stopped by the iteration
/// cap still succeeds; see [`nhop_run_complete`].
///
/// # Safety
/// `env` and `cfg` must be valid, `orders` null or valid for `num_orders`
/// reads, and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_run_neql(
    env: *const NhopEnv,
    cfg: *const NhopRunConfig,
    orders: *const usize,
    num_orders: usize,
    out: *mut *mut NhopRun,
) -> NhopStatus {
    guard(|| {
        let env = &deref(env)?.0;
        let c = resolve(deref(cfg)?);
        let orders = if orders.is_null() {
            select_orders(c.num_environments, 2 * c.num_environments)?
        } else {
            slice(orders, num_orders)?.to_vec()
        };
        let k = orders.len();
        let mut sampling = SamplingConfig::new(c.trajectory_length, c.min_visits, orders);
        sampling.num_environments = k;
        let schedules = ScheduleSet::new(c.alpha_c1, k, c.epsilon_floor, UpdateRatio::Exponential { c4: c.c4 });
        let gamma = DiscountFactor::new(c.gamma)?;
        let q_star = value_iteration(env.ptt(), env.costs(), gamma, 1e-10, 10_000_000)?.q;
        let opts = RunOptions::from_sampling(&sampling, c.max_iterations).with_reference(Reference::new(q_star));
        let run = run_neql(env, &sampling, &schedules, gamma, c.seed, &opts)?;
        put(
            out,
            NhopRun {
                out: run,
                num_states: env.num_states(),
                num_actions: env.num_actions(),
            },
        )
    })
}

/// # Safety
/// `run` must be a live handle and the outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_run_summary(
    run: *const NhopRun,
    iterations: *mut u64,
    complete: *mut bool,
    final_ape: *mut f64,
) -> NhopStatus {
    guard(|| {
        let log = &deref(run)?.out.log;
        write(iterations, log.iterations)?;
        write(complete, log.complete)?;
        write(final_ape, log.final_ape().unwrap_or(f64::NAN))
    })
}

/// # Safety
/// `run` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_run_complete(run: *const NhopRun, out: *mut bool) -> NhopStatus {
    guard(|| write(out, deref(run)?.out.log.complete))
}

/// # Safety
/// `run` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_run_policy(run: *const NhopRun, out: *mut usize, len: usize) -> NhopStatus {
    guard(|| fill(deref(run)?.out.policy.actions(), out, len))
}

/// Fused Q-table, row-major `[s * num_actions + a]`.
///
/// # Safety
/// `run` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_run_q(run: *const NhopRun, out: *mut f64, len: usize) -> NhopStatus {
    guard(|| {
        let r = deref(run)?;
        let flat: Vec<f64> = (0..r.num_states).flat_map(|s| r.out.q.row(s)).collect();
        debug_assert_eq!(flat.len(), r.num_states * r.num_actions);
        fill(&flat, out, len)
    })
}

/// Learner weights at the last logged step, one per environment.
///
/// # Safety
/// `run` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn nhop_run_weights(run: *const NhopRun, out: *mut f64, len: usize) -> NhopStatus {
    guard(|| {
        let r = deref(run)?;
        let w = r.out.log.last().map(|row| row.weights.clone()).unwrap_or_default();
        fill(&w, out, len)
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nhop_run_free(run: *mut NhopRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Softmax of the negated action values of one state.
///
/// # Safety
/// `q` and `out` must be valid for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn nhop_q_to_probabilities(q: *const f64, len: usize, out: *mut f64) -> NhopStatus {
    guard(|| {
        let q = slice(q, len)?;
        if q.is_empty() {
            return Err(Fail(NhopStatus::InvalidArgument, "empty action-value row".into()));
        }
        fill(&q_to_probabilities(q), out, len)
    })
}

/// Jensen-Shannon divergence in bits.
///
/// # Safety
/// `p` and `q` must be valid for `len` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn nhop_jsd(p: *const f64, q: *const f64, len: usize, out: *mut f64) -> NhopStatus {
    guard(|| write(out, jsd(slice(p, len)?, slice(q, len)?)?))
}
