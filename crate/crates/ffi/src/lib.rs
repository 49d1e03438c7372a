//! C ABI for smoothol.
//!
//! Every fallible function returns a [`SmootholStatus`]; on failure the
//! message is available from [`smoothol_last_error`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use smoothol::adversary::greedy_fill;
use smoothol::bandit::{compose_smoothness, igw_distribution};
use smoothol::coupling::{validate_coupling, CouplingConfig};
use smoothol::ftpl::{schedule, FtplVariant};
use smoothol::harness::{run_experiment, ExperimentConfig};
use smoothol::model::{Context, HypothesisClass, LossFunction, OutputKind};
use smoothol::oracle::{ErmQuery, Oracle, WeightedExample};
use smoothol::relax::three_point_min;
use smoothol::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmootholStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Invariant = 4,
    SmoothnessViolated = 5,
    Io = 6,
    Panic = 7,
    Other = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> SmootholStatus {
    match err {
        Error::Config(_) | Error::Json(_) => SmootholStatus::Config,
        Error::InvalidParameter(_)
        | Error::DomainMismatch(_)
        | Error::EmptyGrid
        | Error::EmptyTrace
        | Error::InsufficientTrials { .. }
        | Error::LinearLossRequired(_)
        | Error::NotCheckableExactly(_) => SmootholStatus::InvalidArgument,
        Error::Invariant(_) => SmootholStatus::Invariant,
        Error::SmoothnessViolated { .. } => SmootholStatus::SmoothnessViolated,
        Error::Io(_) => SmootholStatus::Io,
    }
}

struct Fail(SmootholStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SmootholStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SmootholStatus::InvalidArgument, msg.into())
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> SmootholStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SmootholStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside smoothol");
            SmootholStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn smoothol_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Opaque hypothesis class.
pub struct SmootholClass(Arc<HypothesisClass>);

/// Opaque ERM oracle.
pub struct SmootholOracle(Oracle);

/// Table class from a row-major `hypotheses x atoms` array.
///
/// # Safety
/// `values` must point to `hypotheses * atoms` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smoothol_class_table(
    values: *const f64,
    hypotheses: usize,
    atoms: usize,
    binary: bool,
    out_class: *mut *mut SmootholClass,
) -> SmootholStatus {
    guard(|| {
        let out_class = out(out_class, "out_class")?;
        let len = hypotheses
            .checked_mul(atoms)
            .ok_or_else(|| invalid("table too large"))?;
        if len == 0 {
            return Err(invalid("class must be nonempty"));
        }
        let flat = slice(values, len, "values")?;
        let rows = flat.chunks(atoms).map(<[f64]>::to_vec).collect();
        let kind = if binary {
            OutputKind::Binary
        } else {
            OutputKind::RealValued
        };
        let class = HypothesisClass::table(rows, kind)?;
        *out_class = Box::into_raw(Box::new(SmootholClass(Arc::new(class))));
        Ok(())
    })
}

/// `size` thresholds on `[0, 1]` evaluated at the midpoints of `atoms` cells.
///
/// # Safety
/// `out_class` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smoothol_class_thresholds(
    size: usize,
    atoms: usize,
    out_class: *mut *mut SmootholClass,
) -> SmootholStatus {
    guard(|| {
        let out_class = out(out_class, "out_class")?;
        if atoms == 0 {
            return Err(invalid("atoms must be >= 1"));
        }
        let class = HypothesisClass::threshold_grid(size)?.on_atom_grid(atoms);
        *out_class = Box::into_raw(Box::new(SmootholClass(Arc::new(class))));
        Ok(())
    })
}

/// Number of hypotheses, or 0 for NULL.
///
/// # Safety
/// `class` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smoothol_class_len(class: *const SmootholClass) -> usize {
    class.as_ref().map_or(0, |c| c.0.len())
}

/// Value of hypothesis `h` on atom `atom`.
///
/// # Safety
/// `class` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn smoothol_class_eval(
    class: *const SmootholClass,
    h: usize,
    atom: u32,
    out_value: *mut f64,
) -> SmootholStatus {
    guard(|| {
        let class = class.as_ref().ok_or_else(|| null("class"))?;
        let out_value = out(out_value, "out_value")?;
        *out_value = class.0.evaluate(h, &Context::Atom(atom))?;
        Ok(())
    })
}

/// # Safety
/// `class` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smoothol_class_free(class: *mut SmootholClass) {
    if !class.is_null() {
        drop(Box::from_raw(class));
    }
}

/// Exact oracle over `class` with a named loss (`absolute`, `linear`,
/// `square`, `unit_square`). The class handle may be freed afterwards.
///
/// # Safety
/// `class` must be a live handle, `loss` a C string, `out_oracle` writable.
#[no_mangle]
pub unsafe extern "C" fn smoothol_oracle_new(
    class: *const SmootholClass,
    loss: *const c_char,
    out_oracle: *mut *mut SmootholOracle,
) -> SmootholStatus {
    guard(|| {
        let class = class.as_ref().ok_or_else(|| null("class"))?;
        let out_oracle = out(out_oracle, "out_oracle")?;
        let loss = LossFunction::parse(string(loss, "loss")?)?;
        let oracle = Oracle::exact(Arc::clone(&class.0), loss);
        *out_oracle = Box::into_raw(Box::new(SmootholOracle(oracle)));
        Ok(())
    })
}

/// Weighted ERM over atom contexts. Row `i` contributes
/// `weights[i] * loss(h(atoms[i]), labels[i])`, or `weights[i] * h(atoms[i])`
/// when `identity` is non-NULL and `identity[i] != 0`. `labels` may be NULL
/// when every row is an identity row.
///
/// # Safety
/// Arrays must hold `len` elements; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn smoothol_oracle_query(
    oracle: *mut SmootholOracle,
    atoms: *const u32,
    labels: *const f64,
    weights: *const f64,
    identity: *const u8,
    len: usize,
    out_index: *mut usize,
    out_objective: *mut f64,
) -> SmootholStatus {
    guard(|| {
        let oracle = oracle.as_mut().ok_or_else(|| null("oracle"))?;
        let out_index = out(out_index, "out_index")?;
        let atoms = slice(atoms, len, "atoms")?;
        let weights = slice(weights, len, "weights")?;
        let identity = if identity.is_null() {
            None
        } else {
            Some(slice(identity, len, "identity")?)
        };
        let all_identity = identity.is_some_and(|f| f.iter().all(|&b| b != 0));
        let labels = if labels.is_null() && all_identity {
            None
        } else {
            Some(slice(labels, len, "labels")?)
        };
        let mut query = ErmQuery::new();
        for i in 0..len {
            let ctx = Context::Atom(atoms[i]);
            let row = match (identity.map(|f| f[i] != 0), labels) {
                (Some(true), _) => WeightedExample::identity(ctx, weights[i]),
                (_, Some(labels)) => WeightedExample::main(ctx, labels[i], weights[i]),
                (_, None) => return Err(null("labels")),
            };
            query.push(row);
        }
        let result = oracle.0.query(&query)?;
        *out_index = result.hypothesis_index;
        if let Some(obj) = out_objective.as_mut() {
            *obj = result.objective_value;
        }
        Ok(())
    })
}

/// # Safety
/// `oracle` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smoothol_oracle_call_count(oracle: *const SmootholOracle) -> u64 {
    oracle.as_ref().map_or(0, |o| o.0.call_count())
}

/// # Safety
/// `oracle` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smoothol_oracle_free(oracle: *mut SmootholOracle) {
    if !oracle.is_null() {
        drop(Box::from_raw(oracle));
    }
}

/// Inverse-gap-weighted action distribution for `k` predicted losses.
///
/// # Safety
/// `predictions` and `out_probs` must hold `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn smoothol_igw(
    predictions: *const f64,
    k: usize,
    gamma: f64,
    out_probs: *mut f64,
) -> SmootholStatus {
    guard(|| {
        let preds = slice(predictions, k, "predictions")?;
        let dst = slice_mut(out_probs, k, "out_probs")?;
        dst.copy_from_slice(&igw_distribution(preds, gamma)?);
        Ok(())
    })
}

/// Smoothness of the context-action pair when actions are drawn from any
/// distribution over `k` actions: `sigma / k`.
///
/// # Safety
/// `out_sigma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smoothol_compose_smoothness(
    sigma: f64,
    k: usize,
    out_sigma: *mut f64,
) -> SmootholStatus {
    guard(|| {
        *out(out_sigma, "out_sigma")? = compose_smoothness(sigma, k)?;
        Ok(())
    })
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SmootholSchedule {
    pub eta: f64,
    pub n: usize,
    pub m: usize,
    /// NaN when the variant has no label grid.
    pub epsilon: f64,
    pub zeta: f64,
}

/// Default FTPL parameters. `variant` is `classification`, `dual` or `single`.
///
/// # Safety
/// `variant` must be a C string and `out_schedule` writable.
#[no_mangle]
pub unsafe extern "C" fn smoothol_ftpl_schedule(
    horizon: usize,
    sigma: f64,
    lipschitz: f64,
    d_or_p: f64,
    variant: *const c_char,
    out_schedule: *mut SmootholSchedule,
) -> SmootholStatus {
    guard(|| {
        let dst = out(out_schedule, "out_schedule")?;
        let variant = FtplVariant::parse(string(variant, "variant")?)?;
        let s = schedule(horizon, sigma, lipschitz, d_or_p, variant)?;
        *dst = SmootholSchedule {
            eta: s.eta,
            n: s.n,
            m: s.m,
            epsilon: s.epsilon.unwrap_or(f64::NAN),
            zeta: s.zeta,
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SmootholCouplingReport {
    pub miss_rate: f64,
    pub bound: f64,
    pub exp_bound: f64,
    pub miss_std: f64,
    pub x_marginal_pvalue: f64,
    pub z_marginal_pvalue: f64,
    pub max_density_ratio: f64,
}

/// Coupling check with uniform `mu` on `atoms` points and the most
/// concentrated `sigma`-smooth `p`.
///
/// # Safety
/// `out_report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smoothol_couple_test(
    sigma: f64,
    k: usize,
    trials: usize,
    atoms: usize,
    seed: u64,
    out_report: *mut SmootholCouplingReport,
) -> SmootholStatus {
    guard(|| {
        let dst = out(out_report, "out_report")?;
        if atoms == 0 {
            return Err(invalid("atoms must be >= 1"));
        }
        let mu = vec![1.0 / atoms as f64; atoms];
        let p = greedy_fill(&mu, sigma);
        let r = validate_coupling(
            &CouplingConfig {
                sigma,
                k,
                mu,
                p,
                seed,
            },
            trials,
        )?;
        *dst = SmootholCouplingReport {
            miss_rate: r.miss_rate,
            bound: r.bound,
            exp_bound: r.exp_bound,
            miss_std: r.miss_std,
            x_marginal_pvalue: r.x_marginal_pvalue,
            z_marginal_pvalue: r.z_marginal_pvalue,
            max_density_ratio: r.max_density_ratio,
        };
        Ok(())
    })
}

/// Minimizes a convex sequence given at `len` grid points, calling
/// `objective` once per distinct index it needs.
///
/// # Safety
/// `grid` must hold `len` doubles; outputs must be writable; `objective`
/// must be safe to call with `user_data`.
#[no_mangle]
pub unsafe extern "C" fn smoothol_three_point_min(
    grid: *const f64,
    len: usize,
    objective: Option<extern "C" fn(index: usize, user_data: *mut c_void) -> f64>,
    user_data: *mut c_void,
    out_index: *mut usize,
    out_evaluations: *mut usize,
) -> SmootholStatus {
    guard(|| {
        let grid = slice(grid, len, "grid")?;
        let objective = objective.ok_or_else(|| null("objective"))?;
        let out_index = out(out_index, "out_index")?;
        let r = three_point_min(grid, |i| objective(i, user_data))?;
        *out_index = r.index;
        if let Some(e) = out_evaluations.as_mut() {
            *e = r.evaluations;
        }
        Ok(())
    })
}

/// Runs an experiment config given as JSON and returns the summary as a
/// JSON string; release it with [`smoothol_string_free`].
///
/// # Safety
/// `config_json` must be a C string and `out_summary` writable.
#[no_mangle]
pub unsafe extern "C" fn smoothol_run_experiment_json(
    config_json: *const c_char,
    out_summary: *mut *mut c_char,
) -> SmootholStatus {
    guard(|| {
        let dst = out(out_summary, "out_summary")?;
        let config = ExperimentConfig::from_json(string(config_json, "config_json")?)?;
        let summary = run_experiment(&config)?;
        let text = serde_json::to_string(&summary)
            .map_err(|e| Fail(SmootholStatus::Other, e.to_string()))?;
        *dst = CString::new(text)
            .map_err(|e| Fail(SmootholStatus::Other, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smoothol_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
