//! C ABI over `smoothing-core`.
//!
//! Models and fixed-point grids are opaque handles. Every fallible function
//! returns an [`SmStatus`]; the message of the last failure on the calling
//! thread is available from [`sm_last_error`]. Strings returned by the
//! library are released with [`sm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use smoothing_core::laplace::{
    derive_poisson, iterate_phi, tail_constant_from_laplace, Calibration, FixpointOptions, GridSpec, LaplaceGrid,
    LaplacePool, LowerTail,
};
use smoothing_core::mellin::{analyze, evaluate, McConfig, MomentMethod, Regime, RootOptions};
use smoothing_core::model::ModelSpec;
use smoothing_core::parallel::Exec;
use smoothing_core::tail::{estimate_c_plus, Window};
use smoothing_core::tree::{sample_r, PrunePolicy};
use smoothing_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidModel = 3,
    InvalidArgument = 4,
    RegimeMismatch = 5,
    /// A numerical routine failed: no convergence, too few samples, etc.
    Numerical = 6,
    Io = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct SmModel {
    spec: ModelSpec,
}

/// Opaque Laplace fixed-point result.
pub struct SmGrid {
    grid: LaplaceGrid,
    c_tail: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SmEstimate {
    pub value: f64,
    pub std_error: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SmTreeSample {
    pub r_value: f64,
    pub pruned_weight: f64,
    pub max_weight: f64,
    pub nodes_expanded: u64,
    pub capped: bool,
    pub censored: bool,
}

/// Pruning of the simulated tree.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmPrunePolicy {
    pub weight_floor: f64,
    pub depth_cap: u32,
    pub node_cap: u64,
    pub censor_pruned_weight: f64,
}

/// Settings for the Laplace fixed point. `alpha` is NaN to take the
/// exponent from the model; `workers` 0 means all cores.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmFixpointOptions {
    pub alpha: f64,
    pub pool_size: u64,
    pub seed: u64,
    pub t_min: f64,
    pub t_max: f64,
    pub points_per_decade: u32,
    pub tol: f64,
    pub max_iter: u32,
    pub workers: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SmStatus {
    match e {
        Error::InvalidModel { .. } | Error::InvalidConfig { .. } | Error::Json(_) => SmStatus::InvalidModel,
        Error::InvalidArgument(_) => SmStatus::InvalidArgument,
        Error::RegimeMismatch { .. } | Error::NoTwoRoots { .. } => SmStatus::RegimeMismatch,
        Error::Io(_) => SmStatus::Io,
        _ => SmStatus::Numerical,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (SmStatus, String)>) -> SmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            SmStatus::Panic
        }
    }
}

fn core<T>(r: smoothing_core::Result<T>) -> Result<T, (SmStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (SmStatus, String) {
    (SmStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to a live value created by this library.
unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (SmStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (SmStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

fn exec(workers: u32) -> Exec {
    if workers == 0 {
        Exec::default()
    } else {
        Exec::with_workers(workers as usize)
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a model from JSON and validates it.
///
/// # Safety
/// `json` must be a nul-terminated string; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_model_from_json(json: *const c_char, out_model: *mut *mut SmModel) -> SmStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = ptr::null_mut();
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (SmStatus::InvalidUtf8, e.to_string()))?;
        let spec = core(ModelSpec::from_json_str(text))?;
        *slot = Box::into_raw(Box::new(SmModel { spec }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`sm_model_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_model_free(model: *mut SmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// `m(s) = E[sum A_i^s]` from the closed form.
///
/// # Safety
/// `model` must be a live handle; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_mellin(model: *const SmModel, s: f64, out_value: *mut f64) -> SmStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let o = out(out_value, "out_value")?;
        *o = core(evaluate(&m.spec, s, &McConfig::default()))?.value;
        Ok(())
    })
}

/// Root analysis of `m(s) = 1` as a JSON document; free with
/// [`sm_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_analyze(model: *const SmModel, seed: u64, out_json: *mut *mut c_char) -> SmStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let o = out(out_json, "out_json")?;
        *o = ptr::null_mut();
        let opts = RootOptions {
            mc: McConfig {
                seed,
                ..McConfig::default()
            },
            ..RootOptions::default()
        };
        let report = core(analyze(&m.spec, &opts, MomentMethod::ClosedFormPreferred))?;
        let text = serde_json::to_string(&report).map_err(|e| (SmStatus::Numerical, e.to_string()))?;
        *o = CString::new(text).expect("JSON has no nul bytes").into_raw();
        Ok(())
    })
}

/// Tail exponent `alpha` of the model, when the regime defines one.
///
/// # Safety
/// `model` must be a live handle; `out_alpha` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_alpha(model: *const SmModel, out_alpha: *mut f64) -> SmStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let o = out(out_alpha, "out_alpha")?;
        let report = core(smoothing_core::mellin::find_roots(&m.spec, 1e-12))?;
        match report.regime {
            Regime::TwoRoot { alpha, .. } | Regime::CriticalTangent { alpha } => {
                *o = alpha;
                Ok(())
            }
            r => Err((
                SmStatus::RegimeMismatch,
                format!("regime {} has no tail exponent", r.name()),
            )),
        }
    })
}

/// Draws sample `index` of the minimal solution `R` from stream `seed`.
///
/// # Safety
/// `model` and `policy` must be valid; `out_sample` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_sample_r(
    model: *const SmModel,
    policy: *const SmPrunePolicy,
    seed: u64,
    index: u64,
    out_sample: *mut SmTreeSample,
) -> SmStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let p = deref(policy, "policy")?;
        let o = out(out_sample, "out_sample")?;
        let mut policy = core(PrunePolicy::new(p.weight_floor, p.depth_cap, p.node_cap))?;
        policy.censor_pruned_weight = p.censor_pruned_weight;
        core(policy.validate())?;
        let t = core(sample_r(&m.spec, &policy, seed, index))?;
        *o = SmTreeSample {
            r_value: t.r_value,
            pruned_weight: t.pruned_weight,
            max_weight: t.max_weight,
            nodes_expanded: t.nodes_expanded,
            capped: t.capped,
            censored: t.censored(&policy),
        };
        Ok(())
    })
}

/// Average of `t^alpha P[X > t]` over a log grid on `[lo, hi]`.
///
/// # Safety
/// `samples` must point to `n` readable doubles; `out_estimate` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sm_estimate_c_plus(
    samples: *const f64,
    n: usize,
    alpha: f64,
    lo: f64,
    hi: f64,
    out_estimate: *mut SmEstimate,
) -> SmStatus {
    guard(|| {
        let o = out(out_estimate, "out_estimate")?;
        if samples.is_null() {
            return Err(null("samples"));
        }
        let xs = std::slice::from_raw_parts(samples, n);
        let w = core(Window::new(lo, hi))?;
        let e = core(estimate_c_plus(xs, alpha, &w))?;
        *o = SmEstimate {
            value: e.value,
            std_error: e.stderr,
        };
        Ok(())
    })
}

/// Default fixed-point settings.
#[no_mangle]
pub extern "C" fn sm_fixpoint_options_default() -> SmFixpointOptions {
    let g = GridSpec::default();
    let f = FixpointOptions::default();
    SmFixpointOptions {
        alpha: f64::NAN,
        pool_size: 100_000,
        seed: 0,
        t_min: g.t_min,
        t_max: g.t_max,
        points_per_decade: g.ppd as u32,
        tol: f.tol,
        max_iter: f.max_iter as u32,
        workers: 0,
    }
}

/// Solves the Laplace-transform fixed point on a grid. For critical models
/// the pool is calibrated and the tail constant is computed; otherwise it
/// is NaN.
///
/// # Safety
/// `model` and `options` must be valid; `out_grid` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_laplace_fixpoint(
    model: *const SmModel,
    options: *const SmFixpointOptions,
    out_grid: *mut *mut SmGrid,
) -> SmStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let o = deref(options, "options")?;
        let slot = out(out_grid, "out_grid")?;
        *slot = ptr::null_mut();
        let exec = exec(o.workers);
        let report = core(smoothing_core::mellin::find_roots(&m.spec, 1e-12))?;
        let critical = matches!(report.regime, Regime::CriticalTangent { .. });
        let alpha = if o.alpha.is_nan() {
            report.regime.alpha()
        } else {
            Some(o.alpha)
        };
        let mut pool = LaplacePool::draw(&m.spec, o.pool_size, o.seed, &exec);
        if critical {
            if let Some(a) = alpha {
                core(pool.calibrate(a, Calibration::Critical))?;
            }
        }
        let opts = FixpointOptions {
            grid: GridSpec {
                t_min: o.t_min,
                t_max: o.t_max,
                ppd: o.points_per_decade as usize,
            },
            tol: o.tol,
            max_iter: o.max_iter as usize,
            lower_tail: LowerTail::Alpha,
            exec,
        };
        let grid = core(iterate_phi(&pool, alpha, &opts))?;
        let c_tail = if critical {
            let pd = core(derive_poisson(&grid, &pool, &exec))?;
            core(tail_constant_from_laplace(&pd))?.0
        } else {
            f64::NAN
        };
        *slot = Box::into_raw(Box::new(SmGrid { grid, c_tail }));
        Ok(())
    })
}

/// Number of grid points; 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_grid_len(grid: *const SmGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.grid.t.len())
}

/// Grid abscissae, `sm_grid_len` values owned by the handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_grid_t(grid: *const SmGrid) -> *const f64 {
    grid.as_ref().map_or(ptr::null(), |g| g.grid.t.as_ptr())
}

/// `phi(t)` on the grid, owned by the handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_grid_phi(grid: *const SmGrid) -> *const f64 {
    grid.as_ref().map_or(ptr::null(), |g| g.grid.phi.as_ptr())
}

/// `1 - phi(t)` on the grid, owned by the handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_grid_one_minus_phi(grid: *const SmGrid) -> *const f64 {
    grid.as_ref().map_or(ptr::null(), |g| g.grid.one_minus_phi.as_ptr())
}

/// Tail constant from the fixed point; NaN when the model is not critical.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_grid_c_tail(grid: *const SmGrid) -> f64 {
    grid.as_ref().map_or(f64::NAN, |g| g.c_tail)
}

/// Iterations used; 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_grid_iterations(grid: *const SmGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.grid.iterations)
}

/// # Safety
/// `grid` must be null or a handle from [`sm_laplace_fixpoint`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_grid_free(grid: *mut SmGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}
