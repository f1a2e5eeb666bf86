//! C ABI over `optseq`.
//!
//! Objects are opaque heap handles created by `os_*` constructors and
//! released with the matching `os_*_free`. Every function returns an
//! [`OsStatus`]; on failure [`os_last_error`] describes the cause. No panic
//! crosses the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use optseq::design::{design_test, extract_thresholds, DesignError, DesignOptions, DesignProblem, DesignSolution, TestPolicy};
use optseq::grid::GridSpec;
use optseq::models::{Hypothesis, ModelSpec, Statistic};
use optseq::simulate::{monte_carlo, wald_thresholds, WaldForm, DEFAULT_MAX_SAMPLES};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SolverFailure = 3,
    TrivialTest = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Kind of the sufficient statistic passed to threshold lookups.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OsStatisticKind {
    /// i.i.d. model; `value` is ignored.
    Unit = 0,
    /// Two-state chain; `value` is 1 or 2.
    State = 1,
    /// AR(1); `value` is the previous observation.
    Real = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OsStatistic {
    pub kind: OsStatisticKind,
    pub value: f64,
}

/// Summary of a Monte Carlo run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OsSimulation {
    pub runs: u64,
    pub decided: u64,
    pub errors: u64,
    pub censored: u64,
    pub empirical_error: f64,
    pub error_std_err: f64,
    pub mean_run_length: f64,
    pub run_length_std_err: f64,
}

/// Observation model handle.
pub struct OsModel(ModelSpec);

/// Designed test handle.
pub struct OsDesign(DesignSolution);

/// Executable test policy handle.
pub struct OsPolicy(TestPolicy);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

struct Failure(OsStatus, String);

impl From<DesignError> for Failure {
    fn from(e: DesignError) -> Self {
        let status = match e {
            DesignError::TrivialTest { .. } => OsStatus::TrivialTest,
            DesignError::Lp { .. } | DesignError::Repair(_) | DesignError::Linsolve(_) => OsStatus::SolverFailure,
            _ => OsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(e: impl ToString) -> Failure {
    Failure(OsStatus::InvalidArgument, e.to_string())
}

/// Runs `f`, converting errors and panics into a status and last-error text.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            OsStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {message}"));
            OsStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes null or a live handle from this library.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(OsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(OsStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: non-null and, per the contract, valid for writes.
    unsafe { out.write(value) };
    Ok(())
}

fn new_model(spec: ModelSpec, out: *mut *mut OsModel) -> OsStatus {
    guard(|| {
        spec.validate().map_err(invalid)?;
        if out.is_null() {
            return Err(Failure(OsStatus::NullPointer, "out is null".into()));
        }
        // SAFETY: checked non-null above.
        unsafe { out.write(Box::into_raw(Box::new(OsModel(spec)))) };
        Ok(())
    })
}

/// Message describing the last failure on this thread (empty after a
/// success). Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn os_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// i.i.d. Gaussian observations, mean 0 under H0 and `mu` under H1.
#[no_mangle]
pub extern "C" fn os_model_iid(mu: f64, sigma: f64, out: *mut *mut OsModel) -> OsStatus {
    new_model(ModelSpec::IidGaussian { mu, sigma }, out)
}

/// Observable two-state chain; `p0` is the H0 state law (2 values), `p1` the
/// H1 transition matrix in row-major order (4 values).
///
/// # Safety
/// `p0` and `p1` must point to 2 and 4 readable doubles.
#[no_mangle]
pub unsafe extern "C" fn os_model_chain(sigma: f64, p0: *const f64, p1: *const f64, out: *mut *mut OsModel) -> OsStatus {
    if p0.is_null() || p1.is_null() {
        set_error("p0 or p1 is null");
        return OsStatus::NullPointer;
    }
    // SAFETY: the caller guarantees the lengths.
    let (p0, p1) = unsafe { (std::slice::from_raw_parts(p0, 2), std::slice::from_raw_parts(p1, 4)) };
    new_model(
        ModelSpec::TwoStateChain {
            sigma,
            p0: [p0[0], p0[1]],
            p1: [[p1[0], p1[1]], [p1[2], p1[3]]],
        },
        out,
    )
}

/// AR(1) observations `x' = a·θ + σε` with `a = a0` under H0, `a1` under H1.
#[no_mangle]
pub extern "C" fn os_model_ar1(a0: f64, a1: f64, sigma: f64, theta0: f64, out: *mut *mut OsModel) -> OsStatus {
    new_model(ModelSpec::Ar1 { a0, a1, sigma, theta0 }, out)
}

/// # Safety
/// `model` must be null or a handle from `os_model_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn os_model_free(model: *mut OsModel) {
    if !model.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Designs the optimal test for targets `(gamma0, gamma1)` on an
/// `m_z × m_theta` grid (`m_theta` is ignored except for AR(1)); both counts
/// must be odd.
///
/// # Safety
/// `model` must be a live model handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_design(
    model: *const OsModel,
    gamma0: f64,
    gamma1: f64,
    m_z: usize,
    m_theta: usize,
    out: *mut *mut OsDesign,
) -> OsStatus {
    guard(|| {
        // SAFETY: per the function contract.
        let model = unsafe { get(model, "model")? };
        if out.is_null() {
            return Err(Failure(OsStatus::NullPointer, "out is null".into()));
        }
        let spec = GridSpec {
            m_z,
            m_theta,
            ..GridSpec::default()
        };
        let problem = DesignProblem::new(&model.0, &spec, (gamma0, gamma1))?;
        let solution = design_test(&problem, &DesignOptions::default())?;
        // SAFETY: checked non-null above.
        unsafe { out.write(Box::into_raw(Box::new(OsDesign(solution)))) };
        Ok(())
    })
}

/// # Safety
/// `design` must be a live design handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_design_lambda(design: *const OsDesign, lambda0: *mut f64, lambda1: *mut f64) -> OsStatus {
    guard(|| {
        // SAFETY: per the function contract.
        let d = unsafe { get(design, "design")? };
        unsafe {
            put(lambda0, d.0.lambda.0, "lambda0")?;
            put(lambda1, d.0.lambda.1, "lambda1")
        }
    })
}

/// Expected run-length under H0 of the designed test.
///
/// # Safety
/// `design` must be a live design handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_design_expected_run_length(design: *const OsDesign, out: *mut f64) -> OsStatus {
    guard(|| {
        // SAFETY: per the function contract.
        let d = unsafe { get(design, "design")? };
        unsafe { put(out, d.0.expected_run_length, "out") }
    })
}

/// Number of grid cells, i.e. the length of the cost-to-go vector.
///
/// # Safety
/// `design` must be a live design handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_design_num_cells(design: *const OsDesign, out: *mut usize) -> OsStatus {
    guard(|| {
        // SAFETY: per the function contract.
        let d = unsafe { get(design, "design")? };
        unsafe { put(out, d.0.rho.len(), "out") }
    })
}

/// Copies the cost-to-go vector into `buf` (length `len`); fails with
/// `BufferTooSmall` if `len` is below the number of cells.
///
/// # Safety
/// `design` must be a live design handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn os_design_rho(design: *const OsDesign, buf: *mut f64, len: usize) -> OsStatus {
    guard(|| {
        // SAFETY: per the function contract.
        let d = unsafe { get(design, "design")? };
        if buf.is_null() {
            return Err(Failure(OsStatus::NullPointer, "buf is null".into()));
        }
        let rho = &d.0.rho;
        if len < rho.len() {
            return Err(Failure(
                OsStatus::BufferTooSmall,
                format!("buffer holds {len} values, {} needed", rho.len()),
            ));
        }
        // SAFETY: `buf` holds at least `rho.len()` doubles.
        unsafe { ptr::copy_nonoverlapping(rho.as_ptr(), buf, rho.len()) };
        Ok(())
    })
}

/// # Safety
/// `design` must be null or a handle from `os_design` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn os_design_free(design: *mut OsDesign) {
    if !design.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(design) });
    }
}

/// Threshold policy of a designed test.
///
/// # Safety
/// `design` must be a live design handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_design_policy(design: *const OsDesign, out: *mut *mut OsPolicy) -> OsStatus {
    guard(|| {
        // SAFETY: per the function contract.
        let d = unsafe { get(design, "design")? };
        let policy = Box::into_raw(Box::new(OsPolicy(extract_thresholds(&d.0))));
        // SAFETY: `out` validity per contract; the box is reclaimed on failure.
        unsafe { put(out, policy, "out") }.inspect_err(|_| drop(unsafe { Box::from_raw(policy) }))
    })
}

/// Wald's classical thresholds for targets `(gamma0, gamma1)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_policy_wald(gamma0: f64, gamma1: f64, out: *mut *mut OsPolicy) -> OsStatus {
    guard(|| {
        let policy = wald_thresholds((gamma0, gamma1), WaldForm::Classical).map_err(invalid)?;
        let policy = Box::into_raw(Box::new(OsPolicy(policy)));
        // SAFETY: `out` validity per contract; the box is reclaimed on failure.
        unsafe { put(out, policy, "out") }.inspect_err(|_| drop(unsafe { Box::from_raw(policy) }))
    })
}

fn statistic(theta: OsStatistic) -> Result<Statistic, Failure> {
    Ok(match theta.kind {
        OsStatisticKind::Unit => Statistic::Unit,
        OsStatisticKind::State if theta.value == 1.0 || theta.value == 2.0 => Statistic::State(theta.value as u8),
        OsStatisticKind::State => return Err(invalid(format!("state must be 1 or 2, got {}", theta.value))),
        OsStatisticKind::Real => Statistic::Real(theta.value),
    })
}

/// Upper (`A`, decide H1) and lower (`B`, decide H0) thresholds in log-LR at
/// statistic `theta`.
///
/// # Safety
/// `policy` must be a live policy handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_policy_thresholds(
    policy: *const OsPolicy,
    theta: OsStatistic,
    upper: *mut f64,
    lower: *mut f64,
) -> OsStatus {
    guard(|| {
        // SAFETY: per the function contract.
        let p = unsafe { get(policy, "policy")? };
        let (a, b) = p.0.thresholds(statistic(theta)?).map_err(invalid)?;
        unsafe {
            put(upper, a, "upper")?;
            put(lower, b, "lower")
        }
    })
}

/// Decision at log-LR `s` and statistic `theta`: writes -1 to continue,
/// 0 for H0, 1 for H1.
///
/// # Safety
/// `policy` must be a live policy handle; `decision` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_policy_decide(
    policy: *const OsPolicy,
    s: f64,
    theta: OsStatistic,
    decision: *mut i32,
) -> OsStatus {
    guard(|| {
        // SAFETY: per the function contract.
        let p = unsafe { get(policy, "policy")? };
        let d = match p.0.decide(s, statistic(theta)?).map_err(invalid)? {
            None => -1,
            Some(Hypothesis::H0) => 0,
            Some(Hypothesis::H1) => 1,
        };
        unsafe { put(decision, d, "decision") }
    })
}

/// Runs `runs` Monte Carlo trials of `policy` with data drawn under H0
/// (`truth` = 0) or H1 (`truth` = 1).
///
/// # Safety
/// `policy` and `model` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_simulate(
    policy: *const OsPolicy,
    model: *const OsModel,
    truth: i32,
    runs: u64,
    seed: u64,
    out: *mut OsSimulation,
) -> OsStatus {
    guard(|| {
        // SAFETY: per the function contract.
        let (p, m) = unsafe { (get(policy, "policy")?, get(model, "model")?) };
        let truth = match truth {
            0 => Hypothesis::H0,
            1 => Hypothesis::H1,
            t => return Err(invalid(format!("truth must be 0 or 1, got {t}"))),
        };
        let r = monte_carlo(&p.0, &m.0, truth, runs, seed, DEFAULT_MAX_SAMPLES).map_err(invalid)?;
        let summary = OsSimulation {
            runs: r.runs,
            decided: r.decided,
            errors: r.errors,
            censored: r.censored_count,
            empirical_error: r.empirical_error,
            error_std_err: r.error_std_err,
            mean_run_length: r.mean_run_length,
            run_length_std_err: r.run_length_std_err,
        };
        unsafe { put(out, summary, "out") }
    })
}

/// # Safety
/// `policy` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn os_policy_free(policy: *mut OsPolicy) {
    if !policy.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(policy) });
    }
}
