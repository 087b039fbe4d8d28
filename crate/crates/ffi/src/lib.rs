//! C ABI over the equilibrium solver.
//!
//! Networks, demand matrices and solutions are opaque heap handles released
//! with their `*_free` function. Every fallible call returns a [`TeStatus`];
//! the message of the most recent failure on the calling thread is available
//! from [`te_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use traffic_equilibrium::equilibrium::{solve, EquilibriumSolution, GammaMode, ModelSpec};
use traffic_equilibrium::link_cost::CostModel;
use traffic_equilibrium::network::{parse_tntp_net, parse_tntp_trips, DemandMatrix, Network};
use traffic_equilibrium::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    Unreachable = 5,
    /// The dual objective is unbounded below: demand does not fit the capacities.
    Diverged = 6,
    /// Any other numerical failure inside the solver.
    Solver = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Link cost model.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeModel {
    Beckmann = 0,
    StableDynamics = 1,
}

/// Parsed TNTP network.
pub struct TeNetwork(Network);

/// Parsed TNTP demand matrix.
pub struct TeDemand(DemandMatrix);

/// Result of [`te_solve`].
pub struct TeSolution(EquilibriumSolution);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: TeStatus, message: impl Into<String>) -> TeStatus {
    set_error(message);
    status
}

fn status_of(err: &Error) -> TeStatus {
    match err {
        Error::Parse(_) => TeStatus::Parse,
        Error::InvalidArgument(_) => TeStatus::InvalidArgument,
        Error::Unreachable { .. } | Error::UnreachableWithinCap { .. } => TeStatus::Unreachable,
        Error::Diverged { .. } => TeStatus::Diverged,
        _ => TeStatus::Solver,
    }
}

/// Runs `body`, turning a panic into [`TeStatus::Panic`].
fn guarded(body: impl FnOnce() -> TeStatus) -> TeStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(TeStatus::Panic, msg)
        }
    }
}

unsafe fn read_str<'a>(text: *const c_char) -> Result<&'a str, TeStatus> {
    if text.is_null() {
        return Err(fail(TeStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(text)
        .to_str()
        .map_err(|e| fail(TeStatus::InvalidUtf8, e.to_string()))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn te_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn te_status_name(status: TeStatus) -> *const c_char {
    let s: &'static CStr = match status {
        TeStatus::Ok => c"ok",
        TeStatus::NullPointer => c"null pointer",
        TeStatus::InvalidUtf8 => c"invalid utf-8",
        TeStatus::Parse => c"parse error",
        TeStatus::InvalidArgument => c"invalid argument",
        TeStatus::Unreachable => c"unreachable od pair",
        TeStatus::Diverged => c"diverged",
        TeStatus::Solver => c"solver error",
        TeStatus::BufferTooSmall => c"buffer too small",
        TeStatus::Panic => c"panic",
    };
    s.as_ptr()
}

/// Parses a TNTP network file's contents into `*out`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn te_network_parse(
    text: *const c_char,
    out: *mut *mut TeNetwork,
) -> TeStatus {
    guarded(|| {
        if out.is_null() {
            return fail(TeStatus::NullPointer, "null output pointer");
        }
        *out = ptr::null_mut();
        let text = match read_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_tntp_net(text) {
            Ok(net) => {
                store(out, TeNetwork(net));
                TeStatus::Ok
            }
            Err(e) => fail(TeStatus::Parse, e.to_string()),
        }
    })
}

/// # Safety
/// `net` must be null or a handle from [`te_network_parse`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn te_network_free(net: *mut TeNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn te_network_node_count(net: *const TeNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.node_count())
}

/// # Safety
/// `net` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn te_network_edge_count(net: *const TeNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.edge_count())
}

/// Parses a TNTP trips file's contents into `*out`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn te_demand_parse(text: *const c_char, out: *mut *mut TeDemand) -> TeStatus {
    guarded(|| {
        if out.is_null() {
            return fail(TeStatus::NullPointer, "null output pointer");
        }
        *out = ptr::null_mut();
        let text = match read_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_tntp_trips(text) {
            Ok(dm) => {
                store(out, TeDemand(dm));
                TeStatus::Ok
            }
            Err(e) => fail(TeStatus::Parse, e.to_string()),
        }
    })
}

/// # Safety
/// `demand` must be null or a handle from [`te_demand_parse`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn te_demand_free(demand: *mut TeDemand) {
    if !demand.is_null() {
        drop(Box::from_raw(demand));
    }
}

/// # Safety
/// `demand` must be null or a live demand handle.
#[no_mangle]
pub unsafe extern "C" fn te_demand_pair_count(demand: *const TeDemand) -> usize {
    demand.as_ref().map_or(0, |d| d.0.len())
}

/// Solves for the equilibrium and stores the result in `*out`.
///
/// A negative `gamma` selects the automatic choice from `eps_rel`; zero is
/// the deterministic model. `max_iters == 0` keeps the default cap. Running
/// out of iterations is not an error: check [`te_solution_converged`].
///
/// # Safety
/// `net` and `demand` must be live handles and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn te_solve(
    net: *const TeNetwork,
    demand: *const TeDemand,
    model: TeModel,
    gamma: f64,
    eps_rel: f64,
    max_iters: usize,
    out: *mut *mut TeSolution,
) -> TeStatus {
    guarded(|| {
        if out.is_null() {
            return fail(TeStatus::NullPointer, "null output pointer");
        }
        *out = ptr::null_mut();
        let (Some(net), Some(demand)) = (net.as_ref(), demand.as_ref()) else {
            return fail(TeStatus::NullPointer, "null network or demand");
        };
        if gamma.is_nan() {
            return fail(TeStatus::InvalidArgument, "gamma is NaN");
        }
        let model = match model {
            TeModel::Beckmann => CostModel::Beckmann,
            TeModel::StableDynamics => CostModel::StableDynamics,
        };
        let gamma = if gamma < 0.0 {
            GammaMode::Auto
        } else {
            GammaMode::Fixed(gamma)
        };
        let mut spec = ModelSpec::new(model, gamma, eps_rel);
        if max_iters > 0 {
            spec.max_iters = max_iters;
        }
        match solve(&net.0, &demand.0, &spec) {
            Ok(sol) => {
                store(out, TeSolution(sol));
                TeStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `sol` must be null or a handle from [`te_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn te_solution_free(sol: *mut TeSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> TeStatus {
    if buf.is_null() {
        return fail(TeStatus::NullPointer, "null buffer");
    }
    if len < src.len() {
        return fail(
            TeStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    TeStatus::Ok
}

/// Copies the averaged edge flows into `buf`, which must hold at least
/// [`te_solution_edge_count`] values.
///
/// # Safety
/// `sol` must be a live solution handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn te_solution_flows(
    sol: *const TeSolution,
    buf: *mut f64,
    len: usize,
) -> TeStatus {
    guarded(|| match sol.as_ref() {
        Some(s) => copy_out(&s.0.flows, buf, len),
        None => fail(TeStatus::NullPointer, "null solution"),
    })
}

/// Copies the final edge times into `buf`.
///
/// # Safety
/// `sol` must be a live solution handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn te_solution_times(
    sol: *const TeSolution,
    buf: *mut f64,
    len: usize,
) -> TeStatus {
    guarded(|| match sol.as_ref() {
        Some(s) => copy_out(&s.0.times, buf, len),
        None => fail(TeStatus::NullPointer, "null solution"),
    })
}

/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn te_solution_edge_count(sol: *const TeSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.0.flows.len())
}

/// Final duality gap; NaN for a null handle.
///
/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn te_solution_gap(sol: *const TeSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.0.gap)
}

/// Final gap divided by the initial gap; NaN for a null handle.
///
/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn te_solution_rel_gap(sol: *const TeSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.0.rel_gap)
}

/// Entropy scale actually used; NaN for a null handle.
///
/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn te_solution_gamma(sol: *const TeSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.0.gamma)
}

/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn te_solution_iterations(sol: *const TeSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.0.iterations)
}

/// `true` when the relative gap target was met.
///
/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn te_solution_converged(sol: *const TeSolution) -> bool {
    sol.as_ref().is_some_and(|s| s.0.converged)
}
