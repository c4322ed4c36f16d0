//! C ABI for the random greedy sum-free process engine.
//!
//! The process handle is opaque; every fallible call returns an [`SfStatus`]
//! and writes results through out parameters. The generated header lands in
//! `include/sumfree.h`.
//!
//! Ownership: `sf_process_new` transfers ownership of the handle to the
//! caller; `sf_process_free` is the only way to release it. No call keeps
//! pointers into the handle after returning.

use std::ffi::c_char;

use sumfree::engine::{EngineError, Mode, ProcessState, VarId};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    SfOk = 0,
    /// A required pointer argument was null.
    SfErrNullArgument = 1,
    /// The modulus is below 3.
    SfErrInvalidModulus = 2,
    /// The process has terminated; no open element remains.
    SfErrTerminated = 3,
    /// The requested counter needs the full ledger but the handle was
    /// created in lean mode.
    SfErrModeUnsupported = 4,
    /// The caller's buffer cannot hold the result; the required length has
    /// been written to the length out parameter.
    SfErrBufferTooSmall = 5,
}

/// Ledger detail level, mirroring the engine's run modes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfMode {
    /// Exact incremental ledger of all tracked counts.
    SfModeFull = 0,
    /// Statuses only; edge counters are unavailable.
    SfModeLean = 1,
}

/// Tracked counters readable through `sf_process_value`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfVar {
    /// Number of open elements.
    SfVarOpenCount = 0,
    /// Classes with exactly two open vertices and none closed.
    SfVarE2 = 1,
    /// Classes with all three vertices open.
    SfVarE3 = 2,
    /// Right-degree of 0 among classes with one open vertex left.
    SfVarD2R0 = 3,
    /// Right-degree of 0 among fully open classes.
    SfVarD3R0 = 4,
    /// Fully chosen classes through 0: the pair statistic plus a chosen
    /// self-paired element.
    SfVarD1R0 = 5,
    /// Distinct chosen negation pairs.
    SfVarPairsDistinct = 6,
}

impl SfVar {
    fn to_engine(self) -> VarId {
        match self {
            SfVar::SfVarOpenCount => VarId::Q,
            SfVar::SfVarE2 => VarId::E2,
            SfVar::SfVarE3 => VarId::E3,
            SfVar::SfVarD2R0 => VarId::D2R0,
            SfVar::SfVarD3R0 => VarId::D3R0,
            SfVar::SfVarD1R0 => VarId::D1R0,
            SfVar::SfVarPairsDistinct => VarId::PairsDistinct,
        }
    }
}

fn status_of(e: EngineError) -> SfStatus {
    match e {
        EngineError::InvalidModulus(_) => SfStatus::SfErrInvalidModulus,
        EngineError::ProcessTerminated => SfStatus::SfErrTerminated,
        EngineError::NotOpen(_) => SfStatus::SfErrNullArgument,
        EngineError::ModeUnsupported(_) => SfStatus::SfErrModeUnsupported,
    }
}

/// Opaque process handle.
pub struct SfProcess {
    state: ProcessState,
}

/// Create a process on `Z_m` with the given seed and mode, writing the new
/// handle to `out`.
///
/// # Safety
/// `out` must be a valid pointer to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_process_new(
    m: u64,
    seed: u64,
    mode: SfMode,
    out: *mut *mut SfProcess,
) -> SfStatus {
    if out.is_null() {
        return SfStatus::SfErrNullArgument;
    }
    let mode = match mode {
        SfMode::SfModeFull => Mode::Full,
        SfMode::SfModeLean => Mode::Lean,
    };
    match ProcessState::new(m, seed, mode) {
        Ok(state) => {
            *out = Box::into_raw(Box::new(SfProcess { state }));
            SfStatus::SfOk
        }
        Err(e) => {
            *out = std::ptr::null_mut();
            status_of(e)
        }
    }
}

/// Release a handle. Null is accepted and ignored.
///
/// # Safety
/// `p` must be null or a handle obtained from `sf_process_new` that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn sf_process_free(p: *mut SfProcess) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Take one step: choose a uniformly random open element, add it to the set
/// and close what that forces. On success writes the chosen element to
/// `chosen_out` and the number of newly closed elements to
/// `closed_count_out` (either may be null if not wanted).
///
/// # Safety
/// `p` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_process_step(
    p: *mut SfProcess,
    chosen_out: *mut u64,
    closed_count_out: *mut u64,
) -> SfStatus {
    let Some(proc_) = p.as_mut() else {
        return SfStatus::SfErrNullArgument;
    };
    match proc_.state.step() {
        Ok(report) => {
            if !chosen_out.is_null() {
                *chosen_out = report.chosen;
            }
            if !closed_count_out.is_null() {
                *closed_count_out = report.newly_closed.len() as u64;
            }
            SfStatus::SfOk
        }
        Err(e) => status_of(e),
    }
}

/// Run at most `max_steps` further steps, stopping early at termination.
/// Writes the number of steps actually taken to `steps_taken_out` (may be
/// null). Reaching termination is not an error.
///
/// # Safety
/// `p` must be a live handle; a non-null out pointer must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_process_run(
    p: *mut SfProcess,
    max_steps: u64,
    steps_taken_out: *mut u64,
) -> SfStatus {
    let Some(proc_) = p.as_mut() else {
        return SfStatus::SfErrNullArgument;
    };
    let mut taken = 0u64;
    while taken < max_steps && !proc_.state.is_terminated() {
        proc_.state.step().expect("not terminated");
        taken += 1;
    }
    if !steps_taken_out.is_null() {
        *steps_taken_out = taken;
    }
    SfStatus::SfOk
}

/// Number of open elements.
///
/// # Safety
/// `p` must be null (returns 0) or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_process_open_count(p: *const SfProcess) -> u64 {
    p.as_ref().map_or(0, |proc_| proc_.state.open_count())
}

/// Steps taken so far; equals the size of the chosen set.
///
/// # Safety
/// `p` must be null (returns 0) or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_process_step_index(p: *const SfProcess) -> u64 {
    p.as_ref().map_or(0, |proc_| proc_.state.step_index())
}

/// Whether no open element remains.
///
/// # Safety
/// `p` must be null (returns false) or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_process_is_terminated(p: *const SfProcess) -> bool {
    p.as_ref().is_some_and(|proc_| proc_.state.is_terminated())
}

/// Rescaled time `t = i / sqrt(n)` with `n = m/2`.
///
/// # Safety
/// `p` must be null (returns 0) or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_process_time(p: *const SfProcess) -> f64 {
    p.as_ref().map_or(0.0, |proc_| proc_.state.t())
}

/// Read a tracked counter. Edge counters need a full-ledger handle.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_process_value(
    p: *const SfProcess,
    var: SfVar,
    out: *mut i64,
) -> SfStatus {
    let Some(proc_) = p.as_ref() else {
        return SfStatus::SfErrNullArgument;
    };
    if out.is_null() {
        return SfStatus::SfErrNullArgument;
    }
    match proc_.state.value(var.to_engine()) {
        Ok(v) => {
            *out = v;
            SfStatus::SfOk
        }
        Err(e) => status_of(e),
    }
}

/// Copy the chosen set, in the order elements were chosen, into `buf`.
/// Always writes the required length to `len_out`; fills `buf` only when
/// `cap` suffices.
///
/// # Safety
/// `p` must be a live handle, `len_out` writable, and `buf` must point to at
/// least `cap` writable `uint64_t` slots when `cap > 0`.
#[no_mangle]
pub unsafe extern "C" fn sf_process_copy_chosen(
    p: *const SfProcess,
    buf: *mut u64,
    cap: usize,
    len_out: *mut usize,
) -> SfStatus {
    let Some(proc_) = p.as_ref() else {
        return SfStatus::SfErrNullArgument;
    };
    if len_out.is_null() || (cap > 0 && buf.is_null()) {
        return SfStatus::SfErrNullArgument;
    }
    let chosen = proc_.state.chosen();
    *len_out = chosen.len();
    if cap < chosen.len() {
        return SfStatus::SfErrBufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(chosen.as_ptr(), buf, chosen.len());
    SfStatus::SfOk
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    unsafe fn new_ok(m: u64, seed: u64, mode: SfMode) -> *mut SfProcess {
        let mut p = ptr::null_mut();
        assert_eq!(sf_process_new(m, seed, mode, &mut p), SfStatus::SfOk);
        assert!(!p.is_null());
        p
    }

    #[test]
    fn lifecycle_and_stepping() {
        unsafe {
            let p = new_ok(16, 3, SfMode::SfModeFull);
            assert_eq!(sf_process_open_count(p), 15);
            assert_eq!(sf_process_step_index(p), 0);
            assert_eq!(sf_process_time(p), 0.0);

            let (mut chosen, mut closed) = (0u64, 0u64);
            assert_eq!(sf_process_step(p, &mut chosen, &mut closed), SfStatus::SfOk);
            assert!((1..16).contains(&chosen));
            assert_eq!(sf_process_step_index(p), 1);
            assert_eq!(sf_process_open_count(p), 15 - 1 - closed);

            let mut taken = 0u64;
            assert_eq!(sf_process_run(p, u64::MAX, &mut taken), SfStatus::SfOk);
            assert!(sf_process_is_terminated(p));
            assert_eq!(sf_process_step(p, ptr::null_mut(), ptr::null_mut()),
                SfStatus::SfErrTerminated);
            assert_eq!(sf_process_run(p, 5, ptr::null_mut()), SfStatus::SfOk);
            sf_process_free(p);
        }
    }

    #[test]
    fn matches_native_engine_run() {
        unsafe {
            for seed in 0..20u64 {
                let p = new_ok(40, seed, SfMode::SfModeLean);
                assert_eq!(sf_process_run(p, u64::MAX, ptr::null_mut()), SfStatus::SfOk);
                let mut len = 0usize;
                assert_eq!(
                    sf_process_copy_chosen(p, ptr::null_mut(), 0, &mut len),
                    SfStatus::SfErrBufferTooSmall
                );
                let mut buf = vec![0u64; len];
                assert_eq!(
                    sf_process_copy_chosen(p, buf.as_mut_ptr(), buf.len(), &mut len),
                    SfStatus::SfOk
                );

                let mut native = ProcessState::new(40, seed, Mode::Lean).unwrap();
                let run = native.run(sumfree::engine::StopRule::Termination, u64::MAX);
                assert_eq!(buf, run.chosen_sequence);
                sf_process_free(p);
            }
        }
    }

    #[test]
    fn error_codes() {
        unsafe {
            let mut p = ptr::null_mut();
            assert_eq!(
                sf_process_new(2, 0, SfMode::SfModeFull, &mut p),
                SfStatus::SfErrInvalidModulus
            );
            assert!(p.is_null());
            assert_eq!(
                sf_process_new(8, 0, SfMode::SfModeFull, ptr::null_mut()),
                SfStatus::SfErrNullArgument
            );

            assert_eq!(
                sf_process_step(ptr::null_mut(), ptr::null_mut(), ptr::null_mut()),
                SfStatus::SfErrNullArgument
            );
            assert_eq!(sf_process_open_count(ptr::null()), 0);
            assert!(!sf_process_is_terminated(ptr::null()));

            let lean = new_ok(16, 0, SfMode::SfModeLean);
            let mut v = 0i64;
            assert_eq!(
                sf_process_value(lean, SfVar::SfVarE2, &mut v),
                SfStatus::SfErrModeUnsupported
            );
            assert_eq!(
                sf_process_value(lean, SfVar::SfVarOpenCount, &mut v),
                SfStatus::SfOk
            );
            assert_eq!(v, 15);
            assert_eq!(
                sf_process_value(lean, SfVar::SfVarOpenCount, ptr::null_mut()),
                SfStatus::SfErrNullArgument
            );
            sf_process_free(lean);
            sf_process_free(ptr::null_mut());
        }
    }

    #[test]
    fn full_mode_exposes_edge_counters() {
        unsafe {
            let p = new_ok(16, 1, SfMode::SfModeFull);
            let mut e3 = 0i64;
            assert_eq!(sf_process_value(p, SfVar::SfVarE3, &mut e3), SfStatus::SfOk);
            let native = ProcessState::new(16, 1, Mode::Full).unwrap();
            assert_eq!(e3, native.value(VarId::E3).unwrap());
            sf_process_free(p);
        }
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = sf_version();
        let s = unsafe { std::ffi::CStr::from_ptr(v) };
        assert_eq!(s.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
