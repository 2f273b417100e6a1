//! C ABI over the floorsight streaming pipeline and simulator.
//!
//! Every call returns an [`FsStatus`]. On failure the message is kept per
//! thread and can be fetched with [`fs_last_error`]. Strings handed out by
//! this library are freed with [`fs_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use floorsight::engine::pipeline::{Pipeline, PipelineParams};
use floorsight::io::{self, SessionBundle};
use floorsight::sim::{preset, simulate_session};
use floorsight::{Error, ParticipantId, VadSegment};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Input rejected by a validator.
    Invalid = 3,
    Io = 4,
    /// The engine was already finished.
    Finished = 5,
    Panic = 6,
}

/// Opaque streaming engine.
pub struct FsEngine {
    pipeline: Option<Pipeline>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: FsStatus, msg: impl Into<String>) -> FsStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> FsStatus {
    let status = if e.is_validation() { FsStatus::Invalid } else { FsStatus::Io };
    fail(status, format!("{}: {e}", e.code()))
}

fn guard(f: impl FnOnce() -> FsStatus) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(FsStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, FsStatus> {
    if p.is_null() {
        return Err(fail(FsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn pid_arg(p: *const c_char) -> Result<ParticipantId, FsStatus> {
    ParticipantId::new(str_arg(p, "participant")?).map_err(from_error)
}

unsafe fn engine_mut<'a>(e: *mut FsEngine) -> Result<&'a mut Pipeline, FsStatus> {
    let e = e.as_mut().ok_or_else(|| fail(FsStatus::NullPointer, "engine is null"))?;
    e.pipeline
        .as_mut()
        .ok_or_else(|| fail(FsStatus::Finished, "engine already finished"))
}

fn out_string(s: String, out: *mut *mut c_char) -> FsStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            FsStatus::Ok
        }
        Err(_) => fail(FsStatus::Io, "output contains a NUL byte"),
    }
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Last error message on this thread, or null. Free with [`fs_string_free`].
#[no_mangle]
pub extern "C" fn fs_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates an engine with default parameters for `n` participants.
///
/// # Safety
/// `ids` points to `n` NUL-terminated strings; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn fs_engine_new(
    ids: *const *const c_char,
    n: usize,
    no_cues: bool,
    out: *mut *mut FsEngine,
) -> FsStatus {
    guard(|| {
        if out.is_null() || (ids.is_null() && n > 0) {
            return fail(FsStatus::NullPointer, "null argument");
        }
        let mut participants = Vec::with_capacity(n);
        for i in 0..n {
            participants.push(tri!(pid_arg(*ids.add(i))));
        }
        let params = PipelineParams {
            no_cues,
            ..PipelineParams::default()
        };
        let pipeline = tri!(Pipeline::new(&participants, params).map_err(from_error));
        *out = Box::into_raw(Box::new(FsEngine {
            pipeline: Some(pipeline),
        }));
        FsStatus::Ok
    })
}

/// # Safety
/// `e` must come from [`fs_engine_new`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fs_engine_free(e: *mut FsEngine) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Notice that `participant` started speaking at `t`.
///
/// # Safety
/// `e` is a live engine; `participant` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fs_engine_speech_start(e: *mut FsEngine, participant: *const c_char, t: f64) -> FsStatus {
    guard(|| {
        let p = tri!(engine_mut(e));
        let who = tri!(pid_arg(participant));
        p.speech_start(who, t).map_or_else(from_error, |_| FsStatus::Ok)
    })
}

/// A completed voiced segment.
///
/// # Safety
/// `e` is a live engine; `participant` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fs_engine_segment(
    e: *mut FsEngine,
    participant: *const c_char,
    t0: f64,
    t1: f64,
    e_mean: f64,
    e_peak: f64,
) -> FsStatus {
    guard(|| {
        let p = tri!(engine_mut(e));
        let seg = VadSegment {
            participant: tri!(pid_arg(participant)),
            t0,
            t1,
            e_mean,
            e_peak,
        };
        if let Err(err) = floorsight::model::check_stream(std::slice::from_ref(&seg)) {
            return from_error(err);
        }
        p.segment(seg).map_or_else(from_error, |_| FsStatus::Ok)
    })
}

/// Moves the clock forward without new speech.
///
/// # Safety
/// `e` is a live engine.
#[no_mangle]
pub unsafe extern "C" fn fs_engine_advance(e: *mut FsEngine, now: f64) -> FsStatus {
    guard(|| {
        let p = tri!(engine_mut(e));
        p.advance(now).map_or_else(from_error, |_| FsStatus::Ok)
    })
}

/// Current floor of `participant`; 0 when unaffiliated.
///
/// # Safety
/// `e` is a live engine; `floor` is writable.
#[no_mangle]
pub unsafe extern "C" fn fs_engine_floor_of(e: *mut FsEngine, participant: *const c_char, floor: *mut u32) -> FsStatus {
    guard(|| {
        let p = tri!(engine_mut(e));
        let who = tri!(pid_arg(participant));
        if floor.is_null() {
            return fail(FsStatus::NullPointer, "floor is null");
        }
        *floor = p.engine().floor_of(&who).map_or(0, |f| f.0);
        FsStatus::Ok
    })
}

/// Closes the session and returns every label as CSV. The engine accepts
/// no further input afterwards.
///
/// # Safety
/// `e` is a live engine; `out_csv` is writable. Free the result with [`fs_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fs_engine_finish(e: *mut FsEngine, out_csv: *mut *mut c_char) -> FsStatus {
    guard(|| {
        if out_csv.is_null() {
            return fail(FsStatus::NullPointer, "out_csv is null");
        }
        tri!(engine_mut(e));
        let pipeline = (*e).pipeline.take().expect("checked above");
        let out = tri!(pipeline.finish().map_err(from_error));
        let csv = tri!(io::format_labels(&out.labels).map_err(from_error));
        out_string(csv, out_csv)
    })
}

/// Simulates a session into `out_dir` as a session bundle.
///
/// # Safety
/// `preset_name` and `out_dir` are NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fs_simulate(
    preset_name: *const c_char,
    duration: f64,
    seed: u64,
    out_dir: *const c_char,
) -> FsStatus {
    guard(|| {
        let name = tri!(str_arg(preset_name, "preset"));
        let dir = tri!(str_arg(out_dir, "out_dir"));
        let p = tri!(preset(name).map_err(from_error));
        let s = tri!(simulate_session(&p, duration, seed).map_err(from_error));
        SessionBundle::from_sim(&s)
            .write_dir(Path::new(dir))
            .map_or_else(from_error, |_| FsStatus::Ok)
    })
}
