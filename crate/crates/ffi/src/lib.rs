//! C ABI over the tutoring engine.
//!
//! Sessions are opaque heap handles. Every call returns a [`TutorStatus`]; on
//! failure [`tutor_last_error`] describes the error for the calling thread.
//! Strings handed out by the library must be released with [`tutor_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::mem::ManuallyDrop;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use tutor_core::app::{write_csv, AppConfig, Runtime, SessionRunner};
use tutor_core::embodiment::{encode_osc, OscArg, OscMessage};
use tutor_core::session::parse_cefr_label;
use tutor_core::workflow::TurnOutput;
use tutor_core::{CefrLevel, Error, TaskPhase};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TutorStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    /// The requested phase change is not an edge of the workflow.
    Protocol = 4,
    SessionEnded = 5,
    /// The model backend failed; the learner input was kept and may be retried.
    Backend = 6,
    Io = 7,
    InvalidInput = 8,
    NotFound = 9,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TutorPhase {
    Introduction = 0,
    Assessment = 1,
    ScenarioSelection = 2,
    RolePlay = 3,
    Feedback = 4,
    Ended = 5,
}

impl From<TaskPhase> for TutorPhase {
    fn from(p: TaskPhase) -> Self {
        match p {
            TaskPhase::Introduction => TutorPhase::Introduction,
            TaskPhase::Assessment => TutorPhase::Assessment,
            TaskPhase::ScenarioSelection => TutorPhase::ScenarioSelection,
            TaskPhase::RolePlay => TutorPhase::RolePlay,
            TaskPhase::Feedback => TutorPhase::Feedback,
            TaskPhase::Ended => TutorPhase::Ended,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TutorCefrLevel {
    A1 = 0,
    A2 = 1,
    B1 = 2,
    B2 = 3,
    C1 = 4,
    C2 = 5,
}

impl From<CefrLevel> for TutorCefrLevel {
    fn from(l: CefrLevel) -> Self {
        match l {
            CefrLevel::A1 => TutorCefrLevel::A1,
            CefrLevel::A2 => TutorCefrLevel::A2,
            CefrLevel::B1 => TutorCefrLevel::B1,
            CefrLevel::B2 => TutorCefrLevel::B2,
            CefrLevel::C1 => TutorCefrLevel::C1,
            CefrLevel::C2 => TutorCefrLevel::C2,
        }
    }
}

/// Opaque session handle.
pub struct TutorSession {
    // Borrows from `runtime`; dropped by hand before the runtime is freed.
    runner: ManuallyDrop<SessionRunner<'static>>,
    runtime: *mut Runtime,
    config: AppConfig,
}

impl Drop for TutorSession {
    fn drop(&mut self) {
        // SAFETY: `runtime` came from Box::into_raw in `tutor_session_new` and
        // is freed only here, after the runner that borrows it.
        unsafe {
            ManuallyDrop::drop(&mut self.runner);
            drop(Box::from_raw(self.runtime));
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> TutorStatus {
    match e {
        Error::Config(_) | Error::Data { .. } => TutorStatus::Config,
        Error::Protocol { .. } => TutorStatus::Protocol,
        Error::SessionEnded => TutorStatus::SessionEnded,
        e if e.is_backend() => TutorStatus::Backend,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => TutorStatus::Io,
        _ => TutorStatus::InvalidInput,
    }
}

fn fail(e: Error) -> TutorStatus {
    let status = status_of(&e);
    set_error(e.to_string());
    status
}

fn guard(f: impl FnOnce() -> TutorStatus) -> TutorStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            TutorStatus::Panic
        }
    }
}

/// `Ok(None)` for a null pointer.
unsafe fn opt_str<'a>(p: *const c_char) -> Result<Option<&'a str>, TutorStatus> {
    if p.is_null() {
        return Ok(None);
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(Some(s)),
        Err(_) => {
            set_error("argument is not valid UTF-8");
            Err(TutorStatus::InvalidUtf8)
        }
    }
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, TutorStatus> {
    match opt_str(p)? {
        Some(s) => Ok(s),
        None => {
            set_error(format!("{what} is null"));
            Err(TutorStatus::NullPointer)
        }
    }
}

unsafe fn session<'a>(s: *mut TutorSession) -> Result<&'a mut TutorSession, TutorStatus> {
    s.as_mut().ok_or_else(|| {
        set_error("session handle is null");
        TutorStatus::NullPointer
    })
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

unsafe fn write_reply(out: *mut *mut c_char, o: &TurnOutput) {
    if !out.is_null() {
        *out = o.reply_text().map_or(ptr::null_mut(), into_c_string);
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

/// Create a session.
///
/// `config_path` may be null to use `$ELLMA_CONFIG` or the defaults. With a
/// non-null `script_path` replies come from that script instead of the model
/// endpoint. A non-null `log_dir` overrides where the CSV transcript goes.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tutor_session_new(
    config_path: *const c_char,
    script_path: *const c_char,
    log_dir: *const c_char,
    out: *mut *mut TutorSession,
) -> TutorStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is null");
            return TutorStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let config_path = tri!(opt_str(config_path)).map(PathBuf::from);
        let script = tri!(opt_str(script_path)).map(PathBuf::from);
        let log_dir = tri!(opt_str(log_dir));
        let mut config = match AppConfig::load(config_path.as_deref()) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        if let Some(d) = log_dir {
            config.session.log_dir = PathBuf::from(d);
        }
        if let Err(e) = config.validate() {
            return fail(e);
        }
        let runtime = match Runtime::from_config(&config, script.as_deref()) {
            Ok(r) => Box::into_raw(Box::new(r)),
            Err(e) => return fail(e),
        };
        // SAFETY: the box lives until TutorSession::drop, after the runner.
        let runner = match (*runtime).session(&config) {
            Ok(r) => r,
            Err(e) => {
                drop(Box::from_raw(runtime));
                return fail(e);
            }
        };
        *out = Box::into_raw(Box::new(TutorSession {
            runner: ManuallyDrop::new(runner),
            runtime,
            config,
        }));
        TutorStatus::Ok
    })
}

/// Produce the opening tutor turn. `out_reply` (nullable) receives the text.
///
/// # Safety
/// `s` must come from [`tutor_session_new`]; `out_reply` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn tutor_session_start(s: *mut TutorSession, out_reply: *mut *mut c_char) -> TutorStatus {
    guard(|| {
        let s = tri!(session(s));
        match s.runner.start() {
            Ok(o) => {
                write_reply(out_reply, &o);
                TutorStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Send one learner line, which may be a slash command such as `/end`.
///
/// `out_reply` receives the tutor's reply, or null when the step added none.
///
/// # Safety
/// `s` must come from [`tutor_session_new`]; `line` must be NUL-terminated;
/// `out_reply` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn tutor_session_input(
    s: *mut TutorSession,
    line: *const c_char,
    out_reply: *mut *mut c_char,
) -> TutorStatus {
    guard(|| {
        if !out_reply.is_null() {
            *out_reply = ptr::null_mut();
        }
        let s = tri!(session(s));
        let line = tri!(req_str(line, "line"));
        match s.runner.input(line) {
            Ok(o) => {
                write_reply(out_reply, &o);
                TutorStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// End the session if needed and store its summary in long-term memory.
///
/// # Safety
/// `s` must come from [`tutor_session_new`].
#[no_mangle]
pub unsafe extern "C" fn tutor_session_finish(s: *mut TutorSession) -> TutorStatus {
    guard(|| {
        let s = tri!(session(s));
        match s.runner.finish("session closed by the host") {
            Ok(()) => TutorStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `s` must come from [`tutor_session_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tutor_session_phase(s: *mut TutorSession, out: *mut TutorPhase) -> TutorStatus {
    guard(|| {
        let s = tri!(session(s));
        if out.is_null() {
            set_error("out is null");
            return TutorStatus::NullPointer;
        }
        *out = s.runner.state().phase.into();
        TutorStatus::Ok
    })
}

/// Number of turns in the transcript so far, all roles.
///
/// # Safety
/// `s` must come from [`tutor_session_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tutor_session_turn_count(s: *mut TutorSession, out: *mut usize) -> TutorStatus {
    guard(|| {
        let s = tri!(session(s));
        if out.is_null() {
            set_error("out is null");
            return TutorStatus::NullPointer;
        }
        *out = s.runner.state().short_term.len();
        TutorStatus::Ok
    })
}

/// Session id as a new string; free it with [`tutor_string_free`].
///
/// # Safety
/// `s` must come from [`tutor_session_new`].
#[no_mangle]
pub unsafe extern "C" fn tutor_session_id(s: *mut TutorSession) -> *mut c_char {
    match catch_unwind(AssertUnwindSafe(|| {
        session(s).map_or(ptr::null_mut(), |s| into_c_string(s.runner.session_id().to_string()))
    })) {
        Ok(p) => p,
        Err(_) => ptr::null_mut(),
    }
}

/// Write the transcript as CSV to `path`, or to the session log file when null.
///
/// # Safety
/// `s` must come from [`tutor_session_new`]; `path` must be null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tutor_session_write_csv(s: *mut TutorSession, path: *const c_char) -> TutorStatus {
    guard(|| {
        let s = tri!(session(s));
        let target = match tri!(opt_str(path)) {
            Some(p) => PathBuf::from(p),
            None => s.config.session.log_dir.join(format!("{}.csv", s.runner.session_id())),
        };
        let state = s.runner.state();
        match write_csv(&state.session_id, &state.short_term, Path::new(&target)) {
            Ok(()) => TutorStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `s` must be null or come from [`tutor_session_new`], and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tutor_session_free(s: *mut TutorSession) {
    if !s.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(s))));
    }
}

/// # Safety
/// `p` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn tutor_string_free(p: *mut c_char) {
    if !p.is_null() {
        drop(CString::from_raw(p));
    }
}

/// Message for the last failed call on this thread, or null. Borrowed: valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tutor_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Find a CEFR label such as "B1" in free text. `NotFound` when there is none.
///
/// # Safety
/// `text` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tutor_parse_cefr(text: *const c_char, out: *mut TutorCefrLevel) -> TutorStatus {
    guard(|| {
        let text = tri!(req_str(text, "text"));
        if out.is_null() {
            set_error("out is null");
            return TutorStatus::NullPointer;
        }
        match parse_cefr_label(text) {
            Some(l) => {
                *out = l.into();
                TutorStatus::Ok
            }
            None => {
                set_error("no CEFR level in text");
                TutorStatus::NotFound
            }
        }
    })
}

unsafe fn encode_into(msg: &OscMessage, buf: *mut u8, cap: usize, out_len: *mut usize) -> TutorStatus {
    if out_len.is_null() {
        set_error("out_len is null");
        return TutorStatus::NullPointer;
    }
    let bytes = match encode_osc(msg) {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    *out_len = bytes.len();
    if bytes.len() > cap || buf.is_null() {
        set_error(format!("need {} bytes", bytes.len()));
        return TutorStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
    TutorStatus::Ok
}

/// Encode an OSC message with one float argument into `buf`.
///
/// `out_len` always receives the encoded length, also on `BufferTooSmall`.
///
/// # Safety
/// `address` must be NUL-terminated; `buf` must hold `cap` bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn tutor_osc_encode_float(
    address: *const c_char,
    value: f32,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> TutorStatus {
    guard(|| {
        let address = tri!(req_str(address, "address"));
        encode_into(&OscMessage::new(address, vec![OscArg::Float(value)]), buf, cap, out_len)
    })
}

/// Encode an OSC message with one string argument into `buf`.
///
/// # Safety
/// As for [`tutor_osc_encode_float`]; `text` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tutor_osc_encode_text(
    address: *const c_char,
    text: *const c_char,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> TutorStatus {
    guard(|| {
        let address = tri!(req_str(address, "address"));
        let text = tri!(req_str(text, "text"));
        encode_into(
            &OscMessage::new(address, vec![OscArg::Str(text.to_string())]),
            buf,
            cap,
            out_len,
        )
    })
}
