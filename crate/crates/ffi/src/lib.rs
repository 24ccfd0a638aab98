//! C ABI over [`pvta::service::Engine`].
//!
//! Every function returns a [`PvtaStatus`]. Results that carry data are
//! written as NUL-terminated UTF-8 JSON into an out-pointer and must be
//! released with [`pvta_string_free`]. On failure, [`pvta_last_error`]
//! returns a message for the calling thread.
//!
//! An engine handle may be shared between threads; it must be released
//! exactly once with [`pvta_engine_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pvta::escalation::{EscalationError, EscalationStatus};
use pvta::kb::CourseKB;
use pvta::nlu::{NluError, Workspace};
use pvta::pipeline::PipelineError;
use pvta::service::{Engine, EngineError, MessageReply, ServiceConfig};
use serde::Serialize;

/// Opaque engine handle.
pub struct PvtaEngine {
    inner: Engine,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvtaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidWorkspace = 4,
    MalformedKb = 5,
    UnknownSession = 6,
    InvalidArgument = 7,
    EscalationNotFound = 8,
    AlreadyResolved = 9,
    UnknownIntent = 10,
    Internal = 11,
    Panic = 12,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(message).ok());
}

struct Fail(PvtaStatus);

impl From<EngineError> for Fail {
    fn from(err: EngineError) -> Self {
        let status = match &err {
            EngineError::Config(_) => PvtaStatus::Config,
            EngineError::InvalidWorkspace(_) | EngineError::Nlu(NluError::Json(_)) => {
                PvtaStatus::InvalidWorkspace
            }
            EngineError::Nlu(NluError::EmptyWorkspace) => PvtaStatus::InvalidWorkspace,
            EngineError::Nlu(NluError::Io { .. }) => PvtaStatus::Config,
            EngineError::Kb(_) => PvtaStatus::MalformedKb,
            EngineError::Pipeline(PipelineError::UnknownSession(_)) => PvtaStatus::UnknownSession,
            EngineError::Pipeline(PipelineError::EmptyStudentId) => PvtaStatus::InvalidArgument,
            EngineError::Escalation(EscalationError::NotFound(_)) => PvtaStatus::EscalationNotFound,
            EngineError::Escalation(EscalationError::AlreadyResolved(_)) => {
                PvtaStatus::AlreadyResolved
            }
            EngineError::Escalation(EscalationError::UnknownIntent(_)) => PvtaStatus::UnknownIntent,
            EngineError::Escalation(EscalationError::EmptyAnswer) => PvtaStatus::InvalidArgument,
            EngineError::Cluster(_) => PvtaStatus::InvalidArgument,
            _ => PvtaStatus::Internal,
        };
        let message = match &err {
            EngineError::InvalidWorkspace(violations) => {
                let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
                format!("{err}: {}", list.join("; "))
            }
            _ => err.to_string(),
        };
        set_error(message);
        Fail(status)
    }
}

fn fail(status: PvtaStatus, message: impl Into<String>) -> Fail {
    set_error(message);
    Fail(status)
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PvtaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PvtaStatus::Ok
        }
        Ok(Err(Fail(status))) => status,
        Err(_) => {
            set_error("panic inside pvta");
            PvtaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(PvtaStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        fail(
            PvtaStatus::InvalidUtf8,
            format!("`{name}` is not valid UTF-8"),
        )
    })
}

unsafe fn engine_arg<'a>(p: *const PvtaEngine) -> Result<&'a Engine, Fail> {
    p.as_ref()
        .map(|e| &e.inner)
        .ok_or_else(|| fail(PvtaStatus::NullArgument, "`engine` is null"))
}

unsafe fn write_string(out: *mut *mut c_char, value: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(PvtaStatus::NullArgument, "output pointer is null"));
    }
    let c = CString::new(value)
        .map_err(|_| fail(PvtaStatus::Internal, "result contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn write_json<T: Serialize>(out: *mut *mut c_char, value: &T) -> Result<(), Fail> {
    let text =
        serde_json::to_string(value).map_err(|e| fail(PvtaStatus::Internal, e.to_string()))?;
    write_string(out, text)
}

unsafe fn check_out<T>(out: *mut *mut T) -> Result<(), Fail> {
    if out.is_null() {
        Err(fail(PvtaStatus::NullArgument, "output pointer is null"))
    } else {
        *out = ptr::null_mut();
        Ok(())
    }
}

/// Opens an engine from a TOML config file, replaying its event logs.
///
/// # Safety
/// `config_path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pvta_engine_open(
    config_path: *const c_char,
    out: *mut *mut PvtaEngine,
) -> PvtaStatus {
    guard(|| {
        check_out(out)?;
        let path = str_arg(config_path, "config_path")?;
        let mut config = ServiceConfig::load(path).map_err(|e| Fail::from(EngineError::from(e)))?;
        config.apply_env();
        let engine = Engine::open(config)?;
        *out = Box::into_raw(Box::new(PvtaEngine { inner: engine }));
        Ok(())
    })
}

/// Opens an in-memory engine from workspace and KB JSON documents. Nothing
/// is persisted.
///
/// # Safety
/// String arguments must be valid C strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pvta_engine_open_json(
    workspace_json: *const c_char,
    kb_json: *const c_char,
    threshold: f64,
    smoothing: f64,
    out: *mut *mut PvtaEngine,
) -> PvtaStatus {
    guard(|| {
        check_out(out)?;
        let workspace = Workspace::from_json_str(str_arg(workspace_json, "workspace_json")?)
            .map_err(|e| Fail::from(EngineError::from(e)))?;
        let kb = CourseKB::from_json_str(str_arg(kb_json, "kb_json")?)
            .map_err(|e| Fail::from(EngineError::from(e)))?;
        let config = ServiceConfig {
            threshold,
            smoothing,
            ..ServiceConfig::default()
        };
        let engine = Engine::ephemeral(config, workspace, kb)?;
        *out = Box::into_raw(Box::new(PvtaEngine { inner: engine }));
        Ok(())
    })
}

/// # Safety
/// `engine` must come from an open function and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pvta_engine_free(engine: *mut PvtaEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Writes the new session id (a plain string, not JSON) to `out_session_id`.
///
/// # Safety
/// Pointers must be valid; the result must be freed with `pvta_string_free`.
#[no_mangle]
pub unsafe extern "C" fn pvta_session_create(
    engine: *const PvtaEngine,
    student_id: *const c_char,
    out_session_id: *mut *mut c_char,
) -> PvtaStatus {
    guard(|| {
        check_out(out_session_id)?;
        let engine = engine_arg(engine)?;
        let id = engine.create_session(str_arg(student_id, "student_id")?)?;
        write_string(out_session_id, id)
    })
}

/// Posts a student message. The reply JSON has the same shape as the HTTP
/// message endpoint: `{answer?, pending, intent, confidence, escalated, escalation_id?}`.
///
/// # Safety
/// Pointers must be valid; the result must be freed with `pvta_string_free`.
#[no_mangle]
pub unsafe extern "C" fn pvta_post_message(
    engine: *const PvtaEngine,
    session_id: *const c_char,
    text: *const c_char,
    out_json: *mut *mut c_char,
) -> PvtaStatus {
    guard(|| {
        check_out(out_json)?;
        let engine = engine_arg(engine)?;
        let turn =
            engine.post_message(str_arg(session_id, "session_id")?, str_arg(text, "text")?)?;
        write_json(out_json, &MessageReply::from(&turn))
    })
}

/// Full turn history of a session as a JSON array.
///
/// # Safety
/// Pointers must be valid; the result must be freed with `pvta_string_free`.
#[no_mangle]
pub unsafe extern "C" fn pvta_session_turns(
    engine: *const PvtaEngine,
    session_id: *const c_char,
    out_json: *mut *mut c_char,
) -> PvtaStatus {
    guard(|| {
        check_out(out_json)?;
        let engine = engine_arg(engine)?;
        write_json(out_json, &engine.turns(str_arg(session_id, "session_id")?)?)
    })
}

/// Ranked intents for `text` as `{"ranked": [{"intent", "confidence"}...]}`.
///
/// # Safety
/// Pointers must be valid; the result must be freed with `pvta_string_free`.
#[no_mangle]
pub unsafe extern "C" fn pvta_classify(
    engine: *const PvtaEngine,
    text: *const c_char,
    out_json: *mut *mut c_char,
) -> PvtaStatus {
    guard(|| {
        check_out(out_json)?;
        let engine = engine_arg(engine)?;
        write_json(out_json, &engine.classify(str_arg(text, "text")?))
    })
}

/// Pending escalations as a JSON array.
///
/// # Safety
/// Pointers must be valid; the result must be freed with `pvta_string_free`.
#[no_mangle]
pub unsafe extern "C" fn pvta_escalations_pending(
    engine: *const PvtaEngine,
    out_json: *mut *mut c_char,
) -> PvtaStatus {
    guard(|| {
        check_out(out_json)?;
        let engine = engine_arg(engine)?;
        write_json(
            out_json,
            &engine.escalations(Some(EscalationStatus::Pending)),
        )
    })
}

/// Resolves an escalation; writes the resolved item as JSON.
///
/// # Safety
/// Pointers must be valid; the result must be freed with `pvta_string_free`.
#[no_mangle]
pub unsafe extern "C" fn pvta_resolve(
    engine: *const PvtaEngine,
    escalation_id: u64,
    final_answer: *const c_char,
    corrected_intent: *const c_char,
    out_json: *mut *mut c_char,
) -> PvtaStatus {
    guard(|| {
        check_out(out_json)?;
        let engine = engine_arg(engine)?;
        let outcome = engine.resolve(
            escalation_id,
            str_arg(final_answer, "final_answer")?,
            str_arg(corrected_intent, "corrected_intent")?,
        )?;
        write_json(out_json, &outcome)
    })
}

/// Retrains and publishes; writes `{revision, intent_count, example_count}`.
///
/// # Safety
/// Pointers must be valid; the result must be freed with `pvta_string_free`.
#[no_mangle]
pub unsafe extern "C" fn pvta_retrain(
    engine: *const PvtaEngine,
    out_json: *mut *mut c_char,
) -> PvtaStatus {
    guard(|| {
        check_out(out_json)?;
        let engine = engine_arg(engine)?;
        write_json(out_json, &engine.retrain()?)
    })
}

/// # Safety
/// Pointers must be valid; the result must be freed with `pvta_string_free`.
#[no_mangle]
pub unsafe extern "C" fn pvta_health(
    engine: *const PvtaEngine,
    out_json: *mut *mut c_char,
) -> PvtaStatus {
    guard(|| {
        check_out(out_json)?;
        let engine = engine_arg(engine)?;
        write_json(out_json, &engine.health())
    })
}

/// # Safety
/// `s` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pvta_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next pvta call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn pvta_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
