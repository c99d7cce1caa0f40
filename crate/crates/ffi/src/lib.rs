//! C interface to the skillforge engine.
//!
//! Every call returns an [`SfStatus`]. On failure a message is available
//! from [`sf_last_error`] on the same thread until the next call. Strings
//! handed out through `out` parameters are owned by the caller and must be
//! released with [`sf_string_free`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use skillforge::compiler::ElementLocator;
use skillforge::harness::{Controller, Plan};
use skillforge::matcher::MatchCandidate;
use skillforge::replayer::{find_element, score_parts, Threshold};
use skillforge::ui::UITree;
use skillforge::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    NoSuchSkill = 5,
    NoSuchApp = 6,
    StoreCorrupt = 7,
    InvalidInput = 8,
    Engine = 9,
    Panic = 10,
}

impl From<&Error> for SfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io(_) => SfStatus::Io,
            Error::Json(_) | Error::ParseFailure(_) => SfStatus::Parse,
            Error::NoSuchSkill(_) => SfStatus::NoSuchSkill,
            Error::NoSuchApp(_) => SfStatus::NoSuchApp,
            Error::StoreCorrupt { .. } => SfStatus::StoreCorrupt,
            Error::InvalidPlan(_) | Error::InvalidScenario(_) | Error::InvalidAction(_) | Error::Precondition(_) => {
                SfStatus::InvalidInput
            }
            _ => SfStatus::Engine,
        }
    }
}

/// Opaque engine handle: a simulated device, a scripted policy and a skill
/// library.
pub struct SfEngine {
    controller: Controller,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(SfStatus::from(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(SfStatus::Parse, format!("json: {e}"))
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SfStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SfStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(SfStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn optional_text<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, name).map(Some)
    }
}

unsafe fn give_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure(SfStatus::Engine, "output contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn check_out<T>(out: *mut T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure(SfStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn engine<'a>(p: *mut SfEngine) -> Result<&'a mut SfEngine, Failure> {
    // SAFETY: the caller passes a handle from sf_engine_new that has not been freed.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(SfStatus::NullArgument, "engine is null".into()))
}

/// Creates an engine. `store` may be null for an in-memory library.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_engine_new(
    scenarios: *const c_char,
    policy: *const c_char,
    keywords: *const c_char,
    store: *const c_char,
    seed: u64,
    out: *mut *mut SfEngine,
) -> SfStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = ptr::null_mut();
        let controller = Controller::from_files(
            Path::new(text(scenarios, "scenarios")?),
            Path::new(text(policy, "policy")?),
            Path::new(text(keywords, "keywords")?),
            optional_text(store, "store")?.map(Path::new),
            seed,
        )?;
        *out = Box::into_raw(Box::new(SfEngine { controller }));
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from [`sf_engine_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sf_engine_free(engine: *mut SfEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Runs a plan given as JSON text. Writes the report JSON to `report_out`
/// and, when `rounds_out` is not null, the per-round JSONL log.
///
/// # Safety
/// `engine` must be live; `plan_json` NUL-terminated; outputs writable or null
/// where allowed.
#[no_mangle]
pub unsafe extern "C" fn sf_engine_run_plan(
    engine_ptr: *mut SfEngine,
    plan_json: *const c_char,
    report_out: *mut *mut c_char,
    rounds_out: *mut *mut c_char,
) -> SfStatus {
    guard(|| {
        check_out(report_out, "report_out")?;
        let e = engine(engine_ptr)?;
        let plan = Plan::from_json(text(plan_json, "plan_json")?)?;
        let run = e.controller.run_phases(&plan);
        give_string(report_out, run.report_json())?;
        if !rounds_out.is_null() {
            give_string(rounds_out, run.round_log())?;
        }
        Ok(())
    })
}

/// Matches one instruction against the engine's library and writes the
/// match result as JSON.
///
/// # Safety
/// `engine` must be live; `instruction` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_engine_match(
    engine_ptr: *mut SfEngine,
    instruction: *const c_char,
    out: *mut *mut c_char,
) -> SfStatus {
    guard(|| {
        check_out(out, "out")?;
        let e = engine(engine_ptr)?;
        let instruction = text(instruction, "instruction")?;
        let c = &mut e.controller;
        let skills = c.store.list_skills(None)?;
        let emb = c.embedding.as_ref();
        let cands: Vec<MatchCandidate<'_>> = skills
            .iter()
            .map(|s| {
                let last = c.store.stats(&s.skill_id, s.version).ok().and_then(|st| st.last_success);
                MatchCandidate::new(s, last, emb)
            })
            .collect();
        let tree = c.device.render();
        let m = c.matcher.match_instruction(instruction, &cands, emb, &mut c.policy, Some(&tree))?;
        give_string(out, serde_json::to_string(&m)?)
    })
}

/// Number of skills in the library, counting each id once.
///
/// # Safety
/// `engine` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_engine_skill_count(engine_ptr: *mut SfEngine, out: *mut u64) -> SfStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = engine(engine_ptr)?.controller.store.list_skills(None)?.len() as u64;
        Ok(())
    })
}

/// Exports the engine's library as one JSON document.
///
/// # Safety
/// `engine` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_engine_export(engine_ptr: *mut SfEngine, out: *mut *mut c_char) -> SfStatus {
    guard(|| {
        check_out(out, "out")?;
        let doc = engine(engine_ptr)?.controller.store.export_string();
        give_string(out, doc)
    })
}

/// Scores a locator against every node of a tree. `bindings_json` may be
/// null. The output holds the best strict and relaxed matches and the
/// per-node scores.
///
/// # Safety
/// String arguments must be null (where allowed) or NUL-terminated; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_score(
    locator_json: *const c_char,
    tree_json: *const c_char,
    bindings_json: *const c_char,
    out: *mut *mut c_char,
) -> SfStatus {
    guard(|| {
        check_out(out, "out")?;
        let loc: ElementLocator = serde_json::from_str(text(locator_json, "locator_json")?)?;
        let tree = UITree::from_json(text(tree_json, "tree_json")?)?;
        let bindings: BTreeMap<String, String> = match optional_text(bindings_json, "bindings_json")? {
            Some(b) => serde_json::from_str(b)?,
            None => BTreeMap::new(),
        };
        let substituted = loc.substituted(&bindings);
        let nodes: Vec<_> = tree
            .flatten()
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let s = score_parts(n, &substituted);
                serde_json::json!({"index": i, "matched": s.matched, "active": s.active, "score": s.value()})
            })
            .collect();
        let best =
            |tau| find_element(&tree, &loc, tau, &bindings).map(|(i, s)| serde_json::json!({"index": i, "score": s}));
        let doc =
            serde_json::json!({"strict": best(Threshold::Strict), "relaxed": best(Threshold::Relaxed), "nodes": nodes});
        give_string(out, doc.to_string())
    })
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on the same thread. Do not free.
#[no_mangle]
pub extern "C" fn sf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string. Do not free.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
