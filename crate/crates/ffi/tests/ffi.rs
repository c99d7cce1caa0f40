use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use skillforge_ffi::*;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn path(name: &str) -> CString {
    c(fixtures().join(name).to_str().unwrap())
}

unsafe fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let owned = CStr::from_ptr(s).to_str().unwrap().to_string();
    sf_string_free(s);
    owned
}

fn last_error() -> String {
    let p = sf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn engine(store: Option<&CString>) -> *mut SfEngine {
    let mut e = ptr::null_mut();
    let status = unsafe {
        sf_engine_new(
            path("scenarios").as_ptr(),
            path("policy.json").as_ptr(),
            path("keywords.json").as_ptr(),
            store.map_or(ptr::null(), |s| s.as_ptr()),
            7,
            &mut e,
        )
    };
    assert_eq!(status, SfStatus::Ok, "{}", last_error());
    e
}

#[test]
fn run_plan_then_match_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let store = c(dir.path().join("skills.json").to_str().unwrap());
    let e = engine(Some(&store));
    let plan = c(&std::fs::read_to_string(fixtures().join("plan.json")).unwrap());
    unsafe {
        let (mut report, mut rounds) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(sf_engine_run_plan(e, plan.as_ptr(), &mut report, &mut rounds), SfStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take(report)).unwrap();
        assert_eq!(report["overall"]["rounds"], 25);
        assert_eq!(take(rounds).lines().count(), 25);

        let mut n = 0;
        assert_eq!(sf_engine_skill_count(e, &mut n), SfStatus::Ok);
        assert_eq!(n, 5);

        let mut out = ptr::null_mut();
        assert_eq!(sf_engine_match(e, c("Set an alarm for 10:00 AM").as_ptr(), &mut out), SfStatus::Ok);
        let m: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(m["kind"], "FULL");
        assert_eq!(m["bindings"]["time"], "10:00 AM");

        let mut doc = ptr::null_mut();
        assert_eq!(sf_engine_export(e, &mut doc), SfStatus::Ok);
        let doc: serde_json::Value = serde_json::from_str(&take(doc)).unwrap();
        assert_eq!(doc["skills"].as_object().unwrap().len(), 5);
        sf_engine_free(e);
    }
    // The library outlives the handle.
    let e = engine(Some(&store));
    let mut n = 0;
    unsafe {
        assert_eq!(sf_engine_skill_count(e, &mut n), SfStatus::Ok);
        sf_engine_free(e);
    }
    assert_eq!(n, 5);
}

#[test]
fn score_reports_fractions_and_thresholds() {
    let tree = c(
        r#"{"root": {"class_name": "FrameLayout", "bounds": {"left": 0, "top": 0, "right": 100, "bottom": 100},
        "children": [{"class_name": "Button", "bounds": {"left": 0, "top": 0, "right": 50, "bottom": 50}, "resource_id": "fab"}]},
        "activity": "main", "foreground_app": "clock"}"#,
    );
    let loc =
        c(r#"{"resource_id": "fab", "text": "Add", "class_name": "View", "parent_class": "List", "sibling_index": 3}"#);
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(sf_score(loc.as_ptr(), tree.as_ptr(), ptr::null(), &mut out), SfStatus::Ok);
    }
    let v: serde_json::Value = serde_json::from_str(&unsafe { take(out) }).unwrap();
    assert_eq!((v["nodes"][1]["matched"].as_u64(), v["nodes"][1]["active"].as_u64()), (Some(40), Some(85)));
    assert!(v["strict"].is_null());
    assert_eq!(v["relaxed"]["index"], 1);
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(sf_score(ptr::null(), ptr::null(), ptr::null(), &mut out), SfStatus::NullArgument);
        assert!(last_error().contains("locator_json"));
        assert!(out.is_null());

        assert_eq!(sf_score(c("{").as_ptr(), c("{}").as_ptr(), ptr::null(), &mut out), SfStatus::Parse);
        assert!(last_error().starts_with("json"));

        let mut e = ptr::null_mut();
        let status =
            sf_engine_new(c("/nonexistent").as_ptr(), c("/x").as_ptr(), c("/y").as_ptr(), ptr::null(), 0, &mut e);
        assert_ne!(status, SfStatus::Ok);
        assert!(e.is_null());

        let e = engine(None);
        let mut report = ptr::null_mut();
        assert_eq!(
            sf_engine_run_plan(
                e,
                c(r#"{"phases": [{"phase": "P9", "rounds": []}]}"#).as_ptr(),
                &mut report,
                ptr::null_mut()
            ),
            SfStatus::InvalidInput
        );
        assert!(last_error().starts_with("invalid-plan"));
        assert_eq!(sf_engine_match(ptr::null_mut(), c("x").as_ptr(), &mut report), SfStatus::NullArgument);
        sf_engine_free(e);

        // A successful call clears the previous message.
        let mut n = 0;
        let e = engine(None);
        assert_eq!(sf_engine_skill_count(e, &mut n), SfStatus::Ok);
        assert!(sf_last_error().is_null());
        sf_engine_free(e);
        sf_engine_free(ptr::null_mut());
        sf_string_free(ptr::null_mut());
    }
    assert_eq!(unsafe { CStr::from_ptr(sf_version()) }.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/skillforge.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "sf_engine_new",
        "sf_engine_free",
        "sf_engine_run_plan",
        "sf_engine_match",
        "sf_score",
        "sf_last_error",
        "sf_string_free",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"skillforge.h\"\nint main(void) { SfEngine *e = 0; return sf_engine_new(0, 0, 0, 0, 0, &e) == SF_STATUS_OK; }\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .expect("a C compiler on PATH");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
