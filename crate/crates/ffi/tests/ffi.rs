use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use crawlrate_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cr_last_error_message()).to_string_lossy().into_owned() }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(cr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn estimator_lifecycle() {
    let spec = CString::new(r#"{"kind": "lln"}"#).unwrap();
    let mut est = ptr::null_mut();
    unsafe {
        assert_eq!(cr_estimator_new(spec.as_ptr(), 3.0, &mut est), CrStatus::Ok);
        let mut x = 0.0;
        assert_eq!(cr_estimator_estimate(est, &mut x), CrStatus::InsufficientData);
        for changed in [true, false, true, true] {
            assert_eq!(cr_estimator_observe(est, 0.3, changed), CrStatus::Ok);
        }
        assert_eq!(cr_estimator_steps(est), 4);
        assert_eq!(cr_estimator_estimate(est, &mut x), CrStatus::Ok);
        // 3 detections in 4 steps with alpha = 1: 3 * 3 / (4 + 1 - 3).
        assert!((x - 4.5).abs() < 1e-12);
        assert_eq!(cr_estimator_observe(est, f64::NAN, true), CrStatus::InvalidArgument);
        assert_eq!(cr_estimator_set_rate(est, -1.0), CrStatus::InvalidArgument);
        cr_estimator_free(est);
        cr_estimator_free(ptr::null_mut());
    }
}

#[test]
fn bad_specs_are_rejected() {
    let mut est = ptr::null_mut();
    for text in [r#"{"kind": "bogus"}"#, "not json", r#"{"kind": "oracle"}"#] {
        let spec = CString::new(text).unwrap();
        let status = unsafe { cr_estimator_new(spec.as_ptr(), 3.0, &mut est) };
        assert_ne!(status, CrStatus::Ok, "{text}");
        assert!(!last_error().is_empty());
        assert!(est.is_null());
    }
    let status = unsafe { cr_estimator_new(ptr::null(), 3.0, &mut est) };
    assert_eq!(status, CrStatus::NullPointer);
}

#[test]
fn solvers_hit_closed_form() {
    let taus = [1.0, 1.0];
    let ind = [1u8, 0];
    let mut r = CrSolveReport { estimate: 0.0, status: CrSolveStatus::Converged, iterations: 0, residual: 0.0 };
    for solver in [cr_mle_solve, cr_mm_solve] {
        let status = unsafe { solver(taus.as_ptr(), ind.as_ptr(), 2, 1e-6, 1e6, 1e-12, &mut r) };
        assert_eq!(status, CrStatus::Ok);
        assert_eq!(r.status, CrSolveStatus::Converged);
        assert!((r.estimate - 2f64.ln()).abs() < 1e-8);
    }
    let ones = [1u8, 1];
    unsafe { cr_mle_solve(taus.as_ptr(), ones.as_ptr(), 2, 1e-6, 1e6, 1e-12, &mut r) };
    assert_eq!((r.status, r.estimate), (CrSolveStatus::ClampedHigh, 1e6));
    let status = unsafe { cr_mle_solve(ptr::null(), ptr::null(), 0, 1e-6, 1e6, 1e-12, &mut r) };
    assert_eq!(status, CrStatus::InsufficientData);
    let status = unsafe { cr_mm_solve(taus.as_ptr(), ind.as_ptr(), 2, 2.0, 1.0, 1e-12, &mut r) };
    assert_eq!(status, CrStatus::InvalidArgument);
}

#[test]
fn allocation_and_objective() {
    let deltas = [1.0, 2.0, 0.5];
    let weights = [1.0, 2.0, 1.0];
    let mut rates = [0.0; 3];
    let mut f = 0.0;
    let status = unsafe { cr_optimize_rates(deltas.as_ptr(), weights.as_ptr(), 3, 2.0, 1e-12, rates.as_mut_ptr(), &mut f) };
    assert_eq!(status, CrStatus::Ok);
    assert!((rates.iter().sum::<f64>() - 2.0).abs() < 1e-9);
    let mut g = 0.0;
    let status =
        unsafe { cr_freshness_objective(rates.as_ptr(), deltas.as_ptr(), weights.as_ptr(), 3, &mut g) };
    assert_eq!(status, CrStatus::Ok);
    assert_eq!(f, g);
    let status = unsafe { cr_optimize_rates(deltas.as_ptr(), weights.as_ptr(), 3, -1.0, 1e-12, rates.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(status, CrStatus::InvalidArgument);
}

#[test]
fn sam_regimes() {
    let mut r = CrSamRegime::Unknown;
    let cases = [
        (0.6, 1.2, CrSamRegime::OneTimescale),
        (0.75, 1.3, CrSamRegime::TwoTimescale),
        (0.5, 0.8, CrSamRegime::Conjecture),
        (0.75, 1.0, CrSamRegime::Invalid),
    ];
    for (b, e, want) in cases {
        assert_eq!(unsafe { cr_classify_sam(b, e, 1.0, &mut r) }, CrStatus::Ok);
        assert_eq!(r, want, "beta {b} eta {e}");
    }
}

#[test]
fn simulation_is_seeded() {
    let mut i1 = [0u8; 100];
    let mut t1 = [0.0; 100];
    let mut i2 = [0u8; 100];
    let mut t2 = [0.0; 100];
    unsafe {
        assert_eq!(cr_simulate_indicators(5.0, 3.0, 100, 9, i1.as_mut_ptr(), t1.as_mut_ptr()), CrStatus::Ok);
        assert_eq!(cr_simulate_indicators(5.0, 3.0, 100, 9, i2.as_mut_ptr(), t2.as_mut_ptr()), CrStatus::Ok);
    }
    assert_eq!((i1, t1), (i2, t2));
    assert!(i1.iter().all(|&i| i <= 1) && t1.iter().all(|&t| t > 0.0));
}

#[test]
fn trace_handle() {
    let text = CString::new("# comment\n0\n2\n1\n4\n").unwrap();
    let mut trace = ptr::null_mut();
    unsafe {
        assert_eq!(cr_trace_parse(text.as_ptr(), &mut trace), CrStatus::Ok);
        assert_eq!(cr_trace_len(trace), 4);
        let mut buf = [0.0; 3];
        let mut written = 0;
        assert_eq!(cr_trace_events(trace, buf.as_mut_ptr(), 3, &mut written), CrStatus::Ok);
        assert_eq!((written, buf), (3, [0.0, 1.0, 2.0]));
        let mut rate = 0.0;
        assert_eq!(cr_trace_change_rate(trace, &mut rate), CrStatus::Ok);
        assert!((rate - 0.75).abs() < 1e-12);
        cr_trace_free(trace);
    }
    let bad = CString::new("1\nabc\n").unwrap();
    assert_eq!(unsafe { cr_trace_parse(bad.as_ptr(), &mut trace) }, CrStatus::Parse);
    assert!(last_error().contains("line 2"), "{}", last_error());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/crawlrate.h")).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exported: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 15);
    for name in exported {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("CR_STATUS_OK = 0"));
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("cc not found; skipping");
        return;
    };
    assert!(cc.status.success());
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(
        &src,
        "#include \"crawlrate.h\"\nint main(void) { CrEstimator *e = 0; double x; return cr_estimator_estimate(e, &x) == CR_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
