use std::ffi::{CStr, CString};
use std::ptr;

use depctl_ffi::*;

fn last_error() -> String {
    let p = depctl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn stream_handles_are_deterministic() {
    let label = CString::new("ffi").unwrap();
    let draw = |seed| unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(depctl_stream_new(seed, label.as_ptr(), &mut s), DepctlStatus::Ok);
        let mut sub = ptr::null_mut();
        assert_eq!(depctl_stream_substream(s, 3, &mut sub), DepctlStatus::Ok);
        let mut u = 0.0;
        assert_eq!(depctl_stream_uniform(sub, &mut u), DepctlStatus::Ok);
        depctl_stream_free(sub);
        depctl_stream_free(s);
        u
    };
    let a = draw(42);
    assert!(a > 0.0 && a < 1.0);
    assert_eq!(a.to_bits(), draw(42).to_bits());
    assert_ne!(a.to_bits(), draw(43).to_bits());
}

#[test]
fn distribution_round_trip() {
    let json = CString::new(r#"{"family":"pareto1","alpha":2.0,"xm":1.0}"#).unwrap();
    let label = CString::new("d").unwrap();
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(depctl_distribution_from_json(json.as_ptr(), &mut d), DepctlStatus::Ok);
        let (mut q, mut c, mut sf) = (0.0, 0.0, 0.0);
        assert_eq!(depctl_distribution_quantile(d, 0.75, &mut q), DepctlStatus::Ok);
        assert!((q - 2.0).abs() < 1e-12);
        assert_eq!(depctl_distribution_cdf(d, q, &mut c), DepctlStatus::Ok);
        assert_eq!(depctl_distribution_sf(d, q, &mut sf), DepctlStatus::Ok);
        assert!((c - 0.75).abs() < 1e-12 && (sf - 0.25).abs() < 1e-12);

        let mut s = ptr::null_mut();
        depctl_stream_new(1, label.as_ptr(), &mut s);
        let mut buf = [0.0; 64];
        assert_eq!(depctl_distribution_sample(d, s, buf.as_mut_ptr(), buf.len()), DepctlStatus::Ok);
        assert!(buf.iter().all(|&x| x >= 1.0));

        assert_eq!(depctl_distribution_quantile(d, 1.5, &mut q), DepctlStatus::Domain);
        assert!(!last_error().is_empty());
        depctl_stream_free(s);
        depctl_distribution_free(d);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(depctl_distribution_from_json(ptr::null(), &mut d), DepctlStatus::NullPointer);
        assert!(last_error().contains("json"));

        let bad = CString::new(r#"{"family":"pareto1","alpha":-1.0,"xm":1.0}"#).unwrap();
        assert_eq!(depctl_distribution_from_json(bad.as_ptr(), &mut d), DepctlStatus::ParameterDomain);
        assert!(d.is_null());

        let junk = CString::new("{not json").unwrap();
        assert_eq!(depctl_distribution_from_json(junk.as_ptr(), &mut d), DepctlStatus::Config);

        let invalid = [0xffu8, 0xfe, 0];
        assert_eq!(depctl_distribution_from_json(invalid.as_ptr().cast(), &mut d), DepctlStatus::InvalidUtf8);

        let mut e = ptr::null_mut();
        let no_seed = CString::new(r#"{"name":"x","kind":"sample","preset":"constant-1"}"#).unwrap();
        assert_eq!(depctl_experiment_from_json(no_seed.as_ptr(), false, 0, &mut e), DepctlStatus::Config);
        assert!(last_error().contains("seed"));

        let a = [1.0, 1.0];
        let s = [1.0];
        let mut out = [0.0; 2];
        assert_eq!(depctl_lindley(a.as_ptr(), s.as_ptr(), 2, out.as_mut_ptr()), DepctlStatus::Ok);
        assert_eq!(depctl_lindley(ptr::null(), s.as_ptr(), 1, out.as_mut_ptr()), DepctlStatus::NullPointer);

        depctl_distribution_free(ptr::null_mut());
        depctl_stream_free(ptr::null_mut());
        depctl_experiment_free(ptr::null_mut());
        depctl_string_free(ptr::null_mut());
    }
}

#[test]
fn queue_recursions() {
    let a = [2.0, 0.0, 3.0, 0.0, 0.0];
    let s = [1.0, 1.0, 1.0, 1.0, 1.0];
    let mut b = [0.0; 5];
    let mut d = [0u64; 5];
    let mut c = [false; 5];
    unsafe {
        assert_eq!(depctl_lindley(a.as_ptr(), s.as_ptr(), 5, b.as_mut_ptr()), DepctlStatus::Ok);
        assert_eq!(depctl_delay(a.as_ptr(), s.as_ptr(), 5, d.as_mut_ptr(), c.as_mut_ptr()), DepctlStatus::Ok);
    }
    assert_eq!(b, [1.0, 0.0, 2.0, 1.0, 0.0]);
    assert!(c.iter().all(|&x| !x));
}

#[test]
fn capacity_of_identity_channel() {
    // Two parallel unit-gain streams at total SNR 2: 2 log2(2) bits per use.
    let re = [1.0, 0.0, 0.0, 1.0];
    let im = [0.0; 4];
    let mut c = 0.0;
    let st = unsafe { depctl_capacity_flat(re.as_ptr(), im.as_ptr(), 2, 2, 1.0, 2.0, false, &mut c) };
    assert_eq!(st, DepctlStatus::Ok);
    assert!((c - 2.0).abs() < 1e-12, "{c}");
    let st = unsafe { depctl_capacity_flat(re.as_ptr(), im.as_ptr(), 2, 2, 1.0, -1.0, false, &mut c) };
    assert_eq!(st, DepctlStatus::ParameterDomain);
}

#[test]
fn experiment_runs_and_reports_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new(r#"{"name":"ffi-sample","kind":"sample","preset":"constant-1"}"#).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(depctl_experiment_from_json(cfg.as_ptr(), true, 5, &mut e), DepctlStatus::Ok);
        let mut verdict = DepctlVerdict::Fails;
        let mut manifest = ptr::null_mut();
        assert_eq!(depctl_experiment_run(e, out.as_ptr(), &mut verdict, &mut manifest), DepctlStatus::Ok);
        assert_eq!(verdict, DepctlVerdict::Completed);
        let text = CStr::from_ptr(manifest).to_str().unwrap().to_owned();
        depctl_string_free(manifest);
        depctl_experiment_free(e);
        let m: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(m["seed"], 5);
        assert_eq!(m["name"], "ffi-sample");
    }
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn header_declares_the_api() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/include/depctl.h");
    let header = std::fs::read_to_string(path).unwrap();
    for sym in [
        "DEPCTL_STATUS_OK",
        "DEPCTL_STATUS_PANIC",
        "typedef struct DepctlStream DepctlStream",
        "depctl_last_error",
        "depctl_stream_new",
        "depctl_distribution_from_json",
        "depctl_capacity_flat",
        "depctl_lindley",
        "depctl_delay",
        "depctl_experiment_run",
        "depctl_string_free",
    ] {
        assert!(header.contains(sym), "{sym}");
    }
    let cc = std::process::Command::new("cc").args(["-fsyntax-only", "-x", "c", path]).output();
    if let Ok(o) = cc {
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
}
