use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use aslrkit_ffi::*;

fn last_error() -> String {
    let p = aslrkit_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn cost_calculators() {
    let mut c = AslrkitCost::default();
    unsafe {
        assert_eq!(aslrkit_bruteforce_cost(19.0, 300.0, &mut c), AslrkitStatus::Ok);
        assert_eq!(c.attempts, 524_288.0);
        assert_eq!(aslrkit_spray_cost(24 << 30, 6 << 20, 300.0, &mut c), AslrkitStatus::Ok);
        assert_eq!(c.attempts, 4096.0);
        assert_eq!(aslrkit_spray_cost(1, 2, 300.0, &mut c), AslrkitStatus::InvalidArgument);
        assert!(last_error().contains("exceeds"));
        assert_eq!(aslrkit_bruteforce_cost(19.0, 0.0, &mut c), AslrkitStatus::InvalidArgument);
        let mut g = AslrkitCrossection::default();
        assert_eq!(aslrkit_crossection_gain(28.8, 13.0, 300.0, &mut g), AslrkitStatus::Ok);
        assert_eq!(g.leaked.attempts, 8192.0);
        assert_eq!(aslrkit_bruteforce_cost(1.0, 300.0, ptr::null_mut()), AslrkitStatus::NullPointer);
    }
    assert_eq!(aslrkit_partial_overwrite_bits(3000, 12), 4);
}

#[test]
fn estimators_over_raw_arrays() {
    let v: Vec<u64> = (0..4000).map(|i| i % 4).collect();
    let mut e = AslrkitEstimate::default();
    unsafe {
        assert_eq!(aslrkit_plugin_entropy(v.as_ptr(), v.len(), &mut e), AslrkitStatus::Ok);
        assert!((e.bits - 2.0).abs() < 1e-12);
        assert_eq!(aslrkit_nsb_entropy(v.as_ptr(), v.len(), -1.0, &mut e), AslrkitStatus::Ok);
        assert!((e.bits - 2.0).abs() < 0.01);
        assert_eq!(aslrkit_nsb_entropy(v.as_ptr(), v.len(), 1.0, &mut e), AslrkitStatus::Estimator);
        assert_eq!(aslrkit_nsb_entropy(ptr::null(), 0, -1.0, &mut e), AslrkitStatus::Estimator);
        assert_eq!(aslrkit_nsb_entropy(ptr::null(), 5, -1.0, &mut e), AslrkitStatus::NullPointer);
        let b: Vec<u64> = v.iter().map(|x| x + 7).collect();
        assert_eq!(aslrkit_correlation_entropy(b.as_ptr(), v.as_ptr(), v.len(), 0, &mut e), AslrkitStatus::Ok);
        assert_eq!(e.bits, 0.0);
        assert_eq!(aslrkit_correlation_entropy(b.as_ptr(), v.as_ptr(), v.len(), 9, &mut e), AslrkitStatus::InvalidArgument);
        let mut n = 0u64;
        assert_eq!(aslrkit_min_samples(35.0, 0.05, &mut n), AslrkitStatus::Ok);
        assert_eq!(n, 3_707_277);
        assert_eq!(aslrkit_min_samples(35.0, 2.0, &mut n), AslrkitStatus::InvalidArgument);
    }
}

#[test]
fn sample_set_lifecycle() {
    let policy = CString::new("linux-6.4-like").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("s.jsonl").to_str().unwrap()).unwrap();
    unsafe {
        let mut set = ptr::null_mut();
        let seed = 3u64;
        assert_eq!(aslrkit_synth_generate(policy.as_ptr(), 500, &seed, &mut set), AslrkitStatus::Ok);
        assert_eq!(aslrkit_sample_set_len(set), 500);
        assert_eq!(aslrkit_sample_set_save(set, path.as_ptr()), AslrkitStatus::Ok);

        let mut loaded = ptr::null_mut();
        assert_eq!(aslrkit_sample_set_load(path.as_ptr(), &mut loaded), AslrkitStatus::Ok);
        let obj = CString::new("lib_big").unwrap();
        let mut len = 0usize;
        assert_eq!(aslrkit_sample_set_series(loaded, obj.as_ptr(), ptr::null_mut(), 0, &mut len), AslrkitStatus::BufferTooSmall);
        assert_eq!(len, 500);
        let mut buf = vec![0u64; len];
        assert_eq!(aslrkit_sample_set_series(loaded, obj.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut len), AslrkitStatus::Ok);
        assert!(buf.iter().all(|a| a % (1 << 22) == 0));
        let bad = CString::new("nope").unwrap();
        assert_eq!(aslrkit_sample_set_series(loaded, bad.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut len), AslrkitStatus::Policy);

        let mut json = ptr::null_mut();
        assert_eq!(aslrkit_analyze_json(loaded, 0, 300.0, f64::NAN, &mut json), AslrkitStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        aslrkit_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["n_runs"], 500);
        assert!(v["findings"].as_array().unwrap().iter().any(|f| f["object"] == "lib_big"));

        aslrkit_sample_set_free(set);
        aslrkit_sample_set_free(loaded);
        aslrkit_sample_set_free(ptr::null_mut());

        let missing = CString::new(dir.path().join("missing").to_str().unwrap()).unwrap();
        assert_eq!(aslrkit_sample_set_load(missing.as_ptr(), &mut loaded), AslrkitStatus::Io);
        assert_eq!(aslrkit_synth_generate(ptr::null(), 5, ptr::null(), &mut loaded), AslrkitStatus::NullPointer);
    }
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/aslrkit.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"aslrkit.h\"\nint main(void){AslrkitCost c; return aslrkit_bruteforce_cost(19.0, 300.0, &c) == ASLRKIT_STATUS_OK ? 0 : 1;}\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let Ok(status) = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(std::path::Path::new(header).parent().unwrap())
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler ({cc}); header check not run");
        return;
    };
    assert!(status.success());
}
