use std::ffi::{CStr, CString};
use std::ptr;

use smoothing_ffi::*;

fn reference_json() -> CString {
    let s2 = 8.0 * 2f64.ln();
    CString::new(format!(
        r#"{{"label":"reference","offspring":{{"family":"Fixed","n":2}},
            "weight":{{"family":"Lognormal","mu":{},"sigma":{}}},
            "inhom":{{"family":"Constant","b":1.0}}}}"#,
        -0.5 * s2,
        s2.sqrt()
    ))
    .unwrap()
}

fn model() -> *mut SmModel {
    let mut m = ptr::null_mut();
    let json = reference_json();
    assert_eq!(unsafe { sm_model_from_json(json.as_ptr(), &mut m) }, SmStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sm_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn mellin_and_alpha() {
    let m = model();
    let mut v = 0.0;
    assert_eq!(unsafe { sm_mellin(m, 1.0, &mut v) }, SmStatus::Ok);
    assert!((v - 2.0).abs() < 1e-12);
    let mut a = 0.0;
    assert_eq!(unsafe { sm_alpha(m, &mut a) }, SmStatus::Ok);
    assert!((a - 0.5).abs() < 1e-9);
    unsafe { sm_model_free(m) };
}

#[test]
fn analyze_returns_json() {
    let m = model();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { sm_analyze(m, 1, &mut s) }, SmStatus::Ok);
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe {
        sm_string_free(s);
        sm_model_free(m);
    }
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["regime"], "critical_tangent");
}

#[test]
fn invalid_model_reports_pointer() {
    let json = CString::new(r#"{"label":"x","offspring":{"family":"Fixed","n":0},"weight":{"family":"Deterministic","value":0.5},"inhom":{"family":"Constant","b":1}}"#).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { sm_model_from_json(json.as_ptr(), &mut m) },
        SmStatus::InvalidModel
    );
    assert!(m.is_null());
    assert!(last_error().contains("/offspring"), "{}", last_error());
}

#[test]
fn null_arguments_are_rejected() {
    let mut v = 0.0;
    assert_eq!(unsafe { sm_mellin(ptr::null(), 1.0, &mut v) }, SmStatus::NullPointer);
    assert!(last_error().contains("model"));
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { sm_model_from_json(ptr::null(), &mut m) },
        SmStatus::NullPointer
    );
    unsafe {
        sm_model_free(ptr::null_mut());
        sm_grid_free(ptr::null_mut());
        sm_string_free(ptr::null_mut());
    }
    assert_eq!(unsafe { sm_grid_len(ptr::null()) }, 0);
}

#[test]
fn sample_r_is_reproducible() {
    let m = model();
    let policy = SmPrunePolicy {
        weight_floor: 1e-5,
        depth_cap: 200,
        node_cap: 1_000_000,
        censor_pruned_weight: 1.0,
    };
    let mut a = SmTreeSample::default();
    let mut b = SmTreeSample::default();
    assert_eq!(unsafe { sm_sample_r(m, &policy, 7, 3, &mut a) }, SmStatus::Ok);
    assert_eq!(unsafe { sm_sample_r(m, &policy, 7, 3, &mut b) }, SmStatus::Ok);
    assert_eq!(a, b);
    assert!(a.r_value >= 1.0);
    let bad = SmPrunePolicy {
        weight_floor: -1.0,
        ..policy
    };
    assert_eq!(unsafe { sm_sample_r(m, &bad, 7, 3, &mut a) }, SmStatus::InvalidArgument);
    unsafe { sm_model_free(m) };
}

#[test]
fn c_plus_of_pareto() {
    // P[X > t] = t^{-1} for t >= 1, so t S(t) = 1 on the window.
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|i| n as f64 / (i as f64 + 0.5)).collect();
    let mut e = SmEstimate::default();
    assert_eq!(
        unsafe { sm_estimate_c_plus(xs.as_ptr(), xs.len(), 1.0, 10.0, 100.0, &mut e) },
        SmStatus::Ok
    );
    assert!((e.value - 1.0).abs() < 1e-3, "{e:?}");
    assert_eq!(
        unsafe { sm_estimate_c_plus(xs.as_ptr(), xs.len(), 1.0, 10.0, 1e9, &mut e) },
        SmStatus::Numerical
    );
}

#[test]
fn laplace_fixpoint_on_reference() {
    let m = model();
    let opts = SmFixpointOptions {
        pool_size: 5000,
        seed: 1,
        workers: 1,
        ..sm_fixpoint_options_default()
    };
    let mut g = ptr::null_mut();
    assert_eq!(
        unsafe { sm_laplace_fixpoint(m, &opts, &mut g) },
        SmStatus::Ok,
        "{}",
        last_error()
    );
    let n = unsafe { sm_grid_len(g) };
    assert!(n > 100);
    let t = unsafe { std::slice::from_raw_parts(sm_grid_t(g), n) };
    let phi = unsafe { std::slice::from_raw_parts(sm_grid_phi(g), n) };
    let u = unsafe { std::slice::from_raw_parts(sm_grid_one_minus_phi(g), n) };
    assert!(t.windows(2).all(|w| w[1] > w[0]));
    assert!(phi.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    assert!(phi.iter().zip(u).all(|(p, q)| (p + q - 1.0).abs() < 1e-12));
    let c = unsafe { sm_grid_c_tail(g) };
    assert!(c > 0.5 && c < 1.0, "C_tail {c}");
    assert!(unsafe { sm_grid_iterations(g) } > 0);
    unsafe {
        sm_grid_free(g);
        sm_model_free(m);
    }
}
