use std::ffi::{c_char, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use aebound_ffi::*;

const JSON: &str =
    "{\"dims\":[2,1,2],\"bottleneck_index\":1,\"activations\":[\"relu\",\"sigmoid\"],\
                    \"weights\":[[1.0,1.0],[2.0,-2.0]]}";

fn last_error() -> String {
    unsafe {
        let n = aeb_last_error_message(ptr::null_mut(), 0);
        let mut buf = vec![0u8; n + 1];
        aeb_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len());
        String::from_utf8(buf[..n].to_vec()).unwrap()
    }
}

fn load() -> *mut AebModel {
    let text = CString::new(JSON).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { aeb_model_from_json(text.as_ptr(), &mut m) },
        AebStatus::Ok
    );
    assert!(!m.is_null());
    m
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn model_round_trip_through_handle() {
    let m = load();
    let (mut i, mut c, mut d, mut h) = (0, 0, 0, 0);
    unsafe {
        assert_eq!(
            aeb_model_dims(m, &mut i, &mut c, &mut d, &mut h),
            AebStatus::Ok
        );
        assert_eq!((i, c, d, h), (2, 1, 2, 2));

        let x = [1.0, 0.0];
        let mut y = [0.0; 2];
        assert_eq!(
            aeb_model_forward(m, x.as_ptr(), 2, y.as_mut_ptr(), 2),
            AebStatus::Ok
        );
        assert_eq!(y, [sigmoid(2.0), sigmoid(-2.0)]);

        let mut z = [0.0; 1];
        assert_eq!(
            aeb_model_encode(m, x.as_ptr(), 2, z.as_mut_ptr(), 1),
            AebStatus::Ok
        );
        assert_eq!(z, [1.0]);
        let mut back = [0.0; 2];
        assert_eq!(
            aeb_model_decode(m, z.as_ptr(), 1, back.as_mut_ptr(), 2),
            AebStatus::Ok
        );
        assert_eq!(back, y);

        let mut lip = 0.0;
        assert_eq!(aeb_model_lipschitz_upper(m, &mut lip), AebStatus::Ok);
        assert!((lip - 8f64.sqrt() / 4.0).abs() < 1e-9);
        aeb_model_free(m);
    }
}

#[test]
fn dimension_errors_are_reported() {
    let m = load();
    unsafe {
        let x = [1.0, 0.0, 1.0];
        let mut y = [0.0; 2];
        let s = aeb_model_forward(m, x.as_ptr(), 3, y.as_mut_ptr(), 2);
        assert_eq!(s, AebStatus::DimensionMismatch);
        assert!(
            last_error().contains("expected 2, got 3"),
            "{}",
            last_error()
        );
        let s = aeb_model_forward(m, x.as_ptr(), 2, y.as_mut_ptr(), 1);
        assert_eq!(s, AebStatus::DimensionMismatch);
        aeb_model_free(m);
    }
}

#[test]
fn null_and_parse_failures() {
    unsafe {
        let mut out = 0.0;
        assert_eq!(
            aeb_model_complexity(ptr::null(), 1.0, &mut out),
            AebStatus::NullPointer
        );
        assert!(last_error().contains("model"));
        let bad = CString::new("{\"dims\":[2]}").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(aeb_model_from_json(bad.as_ptr(), &mut m), AebStatus::Parse);
        assert!(m.is_null());
        let path = CString::new("/nonexistent/model.json").unwrap();
        assert_eq!(aeb_model_load(path.as_ptr(), &mut m), AebStatus::Io);
        aeb_model_free(ptr::null_mut());
    }
}

#[test]
fn success_clears_last_error() {
    unsafe {
        let mut out = 0.0;
        assert_eq!(
            aeb_r_bound(2.0, 0.25, 4, &mut out),
            AebStatus::InvalidArgument
        );
        assert!(!last_error().is_empty());
        assert_eq!(aeb_r_bound(0.5, 0.25, 4, &mut out), AebStatus::Ok);
        assert_eq!(out, 2.125);
        assert_eq!(last_error(), "");
    }
}

#[test]
fn closed_form_bounds() {
    unsafe {
        let mut v = 0.0;
        assert_eq!(aeb_mu_bound_worst(0.0, 0.25, 16, &mut v), AebStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(aeb_mu_bound_symmetric(0.0, 0.25, 16, &mut v), AebStatus::Ok);
        assert!((v - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            aeb_improvement_factor(60000, 784, 30, &mut v),
            AebStatus::Ok
        );
        assert!((v - 1.22).abs() < 0.01);
        let x = [1.0, 0.0, 1.0];
        let xhat = [0.9, 0.2, 0.5];
        assert_eq!(
            aeb_margin_loss(x.as_ptr(), xhat.as_ptr(), 3, 0.25, &mut v),
            AebStatus::Ok
        );
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        let w = [3.0, 0.0, 0.0, 1.0];
        let mut conv = false;
        assert_eq!(
            aeb_spectral_norm(w.as_ptr(), 2, 2, &mut v, &mut conv),
            AebStatus::Ok
        );
        assert!((v - 3.0).abs() < 1e-9 && conv);
    }
}

#[test]
fn generalization_bound_matches_core() {
    let m = load();
    let mut b = AebBound::default();
    unsafe {
        let s = aeb_model_generalization_bound(m, 2f64.sqrt(), 1000, 0.1, 0.45, 0.49, 0.2, &mut b);
        assert_eq!(s, AebStatus::Ok);
        let p = aebound::checkpoint::from_json(JSON).unwrap();
        let c = aebound::bounds::complexity_term(&p, 2f64.sqrt()).unwrap();
        assert_eq!(b.complexity, c);
        assert!((b.margin_bound_g1 - 0.2 - b.delta_term).abs() < 1e-12);
        let s = aeb_model_generalization_bound(m, 1.0, 1000, 0.1, 0.49, 0.45, 0.2, &mut b);
        assert_eq!(s, AebStatus::InvalidArgument);
        aeb_model_free(m);
    }
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include").join("aebound.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "aeb_model_load",
        "aeb_model_free",
        "AEB_STATUS_DIMENSION_MISMATCH",
        "typedef struct AebModel AebModel",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let lib = target_dir().join("libaebound_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("no C compiler or static library; header content checked only");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "aebound.h"
int main(void) {
    const char *json = "{\"dims\":[2,1,2],\"bottleneck_index\":1,\"activations\":[\"relu\",\"sigmoid\"],\"weights\":[[1,1],[2,-2]]}";
    AebModel *m = NULL;
    if (aeb_model_from_json(json, &m) != AEB_STATUS_OK) return 1;
    double x[2] = {1.0, 0.0}, y[2];
    if (aeb_model_forward(m, x, 2, y, 2) != AEB_STATUS_OK) return 2;
    if (aeb_model_forward(m, x, 1, y, 2) != AEB_STATUS_DIMENSION_MISMATCH) return 3;
    char buf[256];
    aeb_last_error_message(buf, sizeof buf);
    double f;
    if (aeb_improvement_factor(60000, 784, 50, &f) != AEB_STATUS_OK) return 4;
    aeb_model_free(m);
    printf("%.6f %.6f %.4f %s\n", y[0], y[1], f, buf);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke program failed to build");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.starts_with("0.880797 0.119203 1.1232 dimension mismatch"),
        "{stdout}"
    );
}
