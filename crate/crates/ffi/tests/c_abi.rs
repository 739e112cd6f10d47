use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ecs_motion_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ecs_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn model_round_trip() {
    let mut model: *mut EcsModel = ptr::null_mut();
    let s = unsafe { ecs_model_new(212.6, -2.0 / 3.0, 27.8, 0.05, 0.11, 0.0, 0.0, &mut model) };
    assert_eq!(s, EcsStatus::Ok);
    assert!(!model.is_null());

    let mut p = -1.0;
    assert_eq!(unsafe { ecs_model_spin_up(model, 0.0, &mut p) }, EcsStatus::Ok);
    assert_eq!(p, 0.0);

    let mut buf = [0.0; 31];
    assert_eq!(unsafe { ecs_model_distribution(model, 30.0, 30, buf.as_mut_ptr(), buf.len()) }, EcsStatus::Ok);
    assert!((buf.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let mut parity = 0.0;
    assert_eq!(unsafe { ecs_model_parity(model, 30.0, &mut parity) }, EcsStatus::Ok);
    let summed: f64 = buf.iter().enumerate().map(|(n, v)| if n % 2 == 0 { *v } else { -*v }).sum();
    assert!((parity - summed).abs() < 1e-9);

    let mut small = [0.0; 4];
    let s = unsafe { ecs_model_distribution(model, 30.0, 30, small.as_mut_ptr(), small.len()) };
    assert_eq!(s, EcsStatus::BufferTooSmall);
    assert!(last_error().contains("need 31"));

    // a cutoff too small for the amplitude is a numerical failure
    let s = unsafe { ecs_model_distribution(model, 30.0, 2, small.as_mut_ptr(), small.len()) };
    assert_eq!(s, EcsStatus::Numerical);
    unsafe { ecs_model_free(model) };
}

#[test]
fn invalid_arguments() {
    let mut model: *mut EcsModel = ptr::null_mut();
    let s = unsafe { ecs_model_new(212.6, 0.5, 27.8, 0.05, 0.11, 0.0, 0.0, &mut model) };
    assert_eq!(s, EcsStatus::InvalidInput);
    assert!(model.is_null());
    assert!(!last_error().is_empty());
    let s = unsafe { ecs_model_new(212.6, -1.0, 27.8, 0.05, 0.11, 0.0, 0.0, ptr::null_mut()) };
    assert_eq!(s, EcsStatus::NullPointer);
    let mut p = 0.0;
    assert_eq!(unsafe { ecs_model_spin_up(ptr::null(), 1.0, &mut p) }, EcsStatus::NullPointer);
    unsafe { ecs_model_free(ptr::null_mut()) };
}

#[test]
fn ms_and_fidelity() {
    let mut out = [0.0; 3];
    assert_eq!(unsafe { ecs_ms_populations(-1.0 / 3.0, 0.0, 0.0, out.as_mut_ptr()) }, EcsStatus::Ok);
    assert_eq!(out, [1.0, 0.0, 0.0]);
    assert_eq!(unsafe { ecs_ms_populations(-1.0 / 3.0, 0.0, 182.0, out.as_mut_ptr()) }, EcsStatus::Ok);
    assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut f = 0.0;
    assert_eq!(unsafe { ecs_bell_fidelity(0.942, 0.852, &mut f) }, EcsStatus::Ok);
    assert!((f - 0.897).abs() < 1e-12);
    assert_eq!(unsafe { ecs_bell_fidelity(1.5, 0.2, &mut f) }, EcsStatus::InvalidInput);
}

#[test]
fn bsb_fit_report() {
    use ecs_motion::estimation::{bsb_model, even_cat_populations, BsbFitConfig};
    let cfg = BsbFitConfig::default();
    let truth = even_cat_populations(1.2, 8);
    let times: Vec<f64> = (0..61).map(|i| i as f64 * 5.0).collect();
    let p: Vec<f64> = times.iter().map(|t| 0.97 * bsb_model(&truth, cfg.omega0, f64::INFINITY, cfg.eta, t * 1e-6, 1.0)).collect();
    let shots = vec![500u32; times.len()];
    let mut report: *mut EcsFitReport = ptr::null_mut();
    let s = unsafe { ecs_fit_bsb(times.as_ptr(), p.as_ptr(), shots.as_ptr(), times.len(), 8, 0.0, &mut report) };
    assert_eq!(s, EcsStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { ecs_fit_report_converged(report) }, 1);
    let key = CString::new("p_2").unwrap();
    let (mut v, mut e) = (0.0, 0.0);
    assert_eq!(unsafe { ecs_fit_report_get(report, key.as_ptr(), &mut v, &mut e) }, EcsStatus::Ok);
    assert!((v - truth[2]).abs() < 1e-3);
    let bad = CString::new("nope").unwrap();
    assert_eq!(unsafe { ecs_fit_report_get(report, bad.as_ptr(), &mut v, ptr::null_mut()) }, EcsStatus::InvalidInput);
    let text = unsafe { ecs_fit_report_to_toml(report) };
    assert!(!text.is_null());
    assert!(unsafe { CStr::from_ptr(text) }.to_str().unwrap().contains("ecs-motion/fit-report/1"));
    unsafe {
        ecs_string_free(text);
        ecs_fit_report_free(report);
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ecs_motion.h")
}

#[test]
fn header_declares_the_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "ecs_last_error",
        "ecs_model_new",
        "ecs_model_free",
        "ecs_model_distribution",
        "ecs_ms_populations",
        "ecs_fit_bsb",
        "ecs_fit_report_get",
        "ecs_string_free",
        "ECS_STATUS_NUMERICAL",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

#[test]
fn c_program_links_against_static_library() {
    let Ok(exe) = std::env::current_exe() else { return };
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libecs_motion_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no static library or C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "ecs_motion.h"
int main(void) {
    EcsModel *m = NULL;
    if (ecs_model_new(212.6, -2.0 / 3.0, 27.8, 0.05, 0.11, 0.0, 0.0, &m) != ECS_STATUS_OK) return 1;
    double p = 0.0;
    if (ecs_model_parity(m, 30.0, &p) != ECS_STATUS_OK) return 2;
    ecs_model_free(m);
    if (ecs_model_new(1.0, 3.0, 27.8, 0.05, 0.11, 0.0, 0.0, &m) != ECS_STATUS_INVALID_INPUT) return 3;
    printf("%.6f %s\n", p, ecs_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let parity: f64 = text.split_whitespace().next().unwrap().parse().unwrap();
    assert!(parity > 0.0 && parity < 1.0);
}
