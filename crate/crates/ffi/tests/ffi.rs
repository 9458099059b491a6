use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use depthac_ffi::*;

fn last_error() -> String {
    let p = depthac_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn image(h: usize, w: usize, c: usize) -> Vec<f64> {
    (0..h * w * c).map(|i| ((i * 37) % 101) as f64 / 100.0).collect()
}

#[test]
fn model_lifecycle_round_trips_through_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.acdk").to_str().unwrap()).unwrap();
    let mut m: *mut AcdkModel = ptr::null_mut();
    unsafe {
        assert_eq!(depthac_model_init(3, 3, &mut m), AcdkStatus::Ok);
        assert!(depthac_model_param_count(m) > 0);
        assert_eq!(depthac_model_input_channels(m), 3);
        let img = image(16, 16, 3);
        let mut a = vec![0.0; 256];
        assert_eq!(depthac_model_predict(m, img.as_ptr(), 16, 16, 3, a.as_mut_ptr()), AcdkStatus::Ok);
        assert!(a.iter().all(|v| *v > 0.0));
        assert_eq!(depthac_model_save(m, path.as_ptr()), AcdkStatus::Ok);
        depthac_model_free(m);

        let mut loaded: *mut AcdkModel = ptr::null_mut();
        assert_eq!(depthac_model_load(path.as_ptr(), &mut loaded), AcdkStatus::Ok);
        let mut b = vec![0.0; 256];
        assert_eq!(depthac_model_predict(loaded, img.as_ptr(), 16, 16, 3, b.as_mut_ptr()), AcdkStatus::Ok);
        assert_eq!(a, b);
        depthac_model_free(loaded);
        depthac_model_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut m: *mut AcdkModel = ptr::null_mut();
    unsafe {
        assert_eq!(depthac_model_init(0, 2, &mut m), AcdkStatus::InvalidArgument);
        assert!(last_error().contains("channel"), "{}", last_error());
        assert_eq!(depthac_model_init(0, 3, ptr::null_mut()), AcdkStatus::NullPointer);

        let missing = CString::new("/nonexistent/x.acdk").unwrap();
        assert_eq!(depthac_model_load(missing.as_ptr(), &mut m), AcdkStatus::Io);
        assert!(m.is_null());

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.acdk");
        std::fs::write(&bad, b"ACDK1\x03").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(depthac_model_load(bad.as_ptr(), &mut m), AcdkStatus::Checkpoint);

        assert_eq!(depthac_model_init(0, 3, &mut m), AcdkStatus::Ok);
        let img = image(12, 12, 3);
        let mut out = vec![0.0; 144];
        assert_eq!(depthac_model_predict(m, img.as_ptr(), 12, 12, 3, out.as_mut_ptr()), AcdkStatus::Shape);
        depthac_model_free(m);

        let flat = [0.5; 4];
        let mut v = 0.0;
        assert_eq!(depthac_affine_loss(flat.as_ptr(), flat.as_ptr(), 4, &mut v, ptr::null_mut()), AcdkStatus::Numeric);
    }
}

#[test]
fn loss_and_metric_entry_points() {
    let (p, t) = ([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]);
    let mut v = 0.0;
    let mut g = [0.0; 3];
    unsafe {
        assert_eq!(depthac_affine_loss(p.as_ptr(), t.as_ptr(), 3, &mut v, g.as_mut_ptr()), AcdkStatus::Ok);
    }
    assert!((v - 2.0).abs() < 1e-12);

    let s = [0.0, 1.0];
    let r = [0.0, 0.5];
    unsafe {
        assert_eq!(
            depthac_sdr_loss(s.as_ptr(), r.as_ptr(), 1, 2, 1, AcdkMetric::Euclidean, &mut v, ptr::null_mut()),
            AcdkStatus::Ok
        );
    }
    let expect = depthac::sdr::sdr_loss_dense(
        &depthac::DisparityMap::new(1, 2, s.to_vec()).unwrap(),
        &depthac::DisparityMap::new(1, 2, r.to_vec()).unwrap(),
        1,
        depthac::sdr::DistanceMetric::Euclidean,
    )
    .unwrap()
    .0;
    assert_eq!(v, expect);

    let gt: Vec<f64> = (0..16).map(|i| 0.1 + i as f64 / 20.0).collect();
    let pred: Vec<f64> = gt.iter().map(|x| 2.0 * x + 0.3).collect();
    let (mut a, mut d) = (1.0, 0.0);
    unsafe {
        assert_eq!(depthac_metrics(pred.as_ptr(), gt.as_ptr(), 4, 4, &mut a, &mut d), AcdkStatus::Ok);
    }
    assert!(a < 1e-12);
    assert_eq!(d, 1.0);
}

#[test]
fn corruption_is_deterministic_and_bounded() {
    let img = image(16, 16, 3);
    let kind = CString::new("snow").unwrap();
    let mut a = vec![0.0; img.len()];
    let mut b = vec![0.0; img.len()];
    unsafe {
        assert_eq!(depthac_corrupt(kind.as_ptr(), 4, 9, img.as_ptr(), 16, 16, 3, a.as_mut_ptr()), AcdkStatus::Ok);
        assert_eq!(depthac_corrupt(kind.as_ptr(), 4, 9, img.as_ptr(), 16, 16, 3, b.as_mut_ptr()), AcdkStatus::Ok);
        assert_eq!(
            depthac_corrupt(kind.as_ptr(), 6, 9, img.as_ptr(), 16, 16, 3, b.as_mut_ptr()),
            AcdkStatus::InvalidArgument
        );
    }
    assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_ne!(a, img);
    let mut c = vec![0.0; img.len()];
    unsafe { depthac_corrupt(kind.as_ptr(), 4, 9, img.as_ptr(), 16, 16, 3, c.as_mut_ptr()) };
    assert_eq!(a, c);
}

fn header() -> String {
    std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/depthac.h")).unwrap()
}

#[test]
fn header_declares_every_export() {
    let h = header();
    let src = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 10);
    for name in exports {
        assert!(h.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(h.contains("typedef struct AcdkModel AcdkModel;"));
    assert!(h.contains("ACDK_STATUS_NULL_POINTER = 1"));
}

/// Compiles the C smoke program against the header and static library.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libdepthac_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let ckpt = dir.path().join("c.acdk");
    let out = Command::new(&exe).arg(&ckpt).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("loss=2.000000000000"), "{stdout}");
    assert!(depthac::model::load_checkpoint(&ckpt).is_ok());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc);
        }
    }
    Err(())
}
