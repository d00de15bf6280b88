use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use safseg_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe {
        safseg_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn model_lifecycle() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(safseg_model_new(32, 3, 4, 1, &mut m), SafsegStatus::Ok);
        let (mut h, mut w, mut n) = (0, 0, 0);
        assert_eq!(safseg_model_input_size(m, &mut h, &mut w), SafsegStatus::Ok);
        assert_eq!((h, w), (32, 32));
        assert_eq!(safseg_model_param_count(m, &mut n), SafsegStatus::Ok);
        assert!(n > 0);

        let image: Vec<f32> = (0..2 * 3 * 32 * 32).map(|i| (i % 17) as f32 / 17.0).collect();
        let mut probs = vec![-1.0f32; 2 * 32 * 32];
        assert_eq!(safseg_model_predict(m, image.as_ptr(), 2, 32, 32, probs.as_mut_ptr()), SafsegStatus::Ok);
        assert!(probs.iter().all(|p| *p > 0.0 && *p < 1.0));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.sgck").to_str().unwrap()).unwrap();
        assert_eq!(safseg_model_save(m, path.as_ptr()), SafsegStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(safseg_model_load(path.as_ptr(), &mut loaded), SafsegStatus::Ok);
        let mut again = vec![0.0f32; probs.len()];
        assert_eq!(safseg_model_predict(loaded, image.as_ptr(), 2, 32, 32, again.as_mut_ptr()), SafsegStatus::Ok);
        assert_eq!(probs, again);

        assert_eq!(safseg_model_predict(m, image.as_ptr(), 1, 16, 16, probs.as_mut_ptr()), SafsegStatus::Shape);
        assert!(!last_error().is_empty());
        safseg_model_free(m);
        safseg_model_free(loaded);
        safseg_model_free(ptr::null_mut());
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(safseg_model_new(30, 3, 4, 1, &mut m), SafsegStatus::Config);
        assert!(m.is_null());
        assert_eq!(safseg_model_new(32, 3, 4, 1, ptr::null_mut()), SafsegStatus::NullPointer);
        assert!(last_error().contains("null"));
        let missing = CString::new("/nonexistent/model.sgck").unwrap();
        assert_eq!(safseg_model_load(missing.as_ptr(), &mut m), SafsegStatus::Missing);
        assert!(last_error().contains("/nonexistent/model.sgck"));
        let mut n = 0;
        assert_eq!(safseg_grid_count(100, 100, 40, 40, &mut n), SafsegStatus::Config);
        assert_eq!(safseg_grid_count(1000, 1000, 400, 200, &mut n), SafsegStatus::Ok);
        assert_eq!(n, 16);
        assert!(last_error().is_empty());
    }
}

#[test]
fn metric_functions() {
    let pred = [1u8, 1, 0, 0, 1];
    let truth = [1u8, 0, 0, 1, 1];
    let mut c = SafsegCounts::default();
    let mut m = SafsegMetrics::default();
    let mut s = 0.0;
    unsafe {
        assert_eq!(safseg_confusion(pred.as_ptr(), truth.as_ptr(), 5, &mut c), SafsegStatus::Ok);
        assert_eq!(c, SafsegCounts { tp: 2, fp: 1, tn: 1, fn_: 1 });
        assert_eq!(safseg_metrics(&c, &mut m), SafsegStatus::Ok);
        assert_eq!(m.js, 0.5);
        assert!((m.dc - 2.0 / 3.0).abs() < 1e-15);
        let bad = [2u8, 0, 0, 0, 0];
        assert_eq!(safseg_confusion(bad.as_ptr(), truth.as_ptr(), 5, &mut c), SafsegStatus::InvalidArgument);
        let js = [0.9, 0.64, 0.66];
        assert_eq!(safseg_s_wsi(js.as_ptr(), 3, 0.65, &mut s), SafsegStatus::Ok);
        assert!((s - 0.52).abs() < 1e-12);

        let x: Vec<f64> = (0..16 * 16).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
        assert_eq!(safseg_ssim(x.as_ptr(), x.as_ptr(), 16, 16, &mut s), SafsegStatus::Ok);
        assert!((s - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        assert_eq!(safseg_ssim(x.as_ptr(), y.as_ptr(), 16, 16, &mut s), SafsegStatus::Ok);
        assert!(s < 0.0);
        assert!(!CStr::from_ptr(safseg_version()).to_str().unwrap().is_empty());
    }
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/safseg.h");
    let text = std::fs::read_to_string(&header).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    for name in src.lines().filter_map(|l| l.split("extern \"C\" fn ").nth(1)).map(|r| r.split('(').next().unwrap()) {
        assert!(text.contains(&format!("{name}(")), "{name} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler found; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
