use std::ffi::{CStr, CString};
use std::ptr;

use ddcn::model::{Ddcn, ModelConfig};
use ddcn::Tensor;
use ddcn_ffi::*;

fn tiny_json() -> CString {
    CString::new(serde_json::to_string(&ModelConfig::tiny()).unwrap()).unwrap()
}

fn last_error() -> String {
    let p = ddcn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn predict_matches_library() {
    let cfg = tiny_json();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { ddcn_model_new(cfg.as_ptr(), 3, &mut model) }, DdcnStatus::Ok);
    assert!(!model.is_null());

    let mut shape = [0usize; 5];
    assert_eq!(unsafe { ddcn_model_input_shape(model, 2, shape.as_mut_ptr()) }, DdcnStatus::Ok);
    let n: usize = shape.iter().product();
    let input: Vec<f32> = (0..n).map(|i| (i as f32 * 0.37).sin().abs()).collect();
    let mut out = vec![0f32; 2 * shape[2] * shape[3] * shape[4]];
    let status = unsafe { ddcn_model_predict(model, input.as_ptr(), n, 2, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, DdcnStatus::Ok);

    let reference = Ddcn::<f32>::new(&ModelConfig::tiny(), 3).unwrap();
    let want = reference.predict(&Tensor::new(shape.to_vec(), input).unwrap()).unwrap();
    assert_eq!(out, want.data());

    let mut count = 0;
    assert_eq!(unsafe { ddcn_model_num_params(model, &mut count) }, DdcnStatus::Ok);
    assert_eq!(count, reference.num_params());
    unsafe { ddcn_model_free(model) };
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let cfg = tiny_json();
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    unsafe {
        assert_eq!(ddcn_model_new(cfg.as_ptr(), 11, &mut a), DdcnStatus::Ok);
        assert_eq!(ddcn_model_save(a, path.as_ptr()), DdcnStatus::Ok);
        assert_eq!(ddcn_model_load(cfg.as_ptr(), path.as_ptr(), &mut b), DdcnStatus::Ok);
        let mut shape = [0usize; 5];
        ddcn_model_input_shape(a, 1, shape.as_mut_ptr());
        let n: usize = shape.iter().product();
        let x = vec![0.25f32; n];
        let m = shape[2] * shape[3] * shape[4];
        let (mut ya, mut yb) = (vec![0f32; m], vec![1f32; m]);
        ddcn_model_predict(a, x.as_ptr(), n, 1, ya.as_mut_ptr(), m);
        ddcn_model_predict(b, x.as_ptr(), n, 1, yb.as_mut_ptr(), m);
        assert_eq!(ya, yb);
        ddcn_model_free(a);
        ddcn_model_free(b);
    }
}

#[test]
fn errors_are_reported_with_codes() {
    let mut model = ptr::null_mut();
    let bad = CString::new(r#"{"embed_dim": 0}"#).unwrap();
    assert_eq!(unsafe { ddcn_model_new(bad.as_ptr(), 0, &mut model) }, DdcnStatus::InvalidArgument);
    assert!(model.is_null());
    assert!(!last_error().is_empty());

    let unknown = CString::new(r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(unsafe { ddcn_model_new(unknown.as_ptr(), 0, &mut model) }, DdcnStatus::InvalidArgument);

    assert_eq!(unsafe { ddcn_model_new(ptr::null(), 0, ptr::null_mut()) }, DdcnStatus::NullArgument);

    let missing = CString::new("/nonexistent/dir/model.ckpt").unwrap();
    let cfg = tiny_json();
    assert_eq!(unsafe { ddcn_model_load(cfg.as_ptr(), missing.as_ptr(), &mut model) }, DdcnStatus::Io);
    assert!(last_error().contains("/nonexistent/dir/model.ckpt"));

    let mut ds = ptr::null_mut();
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.grdt");
    std::fs::write(&junk, b"not a dataset").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ddcn_dataset_load(junk.as_ptr(), &mut ds) }, DdcnStatus::Format);
    assert!(ds.is_null());

    // a successful call clears the message
    assert_eq!(unsafe { ddcn_model_new(cfg.as_ptr(), 0, &mut model) }, DdcnStatus::Ok);
    assert!(ddcn_last_error().is_null());
    unsafe { ddcn_model_free(model) };
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("d.grdt").to_str().unwrap()).unwrap();
    let mut ds = ptr::null_mut();
    let mut back = ptr::null_mut();
    unsafe {
        assert_eq!(ddcn_dataset_synth(4, 6, 20, 5, &mut ds), DdcnStatus::Ok);
        let mut dims = [0usize; 4];
        assert_eq!(ddcn_dataset_dims(ds, dims.as_mut_ptr()), DdcnStatus::Ok);
        assert_eq!(dims, [20, 2, 4, 6]);
        assert_eq!(ddcn_dataset_save(ds, path.as_ptr()), DdcnStatus::Ok);
        assert_eq!(ddcn_dataset_load(path.as_ptr(), &mut back), DdcnStatus::Ok);
        let n = dims.iter().product();
        let (mut a, mut b) = (vec![0f32; n], vec![0f32; n]);
        assert_eq!(ddcn_dataset_frames(ds, a.as_mut_ptr(), n), DdcnStatus::Ok);
        assert_eq!(ddcn_dataset_frames(back, b.as_mut_ptr(), n), DdcnStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(ddcn_dataset_frames(ds, a.as_mut_ptr(), n - 1), DdcnStatus::InvalidArgument);
        ddcn_dataset_free(ds);
        ddcn_dataset_free(back);
        ddcn_dataset_free(ptr::null_mut());
        ddcn_model_free(ptr::null_mut());
    }
}

#[test]
fn metrics_report_undefined_mape() {
    let zeros = [0f32; 4];
    let pred = [1f32, 2.0, 3.0, 4.0];
    let mut m = DdcnMetrics::default();
    let status = unsafe { ddcn_metrics(pred.as_ptr(), zeros.as_ptr(), 4, 1e-6, &mut m) };
    assert_eq!(status, DdcnStatus::Ok);
    assert_eq!(m.mape_defined, 0);
    assert!(m.mape.is_nan());
    assert_eq!(m.n_masked, 4);
    assert!((m.mae - 2.5).abs() < 1e-12);
    assert!((m.rmse - 7.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn errors_are_thread_local() {
    assert_ne!(unsafe { ddcn_model_new(ptr::null(), 0, ptr::null_mut()) }, DdcnStatus::Ok);
    std::thread::spawn(|| assert!(ddcn_last_error().is_null())).join().unwrap();
    assert!(!ddcn_last_error().is_null());
}
