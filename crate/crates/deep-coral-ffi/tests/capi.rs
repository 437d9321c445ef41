//! Exercises the C ABI exactly as a foreign caller would: raw pointers in,
//! status codes out, explicit frees.

use std::ffi::{CStr, CString};
use std::ptr;

use deep_coral_ffi::*;

fn matrix(rows: usize, cols: usize, data: &[f64]) -> *mut DcMatrix {
    let mut out = ptr::null_mut();
    let status = unsafe { dc_matrix_new(rows, cols, data.as_ptr(), &mut out) };
    assert_eq!(status, DcStatus::Ok);
    assert!(!out.is_null());
    out
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dc_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn version_and_null_handling() {
    let version = unsafe { CStr::from_ptr(dc_version()) };
    assert!(!version.to_bytes().is_empty());

    let mut out = ptr::null_mut();
    let status = unsafe { dc_matrix_new(2, 2, ptr::null(), &mut out) };
    assert_eq!(status, DcStatus::NullPointer);
    assert!(!last_error().is_empty());

    let mut loss = 0.0;
    assert_eq!(
        unsafe { dc_coral_loss(ptr::null(), ptr::null(), &mut loss) },
        DcStatus::NullPointer
    );

    // Frees tolerate null.
    unsafe { dc_matrix_free(ptr::null_mut()) };
    unsafe { dc_network_free(ptr::null_mut()) };
}

#[test]
fn matrix_round_trip_and_shape_errors() {
    let m = matrix(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(unsafe { dc_matrix_rows(m) }, 2);
    assert_eq!(unsafe { dc_matrix_cols(m) }, 3);
    let mut back = [0.0; 6];
    assert_eq!(
        unsafe { dc_matrix_copy_data(m, back.as_mut_ptr()) },
        DcStatus::Ok
    );
    assert_eq!(back, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    unsafe { dc_matrix_free(m) };

    let mut out = ptr::null_mut();
    let status = unsafe { dc_matrix_new(0, 3, [0.0].as_ptr(), &mut out) };
    assert_eq!(status, DcStatus::DimensionMismatch);
}

#[test]
fn coral_values_match_hand_case() {
    let source = matrix(2, 1, &[1.0, -1.0]);
    let target = matrix(2, 1, &[0.0, 0.0]);

    let mut loss = 0.0;
    assert_eq!(unsafe { dc_coral_loss(source, target, &mut loss) }, DcStatus::Ok);
    assert!((loss - 1.0).abs() < 1e-12);

    let mut distance = 0.0;
    assert_eq!(
        unsafe { dc_coral_distance(source, target, &mut distance) },
        DcStatus::Ok
    );
    assert_eq!(distance, loss);

    let mut grad_s = ptr::null_mut();
    let mut grad_t = ptr::null_mut();
    assert_eq!(
        unsafe { dc_coral_grad(source, target, &mut grad_s, &mut grad_t) },
        DcStatus::Ok
    );
    let mut gs = [0.0; 2];
    unsafe { dc_matrix_copy_data(grad_s, gs.as_mut_ptr()) };
    assert!((gs[0] - 2.0).abs() < 1e-12);
    assert!((gs[1] + 2.0).abs() < 1e-12);

    let mut cov = ptr::null_mut();
    assert_eq!(unsafe { dc_covariance(source, &mut cov) }, DcStatus::Ok);
    let mut c = [0.0; 1];
    unsafe { dc_matrix_copy_data(cov, c.as_mut_ptr()) };
    assert_eq!(c[0], 2.0);

    let mut frob = 0.0;
    assert_eq!(unsafe { dc_frobenius_sq(cov, &mut frob) }, DcStatus::Ok);
    assert_eq!(frob, 4.0);

    unsafe { dc_matrix_free(cov) };
    unsafe { dc_matrix_free(grad_s) };
    unsafe { dc_matrix_free(grad_t) };

    // Mismatched widths are rejected with a status, not a crash.
    let wide = matrix(2, 2, &[0.0; 4]);
    let mut loss = 0.0;
    assert_eq!(
        unsafe { dc_coral_loss(source, wide, &mut loss) },
        DcStatus::DimensionMismatch
    );
    assert!(last_error().contains("dims"));

    unsafe { dc_matrix_free(wide) };
    unsafe { dc_matrix_free(source) };
    unsafe { dc_matrix_free(target) };
}

#[test]
fn degenerate_batch_is_reported() {
    let single = matrix(1, 2, &[1.0, 2.0]);
    let other = matrix(2, 2, &[0.0; 4]);
    let mut loss = 0.0;
    assert_eq!(
        unsafe { dc_coral_loss(single, other, &mut loss) },
        DcStatus::DegenerateBatch
    );
    unsafe { dc_matrix_free(single) };
    unsafe { dc_matrix_free(other) };
}

#[test]
fn network_init_save_load_and_accuracy() {
    let dims = [4usize, 6, 3];
    let mut net = ptr::null_mut();
    assert_eq!(
        unsafe { dc_network_init(dims.as_ptr(), dims.len(), 0.005, 7, &mut net) },
        DcStatus::Ok
    );

    let x = matrix(2, 4, &[0.1, -0.2, 0.3, 0.5, 1.0, 0.0, -1.0, 0.25]);
    let mut logits = ptr::null_mut();
    assert_eq!(unsafe { dc_network_logits(net, x, &mut logits) }, DcStatus::Ok);
    assert_eq!(unsafe { dc_matrix_rows(logits) }, 2);
    assert_eq!(unsafe { dc_matrix_cols(logits) }, 3);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("net.txt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dc_network_save(net, path.as_ptr()) }, DcStatus::Ok);

    let mut restored = ptr::null_mut();
    assert_eq!(unsafe { dc_network_load(path.as_ptr(), &mut restored) }, DcStatus::Ok);
    let mut logits2 = ptr::null_mut();
    assert_eq!(
        unsafe { dc_network_logits(restored, x, &mut logits2) },
        DcStatus::Ok
    );
    let mut a = [0.0; 6];
    let mut b = [0.0; 6];
    unsafe {
        dc_matrix_copy_data(logits, a.as_mut_ptr());
        dc_matrix_copy_data(logits2, b.as_mut_ptr());
    }
    assert_eq!(a, b);

    let labels: Vec<u32> = vec![0, 2];
    let mut acc = -1.0;
    assert_eq!(
        unsafe { dc_network_accuracy(net, x, labels.as_ptr(), labels.len(), &mut acc) },
        DcStatus::Ok
    );
    assert!((0.0..=1.0).contains(&acc));

    let bad_labels: Vec<u32> = vec![9, 9];
    assert_eq!(
        unsafe { dc_network_accuracy(net, x, bad_labels.as_ptr(), 2, &mut acc) },
        DcStatus::Ok,
        "out-of-range labels simply never match an argmax"
    );

    unsafe { dc_matrix_free(logits) };
    unsafe { dc_matrix_free(logits2) };
    unsafe { dc_matrix_free(x) };
    unsafe { dc_network_free(net) };
    unsafe { dc_network_free(restored) };
}

#[test]
fn train_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = CString::new(
        "samples_per_class=30\niterations=20\nbatch_source=16\nbatch_target=16\neval_every=10\nseed=2\n",
    )
    .unwrap();
    let out_c = CString::new(out.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { dc_train_run(config.as_ptr(), out_c.as_ptr()) },
        DcStatus::Ok
    );
    assert!(out.join("metrics.csv").exists());
    assert!(out.join("checkpoint.txt").exists());
    assert!(out.join("manifest.txt").exists());

    let bad = CString::new("nonsense=1\n").unwrap();
    assert_eq!(
        unsafe { dc_train_run(bad.as_ptr(), out_c.as_ptr()) },
        DcStatus::ParseError
    );
}

#[test]
fn generated_header_declares_the_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("deep_coral.h");
    let text = std::fs::read_to_string(&header).expect("header generated by build script");
    for symbol in [
        "DcStatus",
        "DcMatrix",
        "DcNetwork",
        "dc_coral_loss",
        "dc_coral_grad",
        "dc_covariance",
        "dc_network_init",
        "dc_train_run",
        "dc_last_error_message",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }

    // Syntax-check the header as C when a compiler is around.
    let cc = ["cc", "gcc", "clang"]
        .iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok());
    if let Some(cc) = cc {
        let status = std::process::Command::new(cc)
            .args(["-fsyntax-only", "-x", "c", header.to_str().unwrap()])
            .status()
            .expect("compiler runs");
        assert!(status.success(), "header fails C syntax check");
    }
}
