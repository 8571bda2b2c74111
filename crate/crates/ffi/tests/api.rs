use std::ffi::{CStr, CString};
use std::ptr;

use minvar_ffi::*;

fn last_error() -> String {
    let p = minvar_last_error_message();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn moons(n: usize, seed: u64) -> (Vec<f64>, Vec<u32>) {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(minvar_moons_new(n, 0.1, seed, &mut ds), MinvarStatus::Ok);
        assert_eq!(minvar_moons_len(ds), n);
        let mut points = vec![0.0; 2 * n];
        let mut labels = vec![0; n];
        assert_eq!(minvar_moons_points(ds, points.as_mut_ptr(), points.len()), MinvarStatus::Ok);
        assert_eq!(minvar_moons_labels(ds, labels.as_mut_ptr(), labels.len()), MinvarStatus::Ok);
        minvar_moons_free(ds);
        (points, labels)
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(minvar_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn moons_are_deterministic_and_balanced() {
    let (a, la) = moons(400, 3);
    let (b, lb) = moons(400, 3);
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let upper = la.iter().filter(|&&l| l < 2).count();
    assert_eq!(upper, 200);
    assert!(la.iter().all(|&l| l < 4));
    assert!(minvar_last_error_message().is_null());
}

#[test]
fn invalid_moons_report_errors() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(minvar_moons_new(7, 0.1, 0, &mut ds), MinvarStatus::InvalidArgument);
        assert!(ds.is_null());
        assert!(last_error().contains('4'), "{}", last_error());
        assert_eq!(minvar_moons_new(8, 0.1, 0, ptr::null_mut()), MinvarStatus::NullPointer);
        assert!(last_error().contains("out"));

        assert_eq!(minvar_moons_new(8, 0.1, 0, &mut ds), MinvarStatus::Ok);
        let mut short = vec![0.0; 15];
        assert_eq!(minvar_moons_points(ds, short.as_mut_ptr(), short.len()), MinvarStatus::Dimension);
        assert_eq!(minvar_moons_points(ptr::null(), short.as_mut_ptr(), short.len()), MinvarStatus::NullPointer);
        minvar_moons_free(ds);
        minvar_moons_free(ptr::null_mut());
        assert_eq!(minvar_moons_len(ptr::null()), 0);
    }
}

#[test]
fn network_forward_matches_library() {
    let (points, _) = moons(16, 1);
    unsafe {
        let mut net = ptr::null_mut();
        assert_eq!(minvar_network_new(2, 3, 2, 8, 5, &mut net), MinvarStatus::Ok);
        assert_eq!(minvar_network_input_dim(net), 2);
        assert_eq!(minvar_network_output_dim(net), 3);
        let mut out = vec![0.0; 48];
        assert_eq!(minvar_network_forward(net, points.as_ptr(), 16, out.as_mut_ptr(), out.len()), MinvarStatus::Ok);

        let config = minvar::network::NetworkConfig { output_dim: 3, hidden_layers: 2, hidden_width: 8, init_seed: 5, ..Default::default() };
        let reference = minvar::network::Network::init(&config).unwrap();
        let x = minvar::linalg::Matrix::from_vec(16, 2, points.clone()).unwrap();
        assert_eq!(out, reference.forward_batch(&x).unwrap().as_slice());

        let mut small = vec![0.0; 47];
        assert_eq!(minvar_network_forward(net, points.as_ptr(), 16, small.as_mut_ptr(), small.len()), MinvarStatus::Dimension);
        assert_eq!(minvar_network_forward(net, ptr::null(), 16, out.as_mut_ptr(), out.len()), MinvarStatus::NullPointer);
        minvar_network_free(net);
    }
}

#[test]
fn network_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("net.bin").to_str().unwrap()).unwrap();
    let (points, _) = moons(8, 2);
    unsafe {
        let mut net = ptr::null_mut();
        assert_eq!(minvar_network_new(2, 2, 1, 4, 9, &mut net), MinvarStatus::Ok);
        assert_eq!(minvar_network_save(net, path.as_ptr()), MinvarStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(minvar_network_load(path.as_ptr(), &mut back), MinvarStatus::Ok);
        let mut a = vec![0.0; 16];
        let mut b = vec![0.0; 16];
        minvar_network_forward(net, points.as_ptr(), 8, a.as_mut_ptr(), 16);
        minvar_network_forward(back, points.as_ptr(), 8, b.as_mut_ptr(), 16);
        assert_eq!(a, b);
        minvar_network_free(net);
        minvar_network_free(back);

        let missing = CString::new(dir.path().join("missing.bin").to_str().unwrap()).unwrap();
        assert_eq!(minvar_network_load(missing.as_ptr(), &mut back), MinvarStatus::Io);
        assert!(last_error().contains("missing.bin"));
        std::fs::write(dir.path().join("junk.bin"), b"not a network").unwrap();
        let junk = CString::new(dir.path().join("junk.bin").to_str().unwrap()).unwrap();
        assert_eq!(minvar_network_load(junk.as_ptr(), &mut back), MinvarStatus::Format);
        assert_eq!(minvar_network_load(ptr::null(), &mut back), MinvarStatus::NullPointer);
    }
}

#[test]
fn training_reduces_penalty_and_failures_leave_network_intact() {
    let (points, _) = moons(256, 4);
    unsafe {
        let mut net = ptr::null_mut();
        assert_eq!(minvar_network_new(2, 2, 2, 32, 0, &mut net), MinvarStatus::Ok);
        let mut before = vec![0.0; 512];
        minvar_network_forward(net, points.as_ptr(), 256, before.as_mut_ptr(), 512);

        let mut bad = minvar_train_options_default(MinvarObjective::Dirichlet);
        bad.batch_size = 1;
        assert_eq!(minvar_network_train(net, points.as_ptr(), 256, &bad, ptr::null_mut(), ptr::null_mut()), MinvarStatus::InvalidArgument);
        let mut after = vec![0.0; 512];
        minvar_network_forward(net, points.as_ptr(), 256, after.as_mut_ptr(), 512);
        assert_eq!(before, after);

        let mut opts = minvar_train_options_default(MinvarObjective::Dirichlet);
        assert_eq!(opts.lambda, 30.0);
        assert!(opts.centered_penalty);
        opts.epochs = 60;
        let (mut objective, mut penalty) = (f64::NAN, f64::NAN);
        assert_eq!(minvar_network_train(net, points.as_ptr(), 256, &opts, &mut objective, &mut penalty), MinvarStatus::Ok);
        assert!(objective.is_finite() && objective >= 0.0);
        assert!(penalty < 0.5, "penalty {penalty}");
        minvar_network_forward(net, points.as_ptr(), 256, after.as_mut_ptr(), 512);
        assert_ne!(before, after);
        minvar_network_free(net);
    }
}

#[test]
fn spectral_embedding_is_orthonormal() {
    let n = 120;
    let (points, _) = moons(n, 0);
    let mut emb = vec![0.0; n * 2];
    let mut eig = vec![0.0; n];
    unsafe {
        let status = minvar_spectral_embedding(points.as_ptr(), n, 0.1, 2, true, emb.as_mut_ptr(), emb.len(), eig.as_mut_ptr(), eig.len());
        assert_eq!(status, MinvarStatus::Ok);
    }
    assert!(eig[0].abs() < 1e-10);
    assert!(eig.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    for a in 0..2 {
        let mean: f64 = (0..n).map(|i| emb[2 * i + a]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-8);
        for b in 0..2 {
            let g: f64 = (0..n).map(|i| emb[2 * i + a] * emb[2 * i + b]).sum::<f64>() / n as f64;
            assert!((g - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
        }
    }
    unsafe {
        let status = minvar_spectral_embedding(points.as_ptr(), 3, 0.1, 2, true, emb.as_mut_ptr(), emb.len(), ptr::null_mut(), 0);
        assert_ne!(status, MinvarStatus::Ok);
        assert!(!last_error().is_empty());
    }
}

#[test]
fn probe_on_oracle_features_separates_quadrants() {
    let n = 400;
    let (points, labels) = moons(n, 1);
    let mut emb = vec![0.0; n * 5];
    unsafe {
        let status = minvar_spectral_embedding(points.as_ptr(), n, 0.1, 5, true, emb.as_mut_ptr(), emb.len(), ptr::null_mut(), 0);
        assert_eq!(status, MinvarStatus::Ok);
        let half = n / 2;
        let pick = |parity: usize| -> (Vec<f64>, Vec<u32>) {
            let rows = (0..n).filter(|i| i % 2 == parity);
            (rows.clone().flat_map(|i| emb[5 * i..5 * i + 5].to_vec()).collect(), rows.map(|i| labels[i]).collect())
        };
        let (train, train_labels) = pick(0);
        let (test, test_labels) = pick(1);
        let mut acc = 0.0;
        let status = minvar_probe_accuracy(train.as_ptr(), train_labels.as_ptr(), half, test.as_ptr(), test_labels.as_ptr(), half, 5, 1e-6, &mut acc);
        assert_eq!(status, MinvarStatus::Ok);
        assert!(acc > 0.9, "accuracy {acc}");

        let bad = vec![7u32; half];
        let status = minvar_probe_accuracy(emb.as_ptr(), bad.as_ptr(), half, emb.as_ptr(), bad.as_ptr(), half, 5, 1e-6, &mut acc);
        assert_eq!(status, MinvarStatus::InvalidArgument);
        let status = minvar_probe_accuracy(emb.as_ptr(), labels.as_ptr(), half, emb.as_ptr(), labels.as_ptr(), half, 5, 1e-6, ptr::null_mut());
        assert_eq!(status, MinvarStatus::NullPointer);
    }
}

#[test]
fn cli_entry_point_returns_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    let run = |args: &[&str]| {
        let owned: Vec<CString> = args.iter().map(|a| CString::new(*a).unwrap()).collect();
        let ptrs: Vec<*const std::ffi::c_char> = owned.iter().map(|a| a.as_ptr()).collect();
        unsafe { minvar_cli_main(ptrs.len() as i32, ptrs.as_ptr()) }
    };
    assert_eq!(run(&["minvar", "generate", "--out", &out, "--set", "n=40"]), 0);
    assert!(dir.path().join("data.csv").exists());
    assert_eq!(run(&["minvar", "generate", "--out", &out, "--set", "n=7"]), 1);
    assert_eq!(run(&["minvar", "frobnicate"]), 1);
    assert_eq!(unsafe { minvar_cli_main(-1, ptr::null()) }, 1);
}
