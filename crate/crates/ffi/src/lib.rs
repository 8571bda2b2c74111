//! C ABI over the minvar library.
//!
//! Every fallible function returns a `MinvarStatus`; on failure the message is
//! available from `minvar_last_error_message` on the same thread. Handles are
//! opaque and must be released with their `_free` function. Output buffers are
//! caller-allocated and row-major.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use minvar::data::{make_moons, Dataset, MoonParams};
use minvar::error::Error;
use minvar::linalg::Matrix;
use minvar::network::{Activation, Network, NetworkConfig};
use minvar::objectives::{ObjectiveKind, PenaltyKind};
use minvar::oracle::{probe_accuracy, probe_fit, spectral_embedding};
use minvar::trainer::{self, Lambda, TrainConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinvarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numerical = 4,
    Io = 5,
    Format = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinvarObjective {
    Ssl = 0,
    Graph = 1,
    Dirichlet = 2,
}

impl From<MinvarObjective> for ObjectiveKind {
    fn from(o: MinvarObjective) -> Self {
        match o {
            MinvarObjective::Ssl => ObjectiveKind::Ssl,
            MinvarObjective::Graph => ObjectiveKind::Graph,
            MinvarObjective::Dirichlet => ObjectiveKind::Dirichlet,
        }
    }
}

/// Training options. A negative or NaN `lambda` selects the automatic weight.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MinvarTrainOptions {
    pub objective: MinvarObjective,
    pub lambda: f64,
    pub sigma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub max_grad_norm: f64,
    pub centered_penalty: bool,
}

/// Sampled two-moons dataset.
pub struct MinvarDataset {
    inner: Dataset,
}

/// Feature network.
pub struct MinvarNetwork {
    inner: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(MinvarStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension(_) => MinvarStatus::Dimension,
            Error::Io { .. } => MinvarStatus::Io,
            Error::Format { .. } => MinvarStatus::Format,
            e if e.is_numerical() => MinvarStatus::Numerical,
            _ => MinvarStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MinvarStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MinvarStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MinvarStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MinvarStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(format!("panic: {msg}"));
            MinvarStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, needed: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < needed {
        return Err(Failure(MinvarStatus::Dimension, format!("{what} holds {len} values, {needed} required")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn points_arg(points: *const f64, n: usize, cols: usize) -> Result<Matrix, Failure> {
    let len = n.checked_mul(cols).ok_or_else(|| invalid("point count overflows"))?;
    let data = slice(points, len, "points")?;
    Ok(Matrix::from_vec(n, cols, data.to_vec())?)
}

fn labels_arg(labels: &[u32]) -> Vec<usize> {
    labels.iter().map(|&l| l as usize).collect()
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn minvar_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn minvar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Samples `n` two-moons points.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn minvar_moons_new(n: usize, noise_std: f64, seed: u64, out: *mut *mut MinvarDataset) -> MinvarStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = make_moons(&MoonParams { n, noise_std, seed })?;
        put(out, MinvarDataset { inner });
        Ok(())
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn minvar_moons_len(dataset: *const MinvarDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// Copies the n×2 coordinates into `out` (at least `2n` values).
///
/// # Safety
/// `dataset` must be a live handle and `out` valid for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn minvar_moons_points(dataset: *const MinvarDataset, out: *mut f64, out_len: usize) -> MinvarStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let src = d.inner.points.as_slice();
        slice_mut(out, out_len, src.len(), "out")?[..src.len()].copy_from_slice(src);
        Ok(())
    })
}

/// Copies the quadrant labels (0..4) into `out` (at least `n` values).
///
/// # Safety
/// `dataset` must be a live handle and `out` valid for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn minvar_moons_labels(dataset: *const MinvarDataset, out: *mut u32, out_len: usize) -> MinvarStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let n = d.inner.len();
        let dst = slice_mut(out, out_len, n, "out")?;
        for (o, &q) in dst.iter_mut().zip(&d.inner.quadrant) {
            *o = q as u32;
        }
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn minvar_moons_free(dataset: *mut MinvarDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Glorot-initialised tanh network.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn minvar_network_new(
    input_dim: usize,
    output_dim: usize,
    hidden_layers: usize,
    hidden_width: usize,
    seed: u64,
    out: *mut *mut MinvarNetwork,
) -> MinvarStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = NetworkConfig { input_dim, output_dim, hidden_layers, hidden_width, activation: Activation::Tanh, init_seed: seed };
        let inner = Network::init(&config)?;
        put(out, MinvarNetwork { inner });
        Ok(())
    })
}

/// Loads a checkpoint written by `minvar train` or `minvar_network_save`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one handle.
#[no_mangle]
pub unsafe extern "C" fn minvar_network_load(path: *const c_char, out: *mut *mut MinvarNetwork) -> MinvarStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Network::load(&path_arg(path)?)?;
        put(out, MinvarNetwork { inner });
        Ok(())
    })
}

/// # Safety
/// `network` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn minvar_network_save(network: *const MinvarNetwork, path: *const c_char) -> MinvarStatus {
    guard(|| {
        let net = network.as_ref().ok_or_else(|| null("network"))?;
        net.inner.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `network` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn minvar_network_input_dim(network: *const MinvarNetwork) -> usize {
    network.as_ref().map_or(0, |n| n.inner.input_dim())
}

/// # Safety
/// `network` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn minvar_network_output_dim(network: *const MinvarNetwork) -> usize {
    network.as_ref().map_or(0, |n| n.inner.output_dim())
}

/// Evaluates `n` input rows; writes n×output_dim features to `out`.
///
/// # Safety
/// `points` must hold `n·input_dim` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn minvar_network_forward(
    network: *const MinvarNetwork,
    points: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> MinvarStatus {
    guard(|| {
        let net = &network.as_ref().ok_or_else(|| null("network"))?.inner;
        let x = points_arg(points, n, net.input_dim())?;
        let y = net.forward_batch(&x)?;
        let src = y.as_slice();
        slice_mut(out, out_len, src.len(), "out")?[..src.len()].copy_from_slice(src);
        Ok(())
    })
}

/// Defaults used by `minvar train` for `objective`.
#[no_mangle]
pub extern "C" fn minvar_train_options_default(objective: MinvarObjective) -> MinvarTrainOptions {
    let c = TrainConfig::for_objective(objective.into());
    MinvarTrainOptions {
        objective,
        lambda: match c.lambda {
            Lambda::Fixed(v) => v,
            Lambda::Auto => -1.0,
        },
        sigma: c.sigma,
        learning_rate: c.learning_rate,
        epochs: c.epochs,
        batch_size: c.batch_size,
        seed: c.seed,
        max_grad_norm: c.max_grad_norm,
        centered_penalty: c.penalty == PenaltyKind::Centered,
    }
}

/// Trains `network` in place on `n` points. On success the full-data
/// objective and penalty are written to the optional outputs. On failure the
/// network is left unchanged.
///
/// # Safety
/// `network` must be a live handle, `points` hold `2n` doubles and `options`
/// point to a valid struct; the outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn minvar_network_train(
    network: *mut MinvarNetwork,
    points: *const f64,
    n: usize,
    options: *const MinvarTrainOptions,
    out_objective: *mut f64,
    out_penalty: *mut f64,
) -> MinvarStatus {
    guard(|| {
        let net = network.as_mut().ok_or_else(|| null("network"))?;
        let o = *options.as_ref().ok_or_else(|| null("options"))?;
        let x = points_arg(points, n, net.inner.input_dim())?;
        let config = TrainConfig {
            objective: o.objective.into(),
            lambda: if o.lambda >= 0.0 { Lambda::Fixed(o.lambda) } else { Lambda::Auto },
            sigma: o.sigma,
            learning_rate: o.learning_rate,
            epochs: o.epochs,
            batch_size: o.batch_size,
            seed: o.seed,
            max_grad_norm: o.max_grad_norm,
            penalty: if o.centered_penalty { PenaltyKind::Centered } else { PenaltyKind::Uncentered },
            ..TrainConfig::for_objective(o.objective.into())
        };
        let (trained, history) = trainer::train(net.inner.clone(), &x, &config)?;
        net.inner = trained;
        if let Some(v) = out_objective.as_mut() {
            *v = history.final_energy.objective;
        }
        if let Some(v) = out_penalty.as_mut() {
            *v = history.final_energy.penalty;
        }
        Ok(())
    })
}

/// # Safety
/// `network` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn minvar_network_free(network: *mut MinvarNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// Exact spectral embedding of `n` 2-D points: writes the n×p embedding
/// (normalised to `(1/n) ΦᵀΦ = I`) and, if `out_eigenvalues` is not null, the
/// `n` ascending Laplacian eigenvalues.
///
/// # Safety
/// `points` must hold `2n` doubles, `out_embedding` `embedding_len` doubles and
/// `out_eigenvalues` (if not null) `eigenvalues_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn minvar_spectral_embedding(
    points: *const f64,
    n: usize,
    sigma: f64,
    p: usize,
    drop_constant: bool,
    out_embedding: *mut f64,
    embedding_len: usize,
    out_eigenvalues: *mut f64,
    eigenvalues_len: usize,
) -> MinvarStatus {
    guard(|| {
        let x = points_arg(points, n, 2)?;
        let needed = n.checked_mul(p).ok_or_else(|| invalid("embedding size overflows"))?;
        let dst = slice_mut(out_embedding, embedding_len, needed, "out_embedding")?;
        let eig = if out_eigenvalues.is_null() { None } else { Some(slice_mut(out_eigenvalues, eigenvalues_len, n, "out_eigenvalues")?) };
        let oracle = spectral_embedding(&x, sigma, p, drop_constant)?;
        dst[..needed].copy_from_slice(oracle.embedding.as_slice());
        if let Some(eig) = eig {
            eig[..n].copy_from_slice(&oracle.eigenvalues);
        }
        Ok(())
    })
}

/// Fits a ridge linear probe on the training features and writes its accuracy
/// on the test features to `out_accuracy`.
///
/// # Safety
/// Feature buffers must hold `n·p` doubles, label buffers `n` values and
/// `out_accuracy` must be valid for one double.
#[no_mangle]
pub unsafe extern "C" fn minvar_probe_accuracy(
    train_features: *const f64,
    train_labels: *const u32,
    n_train: usize,
    test_features: *const f64,
    test_labels: *const u32,
    n_test: usize,
    p: usize,
    ridge: f64,
    out_accuracy: *mut f64,
) -> MinvarStatus {
    guard(|| {
        if out_accuracy.is_null() {
            return Err(null("out_accuracy"));
        }
        let train = points_arg(train_features, n_train, p)?;
        let test = points_arg(test_features, n_test, p)?;
        let train_labels = labels_arg(slice(train_labels, n_train, "train_labels")?);
        let test_labels = labels_arg(slice(test_labels, n_test, "test_labels")?);
        let model = probe_fit(&train, &train_labels, ridge)?;
        *out_accuracy = probe_accuracy(&model, &test, &test_labels)?;
        Ok(())
    })
}

/// Runs the `minvar` command line with `argc` arguments (including the
/// program name) and returns its exit code.
///
/// # Safety
/// `argv` must hold `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn minvar_cli_main(argc: c_int, argv: *const *const c_char) -> c_int {
    let mut code = minvar::cli::EXIT_USAGE;
    let status = guard(|| {
        let argc = usize::try_from(argc).map_err(|_| invalid("argc is negative"))?;
        let mut args = Vec::with_capacity(argc);
        for &a in slice(argv, argc, "argv")? {
            if a.is_null() {
                return Err(null("argv entry"));
            }
            args.push(CStr::from_ptr(a).to_string_lossy().into_owned());
        }
        if args.is_empty() {
            args.push("minvar".to_string());
        }
        code = minvar::cli::main_with_args(args);
        Ok(())
    });
    if status == MinvarStatus::Ok {
        code
    } else {
        minvar::cli::EXIT_USAGE
    }
}
