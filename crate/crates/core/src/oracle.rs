//! Ground truth and evaluation: dense spectral embedding, free-embedding
//! descent, linear probes, subspace alignment and off-manifold diagnostics.

use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::linalg::{principal_angle_cosines, sym_eig, Matrix};
use crate::network::Network;
use crate::objectives::{graph_energy, kernel_matrix, laplacian_from_kernel, penalty, PenaltyKind};
use crate::rng::{streams, Rng};

/// Default ridge for [`probe_fit`].
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// `L = diag(W·1) − W` for the Gaussian kernel graph on `points`.
pub fn build_laplacian(points: &Matrix, sigma: f64) -> Result<Matrix> {
    if points.rows() < 2 {
        return Err(Error::param("a graph Laplacian needs at least two points"));
    }
    Ok(laplacian_from_kernel(&kernel_matrix(points, sigma)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralOracle {
    /// Full Laplacian spectrum, ascending.
    pub eigenvalues: Vec<f64>,
    /// Bottom eigenvectors scaled so that `(1/n) ΦᵀΦ = I`.
    pub embedding: Matrix,
    pub includes_constant: bool,
}

impl SpectralOracle {
    /// Eigenvalues belonging to the embedding columns.
    pub fn embedded_eigenvalues(&self) -> &[f64] {
        let skip = usize::from(!self.includes_constant);
        &self.eigenvalues[skip..skip + self.embedding.cols()]
    }

    /// `index,eigenvalue` for the whole spectrum.
    pub fn write_eigenvalues_csv(&self, path: &Path) -> Result<()> {
        write_text(path, |w| {
            writeln!(w, "index,eigenvalue")?;
            for (i, v) in self.eigenvalues.iter().enumerate() {
                writeln!(w, "{i},{}", fmt_f64(*v))?;
            }
            Ok(())
        })
    }

    /// `x,y,phi_0,...` rows for the embedded points.
    pub fn write_embedding_csv(&self, points: &Matrix, path: &Path) -> Result<()> {
        write_feature_csv(points, &self.embedding, path)
    }
}

pub(crate) fn write_text(path: &Path, body: impl FnOnce(&mut BufWriter<std::fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Points next to their features, one row each, with an `x,y,phi_k` header.
pub fn write_feature_csv(points: &Matrix, features: &Matrix, path: &Path) -> Result<()> {
    if points.rows() != features.rows() {
        return Err(Error::dim(format!("{} points, {} feature rows", points.rows(), features.rows())));
    }
    let coords = ["x", "y", "z"];
    write_text(path, |w| {
        let mut header: Vec<String> = (0..points.cols()).map(|c| coords.get(c).map_or(format!("x{c}"), |s| s.to_string())).collect();
        header.extend((0..features.cols()).map(|k| format!("phi_{k}")));
        writeln!(w, "{}", header.join(","))?;
        for r in 0..points.rows() {
            let fields: Vec<String> = points.row(r).iter().chain(features.row(r)).map(|&v| fmt_f64(v)).collect();
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    })
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn fix_sign(v: &mut [f64]) {
    let mut pivot = 0.0f64;
    for &x in v.iter() {
        if x.abs() > pivot.abs() {
            pivot = x;
        }
    }
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Bottom `p` Laplacian eigenvectors, skipping the constant one when
/// `drop_constant`, scaled by `√n`.
///
/// The constant vector is deflated to the top of the spectrum first so that a
/// near-zero second eigenvalue never mixes with it.
pub fn spectral_embedding(points: &Matrix, sigma: f64, p: usize, drop_constant: bool) -> Result<SpectralOracle> {
    let n = points.rows();
    if p == 0 || n <= p + 1 {
        return Err(Error::param(format!("spectral embedding needs n > p + 1, got n={n}, p={p}")));
    }
    let laplacian = build_laplacian(points, sigma)?;
    let max_degree = (0..n).map(|i| laplacian[(i, i)]).fold(0.0f64, f64::max);
    // Every Laplacian eigenvalue is at most twice the largest degree.
    let shift = 2.0 * max_degree + 1.0;
    let deflated = Matrix::from_fn(n, n, |r, c| laplacian[(r, c)] + shift / n as f64);
    let eig = sym_eig(&deflated)?;

    let mut eigenvalues = Vec::with_capacity(n);
    eigenvalues.push(0.0);
    eigenvalues.extend(eig.values[..n - 1].iter().map(|&v| v.max(0.0)));

    let scale = (n as f64).sqrt();
    let mut columns = Vec::with_capacity(p);
    if !drop_constant {
        columns.push(vec![1.0; n]);
    }
    for k in 0..p - columns.len() {
        let mut v = eig.vectors.column(k);
        fix_sign(&mut v);
        v.iter_mut().for_each(|x| *x *= scale);
        columns.push(v);
    }
    Ok(SpectralOracle { eigenvalues, embedding: Matrix::from_columns(&columns)?, includes_constant: !drop_constant })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeDescentConfig {
    pub sigma: f64,
    pub p: usize,
    pub lambda: f64,
    pub steps: usize,
    pub seed: u64,
    pub penalty: PenaltyKind,
}

/// Gradient descent on `graph_energy(Φ) + λ·Ω(Φ)` directly over the entries
/// of `Φ`, from a seeded standard-normal start.
pub fn free_embedding_descent(points: &Matrix, config: &FreeDescentConfig) -> Result<Matrix> {
    let n = points.rows();
    let p = config.p;
    if p == 0 || n <= p {
        return Err(Error::param(format!("free embedding needs n > p, got n={n}, p={p}")));
    }
    if !(config.lambda >= 0.0 && config.lambda.is_finite()) {
        return Err(Error::param(format!("lambda must be finite and >= 0, got {}", config.lambda)));
    }
    let laplacian = build_laplacian(points, config.sigma)?;
    let max_degree = (0..n).map(|i| laplacian[(i, i)]).fold(0.0f64, f64::max);
    let nf = n as f64;
    // Curvature bounds: (4/n²)·2·max degree for the graph term and roughly
    // (4/n)·(3‖C‖ + 1) for the penalty near C = I.
    let graph_curvature = 8.0 * max_degree / (nf * nf);
    let penalty_curvature = 16.0 * config.lambda / nf;
    let step = 1.0 / (graph_curvature + penalty_curvature);

    let mut rng = Rng::substream(config.seed, streams::FREE_EMBEDDING);
    let mut phi = Matrix::from_fn(n, p, |_, _| rng.normal());
    let graph_scale = 4.0 / (nf * nf);
    let mut lphi = Matrix::zeros(n, p);
    for iteration in 0..config.steps {
        crate::linalg::gemm(graph_scale, laplacian.view(), phi.view(), 0.0, &mut lphi);
        if config.lambda > 0.0 {
            let (_, pen_grad) = penalty(config.penalty, &phi)?;
            lphi.axpy(config.lambda, &pen_grad);
        }
        phi.axpy(-step, &lphi);
        if !phi.is_finite() {
            return Err(Error::Divergence { epoch: iteration, reason: "free embedding left the finite range".into() });
        }
    }
    Ok(phi)
}

/// Value of the free-embedding objective, for monitoring.
pub fn free_embedding_energy(phi: &Matrix, points: &Matrix, sigma: f64, lambda: f64, kind: PenaltyKind) -> Result<f64> {
    let w = kernel_matrix(points, sigma)?;
    Ok(graph_energy(phi, &w)? + lambda * penalty(kind, phi)?.0)
}

/// Affine one-vs-rest least-squares classifier: scores are `[φ, 1]·W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// `(p + 1) × 4`, bias in the last row.
    pub weights: Matrix,
}

impl ProbeModel {
    pub fn feature_dim(&self) -> usize {
        self.weights.rows() - 1
    }

    pub fn scores(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.feature_dim() {
            return Err(Error::dim(format!("probe expects {} features, got {}", self.feature_dim(), features.cols())));
        }
        features.with_constant_column(1.0).matmul(&self.weights)
    }

    /// Argmax class per row; ties go to the smallest class index.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        let scores = self.scores(features)?;
        Ok((0..scores.rows())
            .map(|r| {
                let row = scores.row(r);
                let mut best = 0;
                for (k, &s) in row.iter().enumerate().skip(1) {
                    if s > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect())
    }
}

/// Ridge-regularised least squares on one-hot targets. The bias is not
/// penalised.
pub fn probe_fit(features: &Matrix, labels: &[usize], ridge: f64) -> Result<ProbeModel> {
    let (n, p) = features.shape();
    if labels.len() != n {
        return Err(Error::dim(format!("{n} feature rows, {} labels", labels.len())));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::param(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(Error::Data(format!("label {bad} outside 0..{NUM_CLASSES}")));
    }
    for class in 0..NUM_CLASSES {
        if !labels.contains(&class) {
            return Err(Error::Data(format!("class {class} missing from probe training labels")));
        }
    }
    if !features.is_finite() {
        return Err(Error::Input("probe features are not finite".into()));
    }
    let x = features.with_constant_column(1.0);
    let targets = Matrix::from_fn(n, NUM_CLASSES, |r, c| if labels[r] == c { 1.0 } else { 0.0 });
    let mut gram = x.t_matmul(&x)?;
    for k in 0..p {
        gram[(k, k)] += ridge * n as f64;
    }
    let gram = Matrix::from_fn(p + 1, p + 1, |r, c| 0.5 * (gram[(r, c)] + gram[(c, r)]));
    let rhs = x.t_matmul(&targets)?;
    let eig = sym_eig(&gram)?;
    let top = eig.values.last().copied().unwrap_or(0.0);
    if top.is_nan() || top <= 0.0 || eig.values[0] <= 1e-14 * top {
        return Err(Error::RankDeficient { which: "probe feature" });
    }
    // W = V Λ⁻¹ Vᵀ XᵀY
    let projected = eig.vectors.t_matmul(&rhs)?;
    let scaled = Matrix::from_fn(p + 1, NUM_CLASSES, |r, c| projected[(r, c)] / eig.values[r]);
    Ok(ProbeModel { weights: eig.vectors.matmul(&scaled)? })
}

/// Fraction of rows whose predicted class matches the label.
pub fn probe_accuracy(model: &ProbeModel, features: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != features.rows() {
        return Err(Error::dim(format!("{} feature rows, {} labels", features.rows(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::param("accuracy of an empty set"));
    }
    let predicted = model.predict(features)?;
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Principal-angle cosines between the spans of `learned` and `oracle`,
/// optionally with a constant column appended to both.
pub fn align(learned: &Matrix, oracle: &Matrix, append_constant: bool) -> Result<Vec<f64>> {
    if learned.rows() != oracle.rows() {
        return Err(Error::dim(format!("learned has {} rows, oracle {}", learned.rows(), oracle.rows())));
    }
    if append_constant {
        principal_angle_cosines(&learned.with_constant_column(1.0), &oracle.with_constant_column(1.0))
    } else {
        principal_angle_cosines(learned, oracle)
    }
}

/// Distance from each grid point to its nearest data point.
pub fn distances_to_data(grid: &Matrix, data: &Matrix) -> Result<Vec<f64>> {
    if grid.cols() != data.cols() {
        return Err(Error::dim(format!("grid is {}-D, data {}-D", grid.cols(), data.cols())));
    }
    if data.rows() == 0 {
        return Err(Error::param("no data points"));
    }
    Ok((0..grid.rows())
        .map(|g| {
            let q = grid.row(g);
            (0..data.rows())
                .map(|i| data.row(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffManifold {
    pub margin: f64,
    pub on_mean: f64,
    pub off_mean: f64,
    pub on_count: usize,
    pub off_count: usize,
}

/// Mean feature norm over grid points within `margin` of the data versus
/// those further out.
pub fn off_manifold_magnitude(net: &Network, grid: &Matrix, data: &Matrix, margin: f64) -> Result<OffManifold> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::param(format!("margin must be positive, got {margin}")));
    }
    let distances = distances_to_data(grid, data)?;
    let phi = net.forward_batch(grid)?;
    let (mut on_sum, mut off_sum, mut on_count, mut off_count) = (0.0, 0.0, 0usize, 0usize);
    for (r, &d) in distances.iter().enumerate() {
        let magnitude = crate::linalg::norm(phi.row(r));
        if d <= margin {
            on_sum += magnitude;
            on_count += 1;
        } else {
            off_sum += magnitude;
            off_count += 1;
        }
    }
    if on_count == 0 {
        return Err(Error::Diagnostic(format!("no grid point lies within {margin} of the data (on-manifold side empty)")));
    }
    if off_count == 0 {
        return Err(Error::Diagnostic(format!("every grid point lies within {margin} of the data (off-manifold side empty)")));
    }
    Ok(OffManifold { margin, on_mean: on_sum / on_count as f64, off_mean: off_sum / off_count as f64, on_count, off_count })
}
