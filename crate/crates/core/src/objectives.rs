//! Variation energies (augmentation, graph Laplacian, Dirichlet), the
//! orthonormality penalty and the smoothed-energy diagnostic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{Network, ParamGradient, Tape};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Squared feature distance to a Gaussian augmentation.
    Ssl,
    /// Kernel-weighted finite differences over sample pairs.
    Graph,
    /// Mean squared Frobenius norm of the input Jacobian.
    Dirichlet,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] = [ObjectiveKind::Ssl, ObjectiveKind::Graph, ObjectiveKind::Dirichlet];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Ssl => "ssl",
            ObjectiveKind::Graph => "graph",
            ObjectiveKind::Dirichlet => "dirichlet",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssl" => Ok(ObjectiveKind::Ssl),
            "graph" | "graph_laplacian" | "laplacian" => Ok(ObjectiveKind::Graph),
            "dirichlet" | "energy" => Ok(ObjectiveKind::Dirichlet),
            other => Err(Error::param(format!("unknown objective '{other}' (expected ssl, graph or dirichlet)"))),
        }
    }
}

/// Whether the penalty's second-moment matrix is taken about the origin or
/// about the feature mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Uncentered,
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyValue {
    pub objective: f64,
    pub penalty: f64,
    pub total: f64,
    pub lambda: f64,
}

impl EnergyValue {
    pub fn new(objective: f64, penalty: f64, lambda: f64) -> Self {
        EnergyValue { objective, penalty, total: objective + lambda * penalty, lambda }
    }
}

/// `exp(−‖x − y‖² / σ²)`
pub fn gaussian_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if x.len() != y.len() {
        return Err(Error::dim(format!("points of dimension {} and {}", x.len(), y.len())));
    }
    Ok(kernel_unchecked(x, y, sigma))
}

#[inline]
fn kernel_unchecked(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (sigma * sigma)).exp()
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("kernel scale must be positive and finite, got {sigma}")))
    }
}

/// Dense Gaussian kernel matrix over the rows of `points` (unit diagonal).
pub fn kernel_matrix(points: &Matrix, sigma: f64) -> Result<Matrix> {
    check_sigma(sigma)?;
    let n = points.rows();
    let mut w = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let k = kernel_unchecked(points.row(i), points.row(j), sigma);
            w[(i, j)] = k;
            w[(j, i)] = k;
        }
    }
    Ok(w)
}

fn check_kernel(embedding: &Matrix, kernel: &Matrix) -> Result<()> {
    let n = embedding.rows();
    if kernel.shape() != (n, n) {
        return Err(Error::dim(format!("kernel {:?} for {n} embedded points", kernel.shape())));
    }
    if kernel.asymmetry() > 1e-12 * kernel.max_abs().max(1.0) {
        return Err(Error::Input("kernel matrix is not symmetric".into()));
    }
    if kernel.as_slice().iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::Input("kernel matrix has negative or non-finite entries".into()));
    }
    if (0..n).any(|i| (kernel[(i, i)] - 1.0).abs() > 1e-12) {
        return Err(Error::Input("kernel matrix diagonal must be 1".into()));
    }
    Ok(())
}

/// `(1/n²) Σ_{i,j} W_ij ‖Φ_i − Φ_j‖²`, summed pair by pair.
pub fn graph_energy(embedding: &Matrix, kernel: &Matrix) -> Result<f64> {
    check_kernel(embedding, kernel)?;
    let n = embedding.rows();
    let mut total = 0.0;
    for i in 0..n {
        let phi_i = embedding.row(i);
        let mut row_sum = 0.0;
        for j in 0..n {
            let d2: f64 = phi_i.iter().zip(embedding.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            row_sum += kernel[(i, j)] * d2;
        }
        total += row_sum;
    }
    Ok(total / (n * n) as f64)
}

/// `L = diag(W·1) − W`
pub fn laplacian_from_kernel(kernel: &Matrix) -> Matrix {
    let n = kernel.rows();
    let mut l = kernel.scaled(-1.0);
    for i in 0..n {
        let degree: f64 = kernel.row(i).iter().sum();
        l[(i, i)] += degree;
    }
    l
}

/// Graph energy through the Laplacian, `(2/n²)·tr(ΦᵀLΦ)`.
pub fn graph_energy_trace(embedding: &Matrix, kernel: &Matrix) -> Result<f64> {
    check_kernel(embedding, kernel)?;
    let n = embedding.rows() as f64;
    let lphi = laplacian_from_kernel(kernel).matmul(embedding)?;
    let quad: f64 = embedding.as_slice().iter().zip(lphi.as_slice()).map(|(a, b)| a * b).sum();
    Ok(2.0 * quad / (n * n))
}

/// Graph energy with its gradient `(4/n²)·LΦ` with respect to the embedding.
pub fn graph_energy_with_embedding_grad(embedding: &Matrix, kernel: &Matrix) -> Result<(f64, Matrix)> {
    let value = graph_energy(embedding, kernel)?;
    let (n, p) = embedding.shape();
    let scale = 4.0 / (n * n) as f64;
    // (LΦ)_i = Σ_j W_ij (Φ_i − Φ_j), exactly zero on constant rows.
    let mut grad = Matrix::zeros(n, p);
    for i in 0..n {
        let phi_i = embedding.row(i);
        let w_i = kernel.row(i);
        let g = grad.row_mut(i);
        for j in 0..n {
            let w = w_i[j];
            for ((gk, a), b) in g.iter_mut().zip(phi_i).zip(embedding.row(j)) {
                *gk += w * (a - b);
            }
        }
        g.iter_mut().for_each(|x| *x *= scale);
    }
    Ok((value, grad))
}

fn second_moment(embedding: &Matrix) -> Matrix {
    let n = embedding.rows() as f64;
    embedding.t_matmul(embedding).unwrap().scaled(1.0 / n)
}

/// `‖(1/n) ΦᵀΦ − I‖²_F` and its gradient `(4/n)·Φ(C − I)`.
pub fn orthogonality_penalty(embedding: &Matrix) -> Result<(f64, Matrix)> {
    let (n, p) = embedding.shape();
    if n < p || n == 0 {
        return Err(Error::param(format!("orthonormality needs n >= p, got n={n}, p={p}")));
    }
    let residual = second_moment(embedding).sub(&Matrix::identity(p))?;
    let value = residual.as_slice().iter().map(|r| r * r).sum();
    let grad = embedding.matmul(&residual)?.scaled(4.0 / n as f64);
    Ok((value, grad))
}

/// The penalty applied to mean-centred features: constant offsets of φ are
/// neither penalised nor rewarded.
pub fn centered_orthogonality_penalty(embedding: &Matrix) -> Result<(f64, Matrix)> {
    let (n, p) = embedding.shape();
    if n <= p {
        return Err(Error::param(format!("centred orthonormality needs n > p, got n={n}, p={p}")));
    }
    // The centring projector is idempotent and the gradient of the inner
    // penalty already has zero column sums, so no second projection is needed.
    orthogonality_penalty(&embedding.centered())
}

pub fn penalty(kind: PenaltyKind, embedding: &Matrix) -> Result<(f64, Matrix)> {
    match kind {
        PenaltyKind::Uncentered => orthogonality_penalty(embedding),
        PenaltyKind::Centered => centered_orthogonality_penalty(embedding),
    }
}

/// Empirical `(1/n) Σ_i ‖d_i Φ_i − (1/n) Σ_j W_ij Φ_j‖²` with
/// `d_i = (1/n) Σ_j W_ij`: a kernel-smoothed, degree-reweighted variation.
pub fn smoothed_energy(embedding: &Matrix, points: &Matrix, sigma: f64) -> Result<f64> {
    let n = points.rows();
    if n < 2 {
        return Err(Error::param("smoothed energy needs at least two points"));
    }
    if embedding.rows() != n {
        return Err(Error::dim(format!("{} embedded rows for {n} points", embedding.rows())));
    }
    let w = kernel_matrix(points, sigma)?;
    let smoothed = w.matmul(embedding)?;
    let nf = n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let degree: f64 = w.row(i).iter().sum::<f64>() / nf;
        total += embedding
            .row(i)
            .iter()
            .zip(smoothed.row(i))
            .map(|(phi, s)| (degree * phi - s / nf).powi(2))
            .sum::<f64>();
    }
    Ok(total / nf)
}

fn check_batch(batch: &Matrix, min: usize) -> Result<()> {
    if batch.rows() < min {
        return Err(Error::param(format!("batch needs at least {min} points, got {}", batch.rows())));
    }
    Ok(())
}

/// Draws one standard-normal perturbation per row.
pub fn draw_augmentation(rng: &mut Rng, rows: usize, dim: usize) -> Matrix {
    Matrix::from_fn(rows, dim, |_, _| rng.normal())
}

/// Augmentation energy with fresh Gaussian perturbations drawn from `rng`.
pub fn ssl_energy(net: &Network, batch: &Matrix, sigma: f64, rng: &mut Rng) -> Result<(f64, ParamGradient)> {
    check_batch(batch, 1)?;
    let xi = draw_augmentation(rng, batch.rows(), batch.cols());
    ssl_energy_with_noise(net, batch, sigma, &xi)
}

/// `(1/m) Σ_i ‖φ(x_i) − φ(x_i + σ ξ_i)‖²` for the given perturbations ξ.
pub fn ssl_energy_with_noise(net: &Network, batch: &Matrix, sigma: f64, xi: &Matrix) -> Result<(f64, ParamGradient)> {
    let terms = batch_terms(net, Objective::Ssl { sigma, xi }, batch, 1.0, None)?;
    Ok((terms.objective, terms.grad))
}

/// Graph energy of `φ` on the batch, kernel built from the batch itself.
pub fn graph_energy_grad(net: &Network, batch: &Matrix, sigma: f64) -> Result<(f64, ParamGradient)> {
    let terms = batch_terms(net, Objective::Graph { sigma }, batch, 1.0, None)?;
    Ok((terms.objective, terms.grad))
}

/// `(1/m) Σ_i ‖Dφ(x_i)‖²_F`
pub fn dirichlet_energy(net: &Network, batch: &Matrix) -> Result<(f64, ParamGradient)> {
    let terms = batch_terms(net, Objective::Dirichlet, batch, 1.0, None)?;
    Ok((terms.objective, terms.grad))
}

/// One objective, with whatever per-call data it needs.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Ssl { sigma: f64, xi: &'a Matrix },
    Graph { sigma: f64 },
    Dirichlet,
    /// No variation term; only the penalty is optimised.
    None,
}

#[derive(Debug, Clone)]
pub struct BatchTerms {
    pub objective: f64,
    pub penalty: f64,
    /// `objective_weight·∇E + penalty_weight·∇Ω`
    pub grad: ParamGradient,
}

/// Penalty settings for [`batch_terms`]; the penalty is always evaluated on
/// the clean batch as a whole.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyTerm {
    pub kind: PenaltyKind,
    pub weight: f64,
}

/// Objective and penalty on one batch, with a single reverse pass for the
/// weighted sum of their gradients.
pub fn batch_terms(
    net: &Network,
    objective: Objective<'_>,
    batch: &Matrix,
    objective_weight: f64,
    penalty_term: Option<PenaltyTerm>,
) -> Result<BatchTerms> {
    let m = batch.rows();
    let min_batch = match objective {
        Objective::Graph { .. } => 2,
        _ => 1,
    };
    check_batch(batch, min_batch)?;
    let p = net.output_dim();

    let add_penalty = |phi: &Matrix, adjoint: &mut Matrix| -> Result<f64> {
        match penalty_term {
            Some(term) => {
                let (value, grad) = penalty(term.kind, phi)?;
                adjoint.axpy(term.weight, &grad);
                Ok(value)
            }
            None => Ok(0.0),
        }
    };

    match objective {
        Objective::Ssl { sigma, xi } => {
            check_sigma(sigma)?;
            if xi.shape() != batch.shape() {
                return Err(Error::dim(format!("perturbations {:?} for batch {:?}", xi.shape(), batch.shape())));
            }
            let mut stacked = Matrix::zeros(2 * m, batch.cols());
            stacked.as_mut_slice()[..batch.as_slice().len()].copy_from_slice(batch.as_slice());
            for i in 0..m {
                for (k, v) in stacked.row_mut(m + i).iter_mut().enumerate() {
                    *v = batch[(i, k)] + sigma * xi[(i, k)];
                }
            }
            let tape = net.record(&stacked, false)?;
            let out = tape.outputs();
            let mut value = 0.0;
            let mut adjoint = Matrix::zeros(2 * m, p);
            let scale = 2.0 * objective_weight / m as f64;
            for i in 0..m {
                for k in 0..p {
                    let diff = out[(i, k)] - out[(m + i, k)];
                    value += diff * diff;
                    adjoint[(i, k)] = scale * diff;
                    adjoint[(m + i, k)] = -scale * diff;
                }
            }
            let phi = Matrix::from_vec(m, p, out.as_slice()[..m * p].to_vec())?;
            let mut clean_adjoint = Matrix::zeros(m, p);
            let penalty_value = add_penalty(&phi, &mut clean_adjoint)?;
            for (a, c) in adjoint.as_mut_slice()[..m * p].iter_mut().zip(clean_adjoint.as_slice()) {
                *a += c;
            }
            let grad = net.backward(&tape, &adjoint, None)?;
            Ok(BatchTerms { objective: value / m as f64, penalty: penalty_value, grad })
        }
        Objective::Graph { sigma } => {
            let tape = net.record(batch, false)?;
            let phi = tape.outputs();
            let kernel = kernel_matrix(batch, sigma)?;
            let (value, grad_phi) = graph_energy_with_embedding_grad(&phi, &kernel)?;
            let mut adjoint = grad_phi.scaled(objective_weight);
            let penalty_value = add_penalty(&phi, &mut adjoint)?;
            let grad = net.backward(&tape, &adjoint, None)?;
            Ok(BatchTerms { objective: value, penalty: penalty_value, grad })
        }
        Objective::Dirichlet => {
            let tape = net.record(batch, true)?;
            let phi = tape.outputs();
            let (value, blocks) = dirichlet_adjoints(&tape, net.input_dim(), 2.0 * objective_weight / m as f64);
            let mut adjoint = Matrix::zeros(m, p);
            let penalty_value = add_penalty(&phi, &mut adjoint)?;
            let grad = net.backward(&tape, &adjoint, Some(&blocks))?;
            Ok(BatchTerms { objective: value / m as f64, penalty: penalty_value, grad })
        }
        Objective::None => {
            let tape = net.record(batch, false)?;
            let phi = tape.outputs();
            let mut adjoint = Matrix::zeros(m, p);
            let penalty_value = add_penalty(&phi, &mut adjoint)?;
            let grad = net.backward(&tape, &adjoint, None)?;
            Ok(BatchTerms { objective: 0.0, penalty: penalty_value, grad })
        }
    }
}

/// Sum of `‖Dφ(x_i)‖²_F` over the tape and the Jacobian-block adjoints
/// `scale · J_k`.
fn dirichlet_adjoints(tape: &Tape, input_dim: usize, scale: f64) -> (f64, Vec<Matrix>) {
    let mut value = 0.0;
    let blocks = (0..input_dim)
        .map(|k| {
            let jk = tape.jacobian_block(k);
            value += jk.as_slice().iter().map(|x| x * x).sum::<f64>();
            jk.scaled(scale)
        })
        .collect();
    (value, blocks)
}

/// Objective value without gradients (no reverse pass).
pub fn objective_value(net: &Network, objective: Objective<'_>, batch: &Matrix) -> Result<f64> {
    match objective {
        Objective::Ssl { sigma, xi } => {
            check_sigma(sigma)?;
            check_batch(batch, 1)?;
            let perturbed = batch.add(&xi.scaled(sigma))?;
            let a = net.forward_batch(batch)?;
            let b = net.forward_batch(&perturbed)?;
            Ok(a.sub(&b)?.frobenius_norm().powi(2) / batch.rows() as f64)
        }
        Objective::Graph { sigma } => {
            check_batch(batch, 2)?;
            let phi = net.forward_batch(batch)?;
            graph_energy(&phi, &kernel_matrix(batch, sigma)?)
        }
        Objective::Dirichlet => {
            check_batch(batch, 1)?;
            let tape = net.record(batch, true)?;
            Ok(dirichlet_adjoints(&tape, net.input_dim(), 0.0).0 / batch.rows() as f64)
        }
        Objective::None => Ok(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;

    fn affine(w: Matrix, b: Vec<f64>) -> Network {
        Network::from_layers(Activation::Tanh, &[(w, b)]).unwrap()
    }

    fn random_points(n: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        Matrix::from_fn(n, 2, |_, _| rng.normal())
    }

    fn random_net(p: usize, seed: u64) -> Network {
        let cfg = crate::network::NetworkConfig { output_dim: p, hidden_layers: 2, hidden_width: 12, init_seed: seed, ..Default::default() };
        let mut net = Network::init(&cfg).unwrap();
        let mut rng = Rng::new(seed + 1000);
        // Non-zero biases so derivatives are generic.
        let n = net.num_params();
        for i in 0..n {
            net.params_mut()[i] += 0.05 * rng.normal();
        }
        net
    }

    fn fd_check(net: &Network, f: impl Fn(&Network) -> f64, grad: &ParamGradient, tol: f64) {
        let h = 1e-5;
        let mut rng = Rng::new(99);
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for _ in 0..20 {
            let i = (rng.uniform(0.0, 1.0) * net.num_params() as f64) as usize;
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            diff += (fd - grad.as_slice()[i]).powi(2);
            scale = scale.max(fd.abs()).max(grad.as_slice()[i].abs());
        }
        assert!(diff.sqrt() <= tol * scale * 20f64.sqrt(), "fd mismatch {} vs scale {scale}", diff.sqrt());
    }

    #[test]
    fn kernel_values() {
        assert_eq!(gaussian_kernel(&[0.3, 0.4], &[0.3, 0.4], 0.7).unwrap(), 1.0);
        assert!((gaussian_kernel(&[0.0, 0.0], &[1.0, 0.0], 1.0).unwrap() - 0.36787944).abs() < 1e-8);
        assert!((gaussian_kernel(&[0.0, 0.0], &[0.0, 1.0], 0.5).unwrap() - 0.01831564).abs() < 1e-8);
        assert!(matches!(gaussian_kernel(&[0.0], &[1.0], 0.0), Err(Error::Parameter(_))));
        assert!(matches!(gaussian_kernel(&[0.0], &[1.0], -1.0), Err(Error::Parameter(_))));
        let a = [0.1, -2.0];
        let b = [1.3, 0.4];
        assert_eq!(gaussian_kernel(&a, &b, 0.8).unwrap(), gaussian_kernel(&b, &a, 0.8).unwrap());
    }

    #[test]
    fn graph_energy_closed_form_two_points() {
        let e = (-1.0f64).exp();
        let w = Matrix::from_rows(&[[1.0, e], [e, 1.0]]).unwrap();
        let phi = Matrix::from_rows(&[[1.0], [-1.0]]).unwrap();
        assert!((graph_energy(&phi, &w).unwrap() - 0.73575888).abs() < 1e-8);
        let constant = Matrix::from_rows(&[[2.0, 1.0], [2.0, 1.0]]).unwrap();
        assert_eq!(graph_energy(&constant, &w).unwrap(), 0.0);
    }

    #[test]
    fn graph_energy_trace_identity() {
        for seed in 0..5 {
            let pts = random_points(30, seed);
            let w = kernel_matrix(&pts, 0.9).unwrap();
            let mut rng = Rng::new(seed + 50);
            let phi = Matrix::from_fn(30, 3, |_, _| rng.normal());
            let direct = graph_energy(&phi, &w).unwrap();
            let via_trace = graph_energy_trace(&phi, &w).unwrap();
            assert!((direct - via_trace).abs() < 1e-10 * direct.max(1.0));
        }
    }

    #[test]
    fn graph_energy_embedding_gradient_matches_fd() {
        let pts = random_points(12, 1);
        let w = kernel_matrix(&pts, 1.0).unwrap();
        let mut rng = Rng::new(2);
        let phi = Matrix::from_fn(12, 2, |_, _| rng.normal());
        let (_, grad) = graph_energy_with_embedding_grad(&phi, &w).unwrap();
        let h = 1e-6;
        for idx in [0, 5, 13, 23] {
            let mut plus = phi.clone();
            plus.as_mut_slice()[idx] += h;
            let mut minus = phi.clone();
            minus.as_mut_slice()[idx] -= h;
            let fd = (graph_energy(&plus, &w).unwrap() - graph_energy(&minus, &w).unwrap()) / (2.0 * h);
            assert!((fd - grad.as_slice()[idx]).abs() < 1e-7);
        }
    }

    #[test]
    fn graph_energy_rejects_bad_kernels() {
        let phi = Matrix::zeros(2, 1);
        let asym = Matrix::from_rows(&[[1.0, 0.2], [0.3, 1.0]]).unwrap();
        assert!(matches!(graph_energy(&phi, &asym), Err(Error::Input(_))));
        let neg = Matrix::from_rows(&[[1.0, -0.2], [-0.2, 1.0]]).unwrap();
        assert!(matches!(graph_energy(&phi, &neg), Err(Error::Input(_))));
        let diag = Matrix::from_rows(&[[0.5, 0.2], [0.2, 1.0]]).unwrap();
        assert!(matches!(graph_energy(&phi, &diag), Err(Error::Input(_))));
    }

    #[test]
    fn graph_energy_vanishes_exactly_on_block_constants() {
        // Two components: {0,1,2} and {3,4}.
        let mut w = Matrix::identity(5);
        for (i, j, v) in [(0, 1, 0.7), (1, 2, 0.4), (0, 2, 0.1), (3, 4, 0.9)] {
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
        let block_constant = Matrix::from_rows(&[[1.0, -2.0], [1.0, -2.0], [1.0, -2.0], [5.0, 0.5], [5.0, 0.5]]).unwrap();
        assert_eq!(graph_energy(&block_constant, &w).unwrap(), 0.0);
        let mut varied = block_constant.clone();
        varied[(1, 0)] += 0.01;
        assert!(graph_energy(&varied, &w).unwrap() > 0.0);
    }

    #[test]
    fn kernel_limit_gives_twice_the_covariance_trace() {
        let pts = random_points(25, 4);
        let mut rng = Rng::new(5);
        let phi = Matrix::from_fn(25, 3, |_, _| rng.normal());
        let w = kernel_matrix(&pts, 1e8).unwrap();
        let centered = phi.centered();
        let cov_trace = centered.frobenius_norm().powi(2) / 25.0;
        assert!((graph_energy(&phi, &w).unwrap() - 2.0 * cov_trace).abs() < 1e-9);
    }

    #[test]
    fn penalty_closed_forms() {
        let n = 6;
        // √n times the first two columns of an orthogonal matrix.
        let q = crate::linalg::sym_eig(&{
            let mut rng = Rng::new(3);
            let g = Matrix::from_fn(n, n, |_, _| rng.normal());
            g.add(&g.transpose()).unwrap()
        })
        .unwrap()
        .vectors;
        let phi = q.select_columns(&[0, 1]).scaled((n as f64).sqrt());
        assert!(orthogonality_penalty(&phi).unwrap().0 < 1e-24);
        let (collapse, _) = orthogonality_penalty(&Matrix::zeros(n, 3)).unwrap();
        assert_eq!(collapse, 3.0);
        let e1 = Matrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { 0.0 });
        assert!((orthogonality_penalty(&e1).unwrap().0 - 1.0).abs() < 1e-15);
        assert!(matches!(orthogonality_penalty(&Matrix::zeros(2, 3)), Err(Error::Parameter(_))));
    }

    #[test]
    fn penalty_gradients_match_fd() {
        let mut rng = Rng::new(8);
        let phi = Matrix::from_fn(9, 3, |_, _| rng.normal());
        for kind in [PenaltyKind::Uncentered, PenaltyKind::Centered] {
            let (_, grad) = penalty(kind, &phi).unwrap();
            let h = 1e-6;
            for idx in 0..27 {
                let mut plus = phi.clone();
                plus.as_mut_slice()[idx] += h;
                let mut minus = phi.clone();
                minus.as_mut_slice()[idx] -= h;
                let fd = (penalty(kind, &plus).unwrap().0 - penalty(kind, &minus).unwrap().0) / (2.0 * h);
                assert!((fd - grad.as_slice()[idx]).abs() < 1e-6 * fd.abs().max(1.0), "{kind:?} {idx}");
            }
        }
    }

    #[test]
    fn centered_penalty_ignores_offsets() {
        let mut rng = Rng::new(4);
        let phi = Matrix::from_fn(20, 2, |_, _| rng.normal());
        let shifted = Matrix::from_fn(20, 2, |r, c| phi[(r, c)] + [3.0, -7.0][c]);
        let a = centered_orthogonality_penalty(&phi).unwrap().0;
        let b = centered_orthogonality_penalty(&shifted).unwrap().0;
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn zero_penalty_means_unit_singular_values() {
        let n = 8;
        let mut rng = Rng::new(21);
        let g = Matrix::from_fn(n, n, |_, _| rng.normal());
        let q = crate::linalg::sym_eig(&g.add(&g.transpose()).unwrap()).unwrap().vectors;
        let phi = q.select_columns(&[1, 4, 6]).scaled((n as f64).sqrt());
        assert!(orthogonality_penalty(&phi).unwrap().0 < 1e-24);
        let c = phi.t_matmul(&phi).unwrap().scaled(1.0 / n as f64);
        let eig = crate::linalg::sym_eig(&c).unwrap();
        assert!(eig.values.iter().all(|v| (v.sqrt() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn smoothed_energy_cases() {
        let w = 0.3f64;
        // Points placed so the kernel weight between them is w.
        let sigma = 1.0;
        let dist = (-w.ln()).sqrt();
        let pts = Matrix::from_rows(&[[0.0, 0.0], [dist, 0.0]]).unwrap();
        let phi = Matrix::from_rows(&[[1.0], [-1.0]]).unwrap();
        // Hand computation: both terms equal ±w, so the mean is w².
        assert!((smoothed_energy(&phi, &pts, sigma).unwrap() - w * w).abs() < 1e-14);

        let pts = random_points(10, 7);
        let constant = Matrix::from_fn(10, 2, |_, c| [1.5, -0.5][c]);
        assert!(smoothed_energy(&constant, &pts, 0.8).unwrap().abs() < 1e-28);
        let mut rng = Rng::new(1);
        let phi = Matrix::from_fn(10, 2, |_, _| rng.normal());
        assert!(smoothed_energy(&phi, &pts, 1e-6).unwrap().abs() < 1e-28);
        assert!(smoothed_energy(&Matrix::zeros(1, 1), &Matrix::zeros(1, 2), 1.0).is_err());
    }

    #[test]
    fn ssl_closed_form_and_constant_map() {
        let net = affine(Matrix::identity(2), vec![0.0, 0.0]);
        let batch = Matrix::from_rows(&[[0.5, -0.2]]).unwrap();
        let xi = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let (value, _) = ssl_energy_with_noise(&net, &batch, 0.1, &xi).unwrap();
        assert!((value - 0.01).abs() < 1e-15);

        let mut constant = random_net(3, 1);
        constant.zero_weights();
        let mut rng = Rng::new(0);
        let (value, grad) = ssl_energy(&constant, &random_points(16, 2), 0.3, &mut rng).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(grad.norm(), 0.0);
        assert!(matches!(ssl_energy(&constant, &Matrix::zeros(0, 2), 0.3, &mut rng), Err(Error::Parameter(_))));
    }

    #[test]
    fn ssl_redraws_noise_each_call() {
        let net = random_net(2, 3);
        let pts = random_points(8, 3);
        let mut rng = Rng::new(10);
        let (a, _) = ssl_energy(&net, &pts, 0.2, &mut rng).unwrap();
        let (b, _) = ssl_energy(&net, &pts, 0.2, &mut rng).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn energy_gradients_match_fd() {
        let net = random_net(3, 7);
        let pts = random_points(10, 11);
        let mut rng = Rng::new(12);
        let xi = draw_augmentation(&mut rng, 10, 2);

        let (_, g) = ssl_energy_with_noise(&net, &pts, 0.3, &xi).unwrap();
        fd_check(&net, |n| ssl_energy_with_noise(n, &pts, 0.3, &xi).unwrap().0, &g, 1e-5);

        let (_, g) = graph_energy_grad(&net, &pts, 0.8).unwrap();
        fd_check(&net, |n| graph_energy_grad(n, &pts, 0.8).unwrap().0, &g, 1e-5);

        let (_, g) = dirichlet_energy(&net, &pts).unwrap();
        fd_check(&net, |n| dirichlet_energy(n, &pts).unwrap().0, &g, 1e-4);
    }

    #[test]
    fn combined_terms_gradient_matches_fd() {
        let net = random_net(3, 17);
        let pts = random_points(12, 18);
        let term = PenaltyTerm { kind: PenaltyKind::Centered, weight: 0.7 };
        for objective in [Objective::Graph { sigma: 0.9 }, Objective::Dirichlet, Objective::None] {
            let t = batch_terms(&net, objective, &pts, 1.3, Some(term)).unwrap();
            let f = |n: &Network| {
                let t = batch_terms(n, objective, &pts, 1.3, Some(term)).unwrap();
                1.3 * t.objective + 0.7 * t.penalty
            };
            fd_check(&net, f, &t.grad, 1e-4);
        }
    }

    #[test]
    fn value_only_paths_agree() {
        let net = random_net(2, 5);
        let pts = random_points(9, 6);
        let mut rng = Rng::new(7);
        let xi = draw_augmentation(&mut rng, 9, 2);
        let pairs = [
            (objective_value(&net, Objective::Ssl { sigma: 0.2, xi: &xi }, &pts).unwrap(), ssl_energy_with_noise(&net, &pts, 0.2, &xi).unwrap().0),
            (objective_value(&net, Objective::Graph { sigma: 0.5 }, &pts).unwrap(), graph_energy_grad(&net, &pts, 0.5).unwrap().0),
            (objective_value(&net, Objective::Dirichlet, &pts).unwrap(), dirichlet_energy(&net, &pts).unwrap().0),
        ];
        for (a, b) in pairs {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn affine_dirichlet_is_weight_norm() {
        let w = Matrix::from_rows(&[[1.0, 2.0], [-0.5, 0.25]]).unwrap();
        let net = affine(w.clone(), vec![0.3, 0.1]);
        let (value, _) = dirichlet_energy(&net, &random_points(7, 1)).unwrap();
        assert!((value - w.frobenius_norm().powi(2)).abs() < 1e-12);
        let mut constant = net.clone();
        constant.zero_weights();
        assert_eq!(dirichlet_energy(&constant, &random_points(3, 1)).unwrap().0, 0.0);
    }

    #[test]
    fn graph_batch_needs_two_points() {
        let net = random_net(2, 1);
        assert!(matches!(graph_energy_grad(&net, &random_points(1, 0), 1.0), Err(Error::Parameter(_))));
        let mut constant = net.clone();
        constant.zero_weights();
        let (value, grad) = graph_energy_grad(&constant, &random_points(5, 0), 1.0).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(grad.norm(), 0.0);
    }
}
