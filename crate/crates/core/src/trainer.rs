//! Plain SGD on `E(φ) + λ·Ω(φ)` with large batches.

use std::fmt;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::fmt_f64;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::Network;
use crate::objectives::{self, batch_terms, draw_augmentation, EnergyValue, Objective, ObjectiveKind, PenaltyKind, PenaltyTerm};
use crate::rng::{streams, Rng};

/// Smallest batch the penalty estimate is trusted on.
pub const MIN_BATCH: usize = 64;
/// Floor on Ω when balancing λ against the objective.
pub const LAMBDA_EPSILON: f64 = 1e-8;
pub const LAMBDA_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Fixed(f64),
    /// Balance objective and penalty at initialisation.
    Auto,
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Fixed(v) => write!(f, "{v}"),
            Lambda::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for Lambda {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Lambda::Auto);
        }
        let v: f64 = s.parse().map_err(|_| Error::param(format!("lambda must be a number or 'auto', got '{s}'")))?;
        Ok(Lambda::Fixed(v))
    }
}

impl Serialize for Lambda {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Lambda::Fixed(v) => serializer.serialize_f64(*v),
            Lambda::Auto => serializer.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for Lambda {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(v) => Ok(Lambda::Fixed(v)),
            Raw::Int(v) => Ok(Lambda::Fixed(v as f64)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub lambda: Lambda,
    pub sigma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fractions of `epochs` at which the learning rate is multiplied by
    /// `lr_decay_factor`.
    pub lr_decay_points: Vec<f64>,
    pub lr_decay_factor: f64,
    /// Divide the step by λ so the penalty moves at `learning_rate`.
    pub divide_lr_by_lambda: bool,
    /// Optimise Ω alone (the objective is neither evaluated nor followed).
    pub penalty_only: bool,
    pub penalty: PenaltyKind,
    /// Rescale each batch gradient to at most this norm; 0 disables.
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_objective(ObjectiveKind::Dirichlet)
    }
}

/// λ that keeps the penalty dominant for each energy's natural scale on
/// unit-variance features (SSL is the Dirichlet scale times σ², the graph
/// energy a further kernel-mass factor below that).
pub fn default_lambda(objective: ObjectiveKind) -> f64 {
    match objective {
        ObjectiveKind::Dirichlet => 30.0,
        ObjectiveKind::Ssl => 0.3,
        ObjectiveKind::Graph => 0.003,
    }
}

impl TrainConfig {
    pub fn for_objective(objective: ObjectiveKind) -> Self {
        TrainConfig {
            objective,
            lambda: Lambda::Fixed(default_lambda(objective)),
            sigma: 0.1,
            learning_rate: 0.1,
            epochs: 1000,
            batch_size: 128,
            seed: 0,
            lr_decay_points: vec![0.6, 0.8],
            lr_decay_factor: 0.3,
            divide_lr_by_lambda: true,
            penalty_only: false,
            penalty: PenaltyKind::Centered,
            max_grad_norm: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Lambda::Fixed(v) = self.lambda {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!("lambda must be finite and >= 0, got {v}")));
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size < MIN_BATCH {
            return Err(Error::param(format!("batch size must be at least {MIN_BATCH}, got {}", self.batch_size)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::param(format!("lr decay factor must lie in (0, 1), got {}", self.lr_decay_factor)));
        }
        if !(self.max_grad_norm >= 0.0 && self.max_grad_norm.is_finite()) {
            return Err(Error::param(format!("max gradient norm must be finite and >= 0, got {}", self.max_grad_norm)));
        }
        if self.lr_decay_points.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::param("lr decay points must be fractions in [0, 1]"));
        }
        Ok(())
    }

    /// Learning rate in force during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let progress = epoch as f64 / self.epochs.max(1) as f64;
        let decays = self.lr_decay_points.iter().filter(|&&p| progress >= p).count();
        self.learning_rate * self.lr_decay_factor.powi(decays as i32)
    }

    fn penalty_term(&self, weight: f64) -> PenaltyTerm {
        PenaltyTerm { kind: self.penalty, weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch means over the epoch.
    pub energy: EnergyValue,
    pub learning_rate: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub lambda: f64,
    pub records: Vec<EpochRecord>,
    /// Objective and penalty of the final network over the whole training set.
    pub final_energy: EnergyValue,
}

impl TrainHistory {
    /// `epoch,objective,penalty,total,lr,seconds`. Without `with_timing` the
    /// seconds column is written as 0 so the file is reproducible.
    pub fn write_csv(&self, path: &Path, with_timing: bool) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "epoch,objective,penalty,total,lr,seconds")?;
            for r in &self.records {
                let seconds = if with_timing { r.seconds } else { 0.0 };
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    r.epoch,
                    fmt_f64(r.energy.objective),
                    fmt_f64(r.energy.penalty),
                    fmt_f64(r.energy.total),
                    fmt_f64(r.learning_rate),
                    fmt_f64(seconds)
                )?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn total_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.seconds).sum()
    }
}

fn objective_for<'a>(kind: ObjectiveKind, sigma: f64, xi: Option<&'a Matrix>) -> Objective<'a> {
    match kind {
        ObjectiveKind::Ssl => Objective::Ssl { sigma, xi: xi.expect("augmentation drawn for ssl") },
        ObjectiveKind::Graph => Objective::Graph { sigma },
        ObjectiveKind::Dirichlet => Objective::Dirichlet,
    }
}

/// Objective and penalty of `net` over all of `points`, no gradients.
/// Augmentations for the SSL energy come from `rng`.
pub fn evaluate(net: &Network, points: &Matrix, config: &TrainConfig, lambda: f64, rng: &mut Rng) -> Result<EnergyValue> {
    let phi = net.forward_batch(points)?;
    let (penalty, _) = objectives::penalty(config.penalty, &phi)?;
    let objective = if config.penalty_only {
        0.0
    } else {
        let xi = (config.objective == ObjectiveKind::Ssl).then(|| draw_augmentation(rng, points.rows(), points.cols()));
        objectives::objective_value(net, objective_for(config.objective, config.sigma, xi.as_ref()), points)?
    };
    Ok(EnergyValue::new(objective, penalty, lambda))
}

/// `E(φ)/max(Ω(φ), ε)` at the given network, capped at [`LAMBDA_CAP`].
pub fn auto_lambda(net: &Network, points: &Matrix, config: &TrainConfig) -> Result<f64> {
    if config.penalty_only {
        return Ok(1.0);
    }
    let mut rng = Rng::substream(config.seed, streams::LAMBDA);
    let energy = evaluate(net, points, config, 0.0, &mut rng)?;
    Ok(lambda_from_ratio(energy.objective, energy.penalty))
}

pub fn lambda_from_ratio(objective: f64, penalty: f64) -> f64 {
    (objective / penalty.max(LAMBDA_EPSILON)).min(LAMBDA_CAP)
}

pub fn resolve_lambda(net: &Network, points: &Matrix, config: &TrainConfig) -> Result<f64> {
    match config.lambda {
        Lambda::Fixed(v) => Ok(v),
        Lambda::Auto => auto_lambda(net, points, config),
    }
}

/// Even partition of `order` into `ceil(n / batch_size)` batches.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let n = order.len();
    let count = n.div_ceil(batch_size).max(1);
    let (base, extra) = (n / count, n % count);
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for b in 0..count {
        let len = base + usize::from(b < extra);
        out.push(&order[start..start + len]);
        start += len;
    }
    out
}

/// Runs SGD and returns the trained network with its per-epoch history.
pub fn train(mut net: Network, points: &Matrix, config: &TrainConfig) -> Result<(Network, TrainHistory)> {
    config.validate()?;
    let n = points.rows();
    if n == 0 {
        return Err(Error::param("training set is empty"));
    }
    if points.cols() != net.input_dim() {
        return Err(Error::dim(format!("points have {} columns, network expects {}", points.cols(), net.input_dim())));
    }
    let batch_size = config.batch_size.min(n);
    if n <= net.output_dim() {
        return Err(Error::param(format!("{n} points cannot carry {} orthonormal features", net.output_dim())));
    }

    let lambda = resolve_lambda(&net, points, config)?;
    let step_scale = if config.divide_lr_by_lambda && lambda > 0.0 && !config.penalty_only { 1.0 / lambda } else { 1.0 };
    let objective_weight = if config.penalty_only { 0.0 } else { 1.0 };
    let penalty_weight = if config.penalty_only { 1.0 } else { lambda };

    let mut shuffle_rng = Rng::substream(config.seed, streams::SHUFFLE);
    let mut augment_rng = Rng::substream(config.seed, streams::AUGMENT);
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.learning_rate_at(epoch);
        shuffle_rng.shuffle(&mut order);
        let (mut obj_sum, mut pen_sum, mut count) = (0.0, 0.0, 0usize);
        for batch_idx in batches(&order, batch_size) {
            let batch = points.select_rows(batch_idx);
            let xi = (config.objective == ObjectiveKind::Ssl && !config.penalty_only)
                .then(|| draw_augmentation(&mut augment_rng, batch.rows(), batch.cols()));
            let objective = if config.penalty_only {
                Objective::None
            } else {
                objective_for(config.objective, config.sigma, xi.as_ref())
            };
            let penalty = (penalty_weight > 0.0 || config.penalty_only).then(|| config.penalty_term(penalty_weight));
            let mut terms = batch_terms(&net, objective, &batch, objective_weight, penalty)?;
            if !(terms.objective.is_finite() && terms.penalty.is_finite() && terms.grad.is_finite()) {
                return Err(Error::Divergence { epoch, reason: "non-finite loss or gradient".into() });
            }
            if config.max_grad_norm > 0.0 {
                let norm = terms.grad.norm() * step_scale;
                if norm > config.max_grad_norm {
                    terms.grad.scale(config.max_grad_norm / norm);
                }
            }
            net.apply_update(&terms.grad, lr * step_scale)
                .map_err(|_| Error::Divergence { epoch, reason: "parameters left the finite range".into() })?;
            obj_sum += terms.objective;
            pen_sum += terms.penalty;
            count += 1;
        }
        let energy = if penalty_weight > 0.0 || config.penalty_only {
            EnergyValue::new(obj_sum / count as f64, pen_sum / count as f64, penalty_weight)
        } else {
            // λ = 0: the penalty was not needed for the step, report it anyway.
            let phi = net.forward_batch(points)?;
            EnergyValue::new(obj_sum / count as f64, objectives::penalty(config.penalty, &phi)?.0, 0.0)
        };
        if !energy.total.is_finite() {
            return Err(Error::Divergence { epoch, reason: "non-finite epoch loss".into() });
        }
        records.push(EpochRecord { epoch, energy, learning_rate: lr, seconds: started.elapsed().as_secs_f64() });
    }
    let mut eval_rng = Rng::substream(config.seed, streams::EVAL);
    let final_energy = evaluate(&net, points, config, lambda, &mut eval_rng)?;
    Ok((net, TrainHistory { lambda, records, final_energy }))
}

/// Largest eigenvalue of the empirical feature covariance.
pub fn top_covariance_eigenvalue(net: &Network, points: &Matrix) -> Result<f64> {
    let centered = net.forward_batch(points)?.centered();
    let cov = centered.t_matmul(&centered)?.scaled(1.0 / points.rows() as f64);
    let cov = Matrix::from_fn(cov.rows(), cov.cols(), |r, c| 0.5 * (cov[(r, c)] + cov[(c, r)]));
    Ok(crate::linalg::sym_eig(&cov)?.values.last().copied().unwrap_or(0.0))
}
