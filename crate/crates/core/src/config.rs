//! Flat key-value run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::MoonParams;
use crate::error::{Error, Result};
use crate::network::{Activation, NetworkConfig};
use crate::objectives::{ObjectiveKind, PenaltyKind};
use crate::trainer::{default_lambda, Lambda, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; data, split, initialisation and training derive from it.
    pub seed: u64,
    pub out: PathBuf,

    pub n: usize,
    pub noise_std: f64,
    pub train_fraction: f64,

    /// Output dimension p.
    pub p: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,

    pub objective: ObjectiveKind,
    /// Number or "auto"; omitted means the objective's default.
    pub lambda: Option<Lambda>,
    /// Kernel and augmentation scale; omitted means `noise_std`.
    pub sigma: Option<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_decay_points: Vec<f64>,
    pub lr_decay_factor: f64,
    pub divide_lr_by_lambda: bool,
    pub max_grad_norm: f64,
    pub center_penalty: bool,
    pub penalty_only: bool,
    /// Train and evaluate seeds `seed .. seed + repeats`.
    pub repeats: usize,
    /// Write per-epoch wall-clock seconds into the history file.
    pub record_timing: bool,

    pub drop_constant: bool,
    pub probe_ridge: f64,
    /// Also probe exact spectral features computed over train and test.
    pub oracle_probe: bool,
    /// Off-manifold margin; omitted means three times `noise_std`.
    pub margin: Option<f64>,
    pub grid_resolution: usize,
    pub grid_x: [f64; 2],
    pub grid_y: [f64; 2],
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let net = NetworkConfig::default();
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            n: 1000,
            noise_std: 0.1,
            train_fraction: 0.5,
            p: net.output_dim,
            hidden_layers: net.hidden_layers,
            hidden_width: net.hidden_width,
            objective: train.objective,
            lambda: None,
            sigma: None,
            learning_rate: train.learning_rate,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr_decay_points: train.lr_decay_points,
            lr_decay_factor: train.lr_decay_factor,
            divide_lr_by_lambda: train.divide_lr_by_lambda,
            max_grad_norm: train.max_grad_norm,
            center_penalty: true,
            penalty_only: false,
            repeats: 1,
            record_timing: false,
            drop_constant: true,
            probe_ridge: crate::oracle::DEFAULT_RIDGE,
            oracle_probe: false,
            margin: None,
            grid_resolution: 100,
            grid_x: [-1.5, 2.5],
            grid_y: [-1.0, 1.5],
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses `value` as a TOML scalar or array, falling back to a bare string.
fn parse_override(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(text.parse::<toml::Table>().map_err(|e| config_err(e.to_string()))?)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let config: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` (if any) and applies `key=value` overrides on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>().map_err(|e| Error::Format { path: p.to_path_buf(), reason: e.to_string() })?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            table.insert(key.clone(), parse_override(value));
        }
        Self::from_table(table)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.moon_params(self.seed).validate()?;
        self.network_config(self.seed).validate()?;
        self.train_config(self.seed).validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(config_err(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        if self.repeats == 0 {
            return Err(config_err("repeats must be at least 1"));
        }
        if !(self.probe_ridge >= 0.0 && self.probe_ridge.is_finite()) {
            return Err(config_err(format!("probe_ridge must be finite and >= 0, got {}", self.probe_ridge)));
        }
        if self.grid_resolution < 2 {
            return Err(config_err("grid_resolution must be at least 2"));
        }
        if !(self.grid_x[0] < self.grid_x[1] && self.grid_y[0] < self.grid_y[1]) {
            return Err(config_err("grid ranges must be increasing"));
        }
        if let Some(m) = self.margin {
            if !(m > 0.0 && m.is_finite()) {
                return Err(config_err(format!("margin must be positive, got {m}")));
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repeats as u64).map(move |k| self.seed.wrapping_add(k))
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.noise_std)
    }

    pub fn margin(&self) -> f64 {
        self.margin.unwrap_or(3.0 * self.noise_std)
    }

    pub fn lambda(&self) -> Lambda {
        self.lambda.unwrap_or(Lambda::Fixed(default_lambda(self.objective)))
    }

    pub fn moon_params(&self, seed: u64) -> MoonParams {
        MoonParams { n: self.n, noise_std: self.noise_std, seed }
    }

    pub fn network_config(&self, seed: u64) -> NetworkConfig {
        NetworkConfig {
            input_dim: 2,
            output_dim: self.p,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            activation: Activation::Tanh,
            init_seed: seed,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            objective: self.objective,
            lambda: self.lambda(),
            sigma: self.sigma(),
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            lr_decay_points: self.lr_decay_points.clone(),
            lr_decay_factor: self.lr_decay_factor,
            divide_lr_by_lambda: self.divide_lr_by_lambda,
            penalty_only: self.penalty_only,
            penalty: if self.center_penalty { PenaltyKind::Centered } else { PenaltyKind::Uncentered },
            max_grad_norm: self.max_grad_norm,
        }
    }
}
