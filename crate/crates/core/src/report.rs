//! Machine-readable outputs of the train and eval commands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::objectives::EnergyValue;
use crate::oracle::OffManifold;

/// Collapse threshold on the ratio of final to initial top covariance
/// eigenvalue.
pub const COLLAPSE_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let count = values.len();
        if count == 0 {
            return Summary { mean: 0.0, std: 0.0, count };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let std = if count > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary { mean, std, count }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4} (n={})", self.mean, self.std, self.count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub lambda: f64,
    pub final_energy: EnergyValue,
    pub initial_top_covariance: f64,
    pub final_top_covariance: f64,
    pub collapse_ratio: f64,
    pub collapsed: bool,
    pub seconds: f64,
}

impl TrainSummary {
    pub fn collapse(initial: f64, last: f64) -> (f64, bool) {
        let ratio = if initial > 0.0 { last / initial } else { 1.0 };
        (ratio, ratio < COLLAPSE_RATIO)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub checkpoint: String,
    pub train_points: usize,
    pub test_points: usize,
    pub energy: EnergyValue,
    /// Graph energy with and without the `1/n²` normalisation.
    pub graph_energy: f64,
    pub graph_energy_raw: f64,
    pub smoothed_energy: f64,
    pub probe_accuracy: f64,
    pub shuffled_label_accuracy: f64,
    pub random_feature_accuracy: f64,
    pub oracle_probe_accuracy: Option<f64>,
    pub alignment_cosines: Vec<f64>,
    pub oracle_eigenvalues: Vec<f64>,
    pub off_manifold: Option<OffManifold>,
    pub off_manifold_error: Option<String>,
    pub top_covariance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    /// Seconds since the Unix epoch when the report was written.
    pub created_unix: f64,
    pub wall_seconds: f64,
}

impl Metadata {
    pub fn now(wall_seconds: f64) -> Metadata {
        let created_unix = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        Metadata { version: env!("CARGO_PKG_VERSION").to_string(), created_unix, wall_seconds }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedReport>,
    pub probe_accuracy: Summary,
    pub shuffled_label_accuracy: Summary,
    pub random_feature_accuracy: Summary,
    pub oracle_probe_accuracy: Option<Summary>,
    pub mean_alignment: Vec<f64>,
    pub metadata: Metadata,
}

impl RunReport {
    pub fn from_seeds(config: RunConfig, per_seed: Vec<SeedReport>, metadata: Metadata) -> RunReport {
        let collect = |f: &dyn Fn(&SeedReport) -> f64| per_seed.iter().map(f).collect::<Vec<_>>();
        let oracle: Vec<f64> = per_seed.iter().filter_map(|s| s.oracle_probe_accuracy).collect();
        let width = per_seed.iter().map(|s| s.alignment_cosines.len()).min().unwrap_or(0);
        let mean_alignment = (0..width)
            .map(|k| per_seed.iter().map(|s| s.alignment_cosines[k]).sum::<f64>() / per_seed.len() as f64)
            .collect();
        RunReport {
            seeds: per_seed.iter().map(|s| s.seed).collect(),
            probe_accuracy: Summary::of(&collect(&|s| s.probe_accuracy)),
            shuffled_label_accuracy: Summary::of(&collect(&|s| s.shuffled_label_accuracy)),
            random_feature_accuracy: Summary::of(&collect(&|s| s.random_feature_accuracy)),
            oracle_probe_accuracy: (!oracle.is_empty()).then(|| Summary::of(&oracle)),
            mean_alignment,
            per_seed,
            config,
            metadata,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<RunReport> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("report does not parse: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<RunReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(Summary::of(&[0.5]).std, 0.0);
        assert_eq!(Summary::of(&[]).count, 0);
    }

    #[test]
    fn collapse_flag() {
        assert_eq!(TrainSummary::collapse(1.0, 1e-4), (1e-4, true));
        assert!(!TrainSummary::collapse(1.0, 0.5).1);
        assert!(!TrainSummary::collapse(0.0, 0.0).1);
    }

    fn awkward() -> f64 {
        0.1 + 0.2
    }

    #[test]
    fn report_round_trips_exactly() {
        let seed = SeedReport {
            seed: 3,
            checkpoint: "model.bin".into(),
            train_points: 500,
            test_points: 500,
            energy: EnergyValue::new(awkward(), 1.0 / 3.0, 30.0),
            graph_energy: 1e-300,
            graph_energy_raw: 2.5e-7,
            smoothed_energy: std::f64::consts::PI,
            probe_accuracy: 0.971,
            shuffled_label_accuracy: 0.25,
            random_feature_accuracy: 0.262,
            oracle_probe_accuracy: None,
            alignment_cosines: vec![1.0, 0.9999999999999998, awkward()],
            oracle_eigenvalues: vec![0.0, 1e-17],
            off_manifold: None,
            off_manifold_error: Some("empty".into()),
            top_covariance: 1.2,
        };
        let report = RunReport::from_seeds(RunConfig::default(), vec![seed.clone(), SeedReport { seed: 4, probe_accuracy: 0.95, ..seed }], Metadata::now(1.5));
        let back = RunReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.per_seed[0].energy.objective.to_bits(), awkward().to_bits());
        assert_eq!(report.seeds, vec![3, 4]);
        assert!((report.probe_accuracy.mean - 0.9605).abs() < 1e-12);
    }
}
