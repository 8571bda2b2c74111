//! The five pipeline commands. Each reads a [`RunConfig`], writes its files
//! under `config.out` and returns what it wrote.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::RunConfig;
use crate::data::{make_grid, make_moons, split_indices, Dataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::Network;
use crate::objectives::{graph_energy, kernel_matrix, smoothed_energy};
use crate::oracle::{align, off_manifold_magnitude, probe_accuracy, probe_fit, spectral_embedding, write_feature_csv, SpectralOracle};
use crate::report::{Metadata, RunReport, SeedReport, TrainSummary};
use crate::rng::{streams, Rng};
use crate::trainer::{self, top_covariance_eigenvalue};

pub const DATA_FILE: &str = "data.csv";
pub const EIGENVALUES_FILE: &str = "oracle_eigenvalues.csv";
pub const EMBEDDING_FILE: &str = "oracle_embedding.csv";
pub const GRID_FILE: &str = "grid.csv";
pub const REPORT_FILE: &str = "report.json";

/// `stem.ext` for a single run, `stem_seed{seed}.ext` when repeating seeds.
pub fn artifact(config: &RunConfig, seed: u64, stem: &str, ext: &str) -> PathBuf {
    let name = if config.repeats == 1 { format!("{stem}.{ext}") } else { format!("{stem}_seed{seed}.{ext}") };
    config.out.join(name)
}

pub fn checkpoint_path(config: &RunConfig, seed: u64) -> PathBuf {
    artifact(config, seed, "model", "bin")
}

fn ensure_out(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))
}

/// Dataset for `seed` with its train/test split.
pub struct Split {
    pub full: Dataset,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_split(config: &RunConfig, seed: u64) -> Result<Split> {
    let full = make_moons(&config.moon_params(seed))?;
    let (train_idx, test_idx) = split_indices(&full, config.train_fraction, seed)?;
    let train = full.subset(&train_idx);
    let test = full.subset(&test_idx);
    Ok(Split { full, train_idx, test_idx, train, test })
}

pub fn generate(config: &RunConfig) -> Result<PathBuf> {
    config.validate()?;
    ensure_out(config)?;
    let data = make_moons(&config.moon_params(config.seed))?;
    let path = config.out.join(DATA_FILE);
    data.write_csv(&path)?;
    Ok(path)
}

/// Trains one network on the training split of `seed` without touching disk.
pub fn train_seed(config: &RunConfig, seed: u64) -> Result<(Network, trainer::TrainHistory, TrainSummary)> {
    let split = load_split(config, seed)?;
    let net = Network::init(&config.network_config(seed))?;
    let initial_top_covariance = top_covariance_eigenvalue(&net, &split.train.points)?;
    let started = Instant::now();
    let (net, history) = trainer::train(net, &split.train.points, &config.train_config(seed))?;
    let seconds = started.elapsed().as_secs_f64();
    let final_top_covariance = top_covariance_eigenvalue(&net, &split.train.points)?;
    let (collapse_ratio, collapsed) = TrainSummary::collapse(initial_top_covariance, final_top_covariance);
    let summary = TrainSummary {
        seed,
        lambda: history.lambda,
        final_energy: history.final_energy,
        initial_top_covariance,
        final_top_covariance,
        collapse_ratio,
        collapsed,
        seconds,
    };
    Ok((net, history, summary))
}

/// Trains every configured seed, writing a checkpoint, a loss history and a
/// summary for each.
pub fn train(config: &RunConfig) -> Result<Vec<TrainSummary>> {
    config.validate()?;
    ensure_out(config)?;
    let mut summaries = Vec::new();
    for seed in config.seeds() {
        let (net, history, summary) = train_seed(config, seed)?;
        net.save(&checkpoint_path(config, seed))?;
        history.write_csv(&artifact(config, seed, "history", "csv"), config.record_timing)?;
        let path = artifact(config, seed, "train_summary", "json");
        let mut value = serde_json::to_value(&summary).expect("summary serialises");
        if !config.record_timing {
            value["seconds"] = serde_json::json!(0.0);
        }
        let text = serde_json::to_string_pretty(&value).expect("summary serialises") + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        summaries.push(summary);
    }
    Ok(summaries)
}

/// Spectral embedding of the training split of `config.seed`.
pub fn oracle(config: &RunConfig) -> Result<SpectralOracle> {
    config.validate()?;
    ensure_out(config)?;
    let split = load_split(config, config.seed)?;
    let oracle = spectral_embedding(&split.train.points, config.sigma(), config.p, config.drop_constant)?;
    oracle.write_eigenvalues_csv(&config.out.join(EIGENVALUES_FILE))?;
    oracle.write_embedding_csv(&split.train.points, &config.out.join(EMBEDDING_FILE))?;
    Ok(oracle)
}

/// Reads an `x,y,phi_0,...` file back into points and features.
pub fn read_feature_csv(path: &Path) -> Result<(Matrix, Matrix)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose().map_err(|e| Error::io(path, e))?.ok_or_else(|| bad("empty file".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3 || columns[0] != "x" || columns[1] != "y" || !columns[2..].iter().enumerate().all(|(k, c)| *c == format!("phi_{k}")) {
        return Err(bad(format!("unexpected header '{header}'")));
    }
    let p = columns.len() - 2;
    let (mut points, mut features) = (Vec::new(), Vec::new());
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let values: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", lineno + 2))))
            .collect::<Result<_>>()?;
        if values.len() != p + 2 {
            return Err(bad(format!("line {}: expected {} fields", lineno + 2, p + 2)));
        }
        points.extend_from_slice(&values[..2]);
        features.extend_from_slice(&values[2..]);
    }
    let n = points.len() / 2;
    Ok((Matrix::from_vec(n, 2, points)?, Matrix::from_vec(n, p, features)?))
}

fn probe(train_x: &Matrix, train_y: &[usize], test_x: &Matrix, test_y: &[usize], ridge: f64) -> Result<f64> {
    let model = probe_fit(train_x, train_y, ridge)?;
    probe_accuracy(&model, test_x, test_y)
}

pub fn grid_points(config: &RunConfig) -> Result<Matrix> {
    make_grid((config.grid_x[0], config.grid_x[1]), (config.grid_y[0], config.grid_y[1]), config.grid_resolution)
}

/// Scores one trained network on the split of `seed`. `oracle_features`
/// replaces the computed training-split oracle when given.
pub fn evaluate_seed(config: &RunConfig, seed: u64, net: &Network, checkpoint: &str, oracle_features: Option<&Matrix>) -> Result<SeedReport> {
    let split = load_split(config, seed)?;
    if net.input_dim() != 2 {
        return Err(Error::dim(format!("checkpoint expects {}-D inputs", net.input_dim())));
    }
    let (train_y, test_y) = (split.train.labels(), split.test.labels());
    let train_phi = net.forward_batch(&split.train.points)?;
    let test_phi = net.forward_batch(&split.test.points)?;
    let ridge = config.probe_ridge;
    let probe_accuracy = probe(&train_phi, &train_y, &test_phi, &test_y, ridge)?;

    // Both sides are permuted so no feature carries label information.
    let mut label_rng = Rng::substream(seed, streams::LABEL_SHUFFLE);
    let (mut shuffled_train, mut shuffled_test) = (train_y.clone(), test_y.clone());
    label_rng.shuffle(&mut shuffled_train);
    label_rng.shuffle(&mut shuffled_test);
    let shuffled_label_accuracy = probe(&train_phi, &shuffled_train, &test_phi, &shuffled_test, ridge)?;

    let mut noise = Rng::substream(seed, streams::PROBE_NOISE);
    let p = net.output_dim();
    let noise_train = Matrix::from_fn(train_phi.rows(), p, |_, _| noise.normal());
    let noise_test = Matrix::from_fn(test_phi.rows(), p, |_, _| noise.normal());
    let random_feature_accuracy = probe(&noise_train, &train_y, &noise_test, &test_y, ridge)?;

    let sigma = config.sigma();
    let oracle_probe_accuracy = if config.oracle_probe {
        let all = spectral_embedding(&split.full.points, sigma, p, config.drop_constant)?.embedding;
        Some(probe(&all.select_rows(&split.train_idx), &train_y, &all.select_rows(&split.test_idx), &test_y, ridge)?)
    } else {
        None
    };

    let (reference, oracle_eigenvalues, includes_constant) = match oracle_features {
        Some(features) => {
            if features.rows() != train_phi.rows() {
                return Err(Error::dim(format!("oracle has {} rows, training split {}", features.rows(), train_phi.rows())));
            }
            (features.clone(), Vec::new(), !config.drop_constant)
        }
        None => {
            let oracle = spectral_embedding(&split.train.points, sigma, p, config.drop_constant)?;
            let eigenvalues = oracle.embedded_eigenvalues().to_vec();
            (oracle.embedding, eigenvalues, oracle.includes_constant)
        }
    };
    let alignment_cosines = align(&train_phi, &reference, !includes_constant)?;

    let train_config = config.train_config(seed);
    let mut eval_rng = Rng::substream(seed, streams::EVAL);
    let lambda = trainer::resolve_lambda(net, &split.train.points, &train_config)?;
    let energy = trainer::evaluate(net, &split.train.points, &train_config, lambda, &mut eval_rng)?;
    let kernel = kernel_matrix(&split.train.points, sigma)?;
    let graph = graph_energy(&train_phi, &kernel)?;
    let n_train = train_phi.rows() as f64;
    let smoothed = smoothed_energy(&train_phi, &split.train.points, sigma)?;

    let grid = grid_points(config)?;
    let (off_manifold, off_manifold_error) = match off_manifold_magnitude(net, &grid, &split.train.points, config.margin()) {
        Ok(diag) => (Some(diag), None),
        Err(Error::Diagnostic(msg)) => (None, Some(msg)),
        Err(e) => return Err(e),
    };

    Ok(SeedReport {
        seed,
        checkpoint: checkpoint.to_string(),
        train_points: split.train.len(),
        test_points: split.test.len(),
        energy,
        graph_energy: graph,
        graph_energy_raw: graph * n_train * n_train,
        smoothed_energy: smoothed,
        probe_accuracy,
        shuffled_label_accuracy,
        random_feature_accuracy,
        oracle_probe_accuracy,
        alignment_cosines,
        oracle_eigenvalues,
        off_manifold,
        off_manifold_error,
        top_covariance: top_covariance_eigenvalue(net, &split.train.points)?,
    })
}

/// Evaluates the checkpoints of every configured seed (or the explicit
/// `checkpoints`, paired with seeds in order) and writes the report.
pub fn eval(config: &RunConfig, checkpoints: &[PathBuf], oracle_file: Option<&Path>) -> Result<RunReport> {
    config.validate()?;
    ensure_out(config)?;
    let started = Instant::now();
    let seeds: Vec<u64> = config.seeds().collect();
    let paths: Vec<PathBuf> = if checkpoints.is_empty() {
        seeds.iter().map(|&s| checkpoint_path(config, s)).collect()
    } else {
        if checkpoints.len() != seeds.len() {
            return Err(Error::Config(format!("{} checkpoints given for {} seeds", checkpoints.len(), seeds.len())));
        }
        checkpoints.to_vec()
    };
    let oracle_features = match oracle_file {
        Some(path) => {
            let (points, features) = read_feature_csv(path)?;
            let split = load_split(config, config.seed)?;
            if points != split.train.points {
                return Err(Error::Input(format!("{} was computed on different points", path.display())));
            }
            Some(features)
        }
        None => None,
    };
    let mut per_seed = Vec::with_capacity(seeds.len());
    for (k, (&seed, path)) in seeds.iter().zip(&paths).enumerate() {
        let net = Network::load(path)?;
        let features = if k == 0 { oracle_features.as_ref() } else { None };
        per_seed.push(evaluate_seed(config, seed, &net, &path.display().to_string(), features)?);
    }
    let report = RunReport::from_seeds(config.clone(), per_seed, Metadata::now(started.elapsed().as_secs_f64()));
    report.write(&config.out.join(REPORT_FILE))?;
    Ok(report)
}

/// Evaluates a checkpoint on the configured grid and writes `x,y,phi_k` rows.
pub fn grid(config: &RunConfig, checkpoint: Option<&Path>) -> Result<PathBuf> {
    config.validate()?;
    ensure_out(config)?;
    let default_path = checkpoint_path(config, config.seed);
    let net = Network::load(checkpoint.unwrap_or(&default_path))?;
    let points = grid_points(config)?;
    let phi = net.forward_batch(&points)?;
    let path = config.out.join(GRID_FILE);
    write_feature_csv(&points, &phi, &path)?;
    Ok(path)
}
