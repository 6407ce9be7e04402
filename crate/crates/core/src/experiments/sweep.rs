use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::info_measures::Alpha;
use crate::training::{
    attacker_accuracy, derive_seed, train, train_attacker, utility_accuracy, DistortionSpec,
    HyperParams, TrainedSystem,
};

use super::calibrate::{calibrate_si_correlation, si_only_accuracy};
use super::data::{DatasetBatch, SynthConfig};
use super::io::write_atomic;
use super::metrics::normalized_error;

const STREAM_ATTACKER: u64 = 5;

/// One trained system evaluated on held-out data. Metrics are `None` when
/// training failed, in which case `failure` says why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeoffPoint {
    pub alpha: f64,
    pub lambda: f64,
    pub ne: Option<f64>,
    pub attacker_balanced_accuracy: Option<f64>,
    pub utility_accuracy: Option<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl TradeoffPoint {
    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }
}

/// Everything a sweep needs. Serialized as the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub data: SynthConfig,
    /// `alpha` and `lambda` are overridden per grid point.
    pub hyper: HyperParams,
    pub distortion: DistortionSpec,
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub si_enabled: bool,
    #[serde(default)]
    pub utility_enabled: bool,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// When set, `data.si_correlation` is calibrated first so that an
    /// SI-only classifier reaches this balanced accuracy.
    #[serde(default)]
    pub si_target_accuracy: Option<f64>,
}

fn default_train_fraction() -> f64 {
    0.8
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.lambdas.is_empty() {
            return Err(Error::Config("sweep grids must be non-empty".into()));
        }
        for &a in &self.alphas {
            Alpha::new(a)?;
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("lambda must be >= 0, got {l}")));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if let Some(t) = self.si_target_accuracy {
            if !(0.5..=1.0).contains(&t) {
                return Err(Error::Config(format!(
                    "SI target accuracy must lie in [0.5, 1], got {t}"
                )));
            }
        }
        self.data.validate()?;
        self.hyper.validate()?;
        self.distortion.validate()
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}

/// Held-out data for a sweep, with the SI calibration applied.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: DatasetBatch,
    pub test: DatasetBatch,
    pub si_correlation: f64,
    /// SI-only classifier accuracy on the test split, when SI exists.
    pub si_only_accuracy: Option<f64>,
}

pub fn prepare_data(cfg: &SweepConfig) -> Result<PreparedData> {
    let mut data_cfg = cfg.data.clone();
    if let Some(target) = cfg.si_target_accuracy {
        data_cfg.si_correlation = calibrate_si_correlation(&data_cfg, target, 0.005)?;
    }
    let (train, test) = data_cfg.generate()?.split(cfg.train_fraction)?;
    let si_only = match (&train.s, &test.s) {
        (Some(_), Some(_)) => Some(si_only_accuracy(&train, &test)?),
        _ => None,
    };
    Ok(PreparedData {
        train,
        test,
        si_correlation: data_cfg.si_correlation,
        si_only_accuracy: si_only,
    })
}

/// Trains one grid point and evaluates it on the test split, returning the
/// trained system alongside its metrics.
pub fn train_point(
    cfg: &SweepConfig,
    data: &PreparedData,
    alpha: f64,
    lambda: f64,
) -> Result<(TrainedSystem, TradeoffPoint)> {
    let seed = cfg.hyper.seed;
    let hyper = HyperParams {
        alpha: Alpha::new(alpha)?,
        lambda,
        ..cfg.hyper.clone()
    };
    let system = train(
        &hyper,
        &data.train,
        &cfg.distortion,
        cfg.si_enabled,
        cfg.utility_enabled,
    )?;
    let z = system.release(&data.test)?;
    let attacker = train_attacker(
        &system,
        &data.train,
        cfg.si_enabled,
        derive_seed(seed, STREAM_ATTACKER),
    )?;
    let point = TradeoffPoint {
        alpha,
        lambda,
        ne: Some(normalized_error(&z, &data.test.y)?),
        attacker_balanced_accuracy: Some(attacker_accuracy(
            &system,
            &attacker,
            &data.test,
            cfg.si_enabled,
        )?),
        utility_accuracy: utility_accuracy(&system, &data.test)?,
        seed,
        failure: None,
    };
    Ok((system, point))
}

/// Trains and evaluates one grid point. Any error becomes a failed point.
pub fn run_point(cfg: &SweepConfig, data: &PreparedData, alpha: f64, lambda: f64) -> TradeoffPoint {
    train_point(cfg, data, alpha, lambda).map_or_else(
        |e| TradeoffPoint {
            alpha,
            lambda,
            ne: None,
            attacker_balanced_accuracy: None,
            utility_accuracy: None,
            seed: cfg.hyper.seed,
            failure: Some(e.to_string()),
        },
        |(_, point)| point,
    )
}

/// Runs every (α, λ) pair on up to `workers` threads (0 picks the rayon
/// default). Points come back sorted by (α, λ) and do not depend on the
/// worker count.
pub fn sweep(cfg: &SweepConfig, data: &PreparedData, workers: usize) -> Result<Vec<TradeoffPoint>> {
    cfg.validate()?;
    let mut grid: Vec<(f64, f64)> = cfg
        .alphas
        .iter()
        .flat_map(|&a| cfg.lambdas.iter().map(move |&l| (a, l)))
        .collect();
    grid.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    grid.dedup();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        grid.par_iter()
            .map(|&(a, l)| run_point(cfg, data, a, l))
            .collect()
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetadata {
    pub config_hash: String,
    pub training_seed: u64,
    pub data_seed: u64,
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub si_correlation: f64,
    pub si_only_accuracy: Option<f64>,
    /// Seconds since the Unix epoch. The only field that changes between
    /// identical reruns.
    pub created_unix: u64,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepResults {
    pub metadata: RunMetadata,
    pub points: Vec<TradeoffPoint>,
}

impl SweepResults {
    pub fn new(cfg: &SweepConfig, data: &PreparedData, points: Vec<TradeoffPoint>) -> Result<Self> {
        Ok(Self {
            metadata: RunMetadata {
                config_hash: cfg.hash()?,
                training_seed: cfg.hyper.seed,
                data_seed: cfg.data.seed,
                alphas: cfg.alphas.clone(),
                lambdas: cfg.lambdas.clone(),
                si_correlation: data.si_correlation,
                si_only_accuracy: data.si_only_accuracy,
                created_unix: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs()),
                version: env!("CARGO_PKG_VERSION").into(),
            },
            points,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per point; empty cells for missing metrics.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "alpha",
            "lambda",
            "ne",
            "attacker_balanced_accuracy",
            "utility_accuracy",
            "seed",
            "failure",
        ])?;
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for p in &self.points {
            w.write_record([
                p.alpha.to_string(),
                p.lambda.to_string(),
                cell(p.ne),
                cell(p.attacker_balanced_accuracy),
                cell(p.utility_accuracy),
                p.seed.to_string(),
                p.failure.clone().unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Writes the results JSON atomically.
pub fn save_results(results: &SweepResults, path: &Path) -> Result<()> {
    write_atomic(path, results.to_json()?.as_bytes())
}

pub fn load_results(path: &Path) -> Result<SweepResults> {
    SweepResults::from_json(&std::fs::read_to_string(path)?)
}
