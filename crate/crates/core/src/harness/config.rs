//! Flat `key=value` run configuration shared by the command-line tool and
//! configuration files.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{Method, MethodSettings};
use crate::adaptation::AdaptConfig;
use crate::backbone::{AdamConfig, PretrainOptions};
use crate::error::{Error, Result};
use crate::memory_bank::DEFAULT_CAPACITY;
use crate::numerics::RandomSource;
use crate::output_adaptation::{AffinityConfig, DEFAULT_K};
use crate::streamgen::{
    default_segments, generate_stream, ingest_csv, synth_gaussians, BaseDataset, Stream, StreamConfig,
};

const SPLIT_KEY: u64 = 0x7370_6c69_7400_0000;
const SEGMENT_KEY: u64 = 0x7365_676d_656e_7400;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synth { classes: usize, dim: usize, per_class: usize, separation: f64, seed: u64 },
    Csv { path: PathBuf },
}

/// Where the base data comes from and how it is split into a pretraining
/// set and the pool streams draw from.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    /// Whether a CSV source starts with a header line.
    pub csv_header: bool,
    pub holdout: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth { classes: 8, dim: 16, per_class: 500, separation: 6.0, seed: 0 },
            csv_header: false,
            holdout: 0.5,
        }
    }
}

impl DataConfig {
    /// `(pretraining set, stream pool)`.
    pub fn load(&self) -> Result<(BaseDataset, BaseDataset)> {
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(Error::Config(format!("holdout must lie in (0, 1), got {}", self.holdout)));
        }
        let (data, seed) = match &self.source {
            DataSource::Synth { classes, dim, per_class, separation, seed } => {
                (synth_gaussians(*classes, *dim, *per_class, *separation, *seed)?, *seed)
            }
            DataSource::Csv { path } => (ingest_csv(path, self.csv_header)?.dataset, 0),
        };
        Ok(data.split(self.holdout, &mut RandomSource::new(seed).derive(SPLIT_KEY)))
    }
}

/// Stream shape; segment transforms are drawn from `seed` as well.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamSettings {
    pub segments: usize,
    pub severity: f64,
    pub periods_per_segment: usize,
    pub batches_per_period: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for StreamSettings {
    fn default() -> Self {
        Self {
            segments: 15,
            severity: 1.0,
            periods_per_segment: 10,
            batches_per_period: 10,
            batch_size: 64,
            gamma: 1e-3,
            seed: 0,
        }
    }
}

impl StreamSettings {
    pub fn stream_config(&self, dim: usize) -> StreamConfig {
        let mut rng = RandomSource::new(self.seed).derive(SEGMENT_KEY);
        StreamConfig {
            segments: default_segments(dim, self.segments, self.severity, &mut rng),
            periods_per_segment: self.periods_per_segment,
            batches_per_period: self.batches_per_period,
            batch_size: self.batch_size,
            gamma: self.gamma,
            seed: self.seed,
        }
    }

    pub fn generate(&self, pool: &BaseDataset) -> Result<Stream> {
        generate_stream(pool, &self.stream_config(pool.dim()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub data: DataConfig,
    pub hidden_dims: Vec<usize>,
    pub pretrain: PretrainOptions,
    pub checkpoint: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub stream: StreamSettings,
    /// Noise scales are fractions of the pretraining feature spread.
    pub adapt: AdaptConfig,
    pub affinity: AffinityKind,
    pub k: usize,
    pub rbf_sigma: f64,
    pub bank_capacity: usize,
    pub alpha: f64,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AffinityKind {
    Knn,
    Rbf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Grotta,
            data: DataConfig::default(),
            hidden_dims: vec![64, 32],
            pretrain: PretrainOptions::default(),
            checkpoint: None,
            manifest: None,
            stream: StreamSettings::default(),
            adapt: AdaptConfig::default(),
            affinity: AffinityKind::Knn,
            k: DEFAULT_K,
            rbf_sigma: 1.0,
            bank_capacity: DEFAULT_CAPACITY,
            alpha: crate::gprerbn::DEFAULT_ALPHA,
            seed: 0,
            output: None,
        }
    }
}

/// Every key accepted by [`RunConfig::set`], with its default.
pub const KEYS: &[(&str, &str)] = &[
    ("method", "grotta"),
    ("data", "synth"),
    ("data_header", "false"),
    ("classes", "8"),
    ("dim", "16"),
    ("per_class", "500"),
    ("separation", "6"),
    ("data_seed", "0"),
    ("holdout", "0.5"),
    ("hidden", "64,32"),
    ("epochs", "20"),
    ("pretrain_batch", "64"),
    ("lr", "0.001"),
    ("checkpoint", ""),
    ("manifest", ""),
    ("segments", "15"),
    ("severity", "1"),
    ("periods", "10"),
    ("batches", "10"),
    ("batch_size", "64"),
    ("gamma", "0.001"),
    ("stream_seed", "0"),
    ("alpha", "0.05"),
    ("nu", "0.001"),
    ("lambda_batch", "0.01"),
    ("lambda_re", "0.1"),
    ("bank_capacity", "1024"),
    ("weak_noise", "0.01"),
    ("strong_noise", "0.1"),
    ("p_drop", "0.1"),
    ("affinity", "knn"),
    ("k", "5"),
    ("rbf_sigma", "1"),
    ("seed", "0"),
    ("output", ""),
];

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {raw:?}")))
}

fn optional_path(raw: &str) -> Option<PathBuf> {
    let raw = raw.trim();
    (!raw.is_empty()).then(|| PathBuf::from(raw))
}

pub(crate) fn affinity_to_string(a: &AffinityConfig) -> String {
    match a {
        AffinityConfig::Knn { k } => format!("knn:{k}"),
        AffinityConfig::Rbf { sigma } => format!("rbf:{sigma:e}"),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "method" => self.method = raw.parse()?,
            "data" => {
                self.data.source = match raw.trim() {
                    "synth" => DataConfig::default().source,
                    path => DataSource::Csv { path: PathBuf::from(path) },
                }
            }
            "data_header" => self.data.csv_header = value(key, raw)?,
            "classes" | "dim" | "per_class" | "separation" | "data_seed" => {
                let DataSource::Synth { classes, dim, per_class, separation, seed } = &mut self.data.source else {
                    return Err(Error::Config(format!("{key} applies to synthetic data only")));
                };
                match key {
                    "classes" => *classes = value(key, raw)?,
                    "dim" => *dim = value(key, raw)?,
                    "per_class" => *per_class = value(key, raw)?,
                    "separation" => *separation = value(key, raw)?,
                    _ => *seed = value(key, raw)?,
                }
            }
            "holdout" => self.data.holdout = value(key, raw)?,
            "hidden" => {
                self.hidden_dims = raw.split(',').map(|w| value::<usize>(key, w)).collect::<Result<_>>()?;
            }
            "epochs" => self.pretrain.epochs = value(key, raw)?,
            "pretrain_batch" => self.pretrain.batch_size = value(key, raw)?,
            "lr" => {
                let lr = value(key, raw)?;
                self.pretrain.adam.lr = lr;
                self.adapt.adam.lr = lr;
            }
            "checkpoint" => self.checkpoint = optional_path(raw),
            "manifest" => self.manifest = optional_path(raw),
            "segments" => self.stream.segments = value(key, raw)?,
            "severity" => self.stream.severity = value(key, raw)?,
            "periods" => self.stream.periods_per_segment = value(key, raw)?,
            "batches" => self.stream.batches_per_period = value(key, raw)?,
            "batch_size" => {
                let b = value(key, raw)?;
                self.stream.batch_size = b;
                self.adapt.batch_size = b;
            }
            "gamma" => self.stream.gamma = value(key, raw)?,
            "stream_seed" => self.stream.seed = value(key, raw)?,
            "alpha" => self.alpha = value(key, raw)?,
            "nu" => self.adapt.nu = value(key, raw)?,
            "lambda_batch" => self.adapt.lambda_batch = value(key, raw)?,
            "lambda_re" => self.adapt.lambda_re = value(key, raw)?,
            "bank_capacity" => self.bank_capacity = value(key, raw)?,
            "weak_noise" => self.adapt.sigma_w = value(key, raw)?,
            "strong_noise" => self.adapt.sigma_s = value(key, raw)?,
            "p_drop" => self.adapt.p_drop = value(key, raw)?,
            "affinity" => {
                self.affinity = match raw.trim() {
                    "knn" => AffinityKind::Knn,
                    "rbf" => AffinityKind::Rbf,
                    other => return Err(Error::Config(format!("affinity: expected knn or rbf, got {other:?}"))),
                }
            }
            "k" => self.k = value(key, raw)?,
            "rbf_sigma" => self.rbf_sigma = value(key, raw)?,
            "seed" => self.seed = value(key, raw)?,
            "output" => self.output = optional_path(raw),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies pairs in order, so later pairs override earlier ones.
    pub fn apply<K: AsRef<str>, V: AsRef<str>>(&mut self, pairs: &[(K, V)]) -> Result<()> {
        for (k, v) in pairs {
            self.set(k.as_ref(), v.as_ref())?;
        }
        Ok(())
    }

    pub fn affinity(&self) -> AffinityConfig {
        match self.affinity {
            AffinityKind::Knn => AffinityConfig::Knn { k: self.k },
            AffinityKind::Rbf => AffinityConfig::Rbf { sigma: self.rbf_sigma },
        }
    }

    /// Settings for the run loop, with noise fractions scaled by `feature_std`.
    pub fn method_settings(&self, feature_std: f64) -> MethodSettings {
        let mut adapt = self.adapt;
        adapt.sigma_w *= feature_std;
        adapt.sigma_s *= feature_std;
        MethodSettings {
            method: self.method,
            adapt,
            affinity: self.affinity(),
            bank_capacity: self.bank_capacity,
            alpha: self.alpha,
            baseline_adam: AdamConfig { lr: self.adapt.adam.lr, ..AdamConfig::default() },
            seed: self.seed,
        }
    }
}

/// Parses `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; keys and values are trimmed.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: n + 1, message: format!("expected key=value, found {line:?}") })?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

pub fn read_key_value_file(path: &Path) -> Result<Vec<(String, String)>> {
    parse_key_values(&fs::read_to_string(path)?)
}
