//! Test streams with continual covariate shift (a sequence of input
//! transforms, one per segment) and continual label shift (a fresh Dirichlet
//! label distribution for every period inside a segment).

mod dataset;
mod manifest;
mod metrics;
mod transform;

pub use dataset::{ingest_csv, synth_gaussians, BaseDataset, CsvDataset};
pub use manifest::{read_manifest, replay_stream, write_manifest, StreamManifest};
pub use metrics::{cd_metric, id_metric};
pub use transform::{default_segments, CovariateTransform};

use crate::error::{Error, Result};
use crate::numerics::{dirichlet_sample, Matrix, RandomSource};

#[derive(Clone, Debug, PartialEq)]
pub struct StreamConfig {
    pub segments: Vec<CovariateTransform>,
    pub periods_per_segment: usize,
    pub batches_per_period: usize,
    pub batch_size: usize,
    /// Dirichlet concentration of every period's label distribution.
    pub gamma: f64,
    pub seed: u64,
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(Error::InvalidParameter(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.segments.is_empty()
            || self.periods_per_segment == 0
            || self.batches_per_period == 0
            || self.batch_size == 0
        {
            return Err(Error::InvalidParameter("stream counts must all be >= 1".into()));
        }
        Ok(())
    }

    pub fn total_batches(&self) -> usize {
        self.segments.len() * self.periods_per_segment * self.batches_per_period
    }
}

/// One time step of the stream. Ground-truth labels ride along for scoring
/// only; adaptation code receives just `features`.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamBatch {
    pub features: Matrix,
    pub segment: usize,
    /// Global period index across all segments.
    pub period: usize,
    pub step: usize,
    truth: Vec<usize>,
}

impl StreamBatch {
    /// Hidden labels. Only evaluation code should call this.
    pub fn true_labels(&self) -> &[usize] {
        &self.truth
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stream {
    pub batches: Vec<StreamBatch>,
    /// The label distribution drawn for each period, in order.
    pub period_dists: Vec<Vec<f64>>,
    pub manifest: StreamManifest,
}

/// Key for the per-batch noise source, independent of the sampling source.
const NOISE_KEY: u64 = 0x6e6f_6973_6500_0000;

pub(crate) fn noise_source(seed: u64, step: usize) -> RandomSource {
    RandomSource::new(seed).derive(NOISE_KEY ^ step as u64)
}

pub fn generate_stream(base: &BaseDataset, config: &StreamConfig) -> Result<Stream> {
    config.validate()?;
    let pools = base.class_pools();
    if let Some(empty) = pools.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClassPool(empty));
    }
    let mut rng = RandomSource::new(config.seed);
    let mut period_dists = Vec::with_capacity(config.segments.len() * config.periods_per_segment);
    let mut sample_indices = Vec::with_capacity(config.total_batches());
    for _segment in 0..config.segments.len() {
        for _ in 0..config.periods_per_segment {
            let q = dirichlet_sample(config.gamma, base.num_classes, &mut rng)?;
            for _ in 0..config.batches_per_period {
                let idx: Vec<usize> = (0..config.batch_size)
                    .map(|_| {
                        let class = rng.categorical(&q);
                        let pool = &pools[class];
                        pool[rng.index(pool.len())]
                    })
                    .collect();
                sample_indices.push(idx);
            }
            period_dists.push(q);
        }
    }
    let manifest =
        StreamManifest { config: config.clone(), num_classes: base.num_classes, period_dists, sample_indices };
    replay_stream(base, &manifest)
}
