//! Stream manifests: everything needed to rebuild a stream bit for bit from
//! its base dataset.
//!
//! ```text
//! ptta-stream-manifest 1
//! seed 7
//! gamma 1e-3
//! num_classes 8
//! periods_per_segment 10
//! batches_per_period 10
//! batch_size 64
//! segments 2
//! segment identity
//! segment affine <d> <d*d rotation values, row-major> <d shift values>
//! period <C probabilities>            (one line per period)
//! batch <batch_size row indices>      (one line per step)
//! ```
//!
//! `segment` lines may also be `gaussian_noise <scale>` or
//! `feature_scale <d> <d values>`. Floats use shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{noise_source, BaseDataset, CovariateTransform, Stream, StreamBatch, StreamConfig};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAGIC: &str = "ptta-stream-manifest 1";

#[derive(Clone, Debug, PartialEq)]
pub struct StreamManifest {
    pub config: StreamConfig,
    pub num_classes: usize,
    pub period_dists: Vec<Vec<f64>>,
    /// Base-dataset row of every sample, one list per step.
    pub sample_indices: Vec<Vec<usize>>,
}

/// Rebuilds the stream a manifest describes.
pub fn replay_stream(base: &BaseDataset, manifest: &StreamManifest) -> Result<Stream> {
    let config = &manifest.config;
    config.validate()?;
    if manifest.sample_indices.len() != config.total_batches() {
        return Err(Error::Config(format!(
            "manifest lists {} batches, config implies {}",
            manifest.sample_indices.len(),
            config.total_batches()
        )));
    }
    let per_segment = config.periods_per_segment * config.batches_per_period;
    let mut batches = Vec::with_capacity(manifest.sample_indices.len());
    for (step, idx) in manifest.sample_indices.iter().enumerate() {
        if let Some(&bad) = idx.iter().find(|&&i| i >= base.len()) {
            return Err(Error::Config(format!("manifest row {bad} is outside the base dataset")));
        }
        let segment = step / per_segment;
        let raw = base.features.select_rows(idx);
        let features = config.segments[segment].apply(&raw, &mut noise_source(config.seed, step))?;
        batches.push(StreamBatch {
            features,
            segment,
            period: step / config.batches_per_period,
            step,
            truth: idx.iter().map(|&i| base.labels[i]).collect(),
        });
    }
    Ok(Stream { batches, period_dists: manifest.period_dists.clone(), manifest: manifest.clone() })
}

fn floats(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

pub fn write_manifest(manifest: &StreamManifest, path: &Path) -> Result<()> {
    let c = &manifest.config;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "seed {}", c.seed);
    let _ = writeln!(out, "gamma {:e}", c.gamma);
    let _ = writeln!(out, "num_classes {}", manifest.num_classes);
    let _ = writeln!(out, "periods_per_segment {}", c.periods_per_segment);
    let _ = writeln!(out, "batches_per_period {}", c.batches_per_period);
    let _ = writeln!(out, "batch_size {}", c.batch_size);
    let _ = writeln!(out, "segments {}", c.segments.len());
    for seg in &c.segments {
        let _ = match seg {
            CovariateTransform::Identity => writeln!(out, "segment identity"),
            CovariateTransform::GaussianNoise { scale } => writeln!(out, "segment gaussian_noise {scale:e}"),
            CovariateTransform::FeatureScale { scale } => {
                writeln!(out, "segment feature_scale {} {}", scale.len(), floats(scale))
            }
            CovariateTransform::Affine { rotation, shift } => {
                writeln!(out, "segment affine {} {} {}", shift.len(), floats(rotation.as_slice()), floats(shift))
            }
        };
    }
    for q in &manifest.period_dists {
        let _ = writeln!(out, "period {}", floats(q));
    }
    for idx in &manifest.sample_indices {
        let list: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "batch {}", list.join(" "));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<StreamManifest> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
    let err = |line: usize, message: String| Error::Parse { line, message };

    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(err(1, "not a ptta stream manifest".into())),
    }
    let mut next_fields = |key: &str| -> Result<(usize, Vec<String>)> {
        let (n, line) = lines.next().ok_or_else(|| err(0, format!("missing `{key}`")))?;
        let mut it = line.split_whitespace();
        if it.next() != Some(key) {
            return Err(err(n, format!("expected `{key}`, found {line:?}")));
        }
        Ok((n, it.map(str::to_owned).collect()))
    };
    fn parse<T: std::str::FromStr>(n: usize, s: &str) -> Result<T> {
        s.parse().map_err(|_| Error::Parse { line: n, message: format!("cannot parse {s:?}") })
    }
    fn one<T: std::str::FromStr>(n: usize, fields: &[String]) -> Result<T> {
        match fields {
            [v] => parse(n, v),
            _ => Err(Error::Parse { line: n, message: "expected one value".into() }),
        }
    }
    fn many<T: std::str::FromStr>(n: usize, fields: &[String]) -> Result<Vec<T>> {
        fields.iter().map(|f| parse(n, f)).collect()
    }

    let (n, f) = next_fields("seed")?;
    let seed: u64 = one(n, &f)?;
    let (n, f) = next_fields("gamma")?;
    let gamma: f64 = one(n, &f)?;
    let (n, f) = next_fields("num_classes")?;
    let num_classes: usize = one(n, &f)?;
    let (n, f) = next_fields("periods_per_segment")?;
    let periods_per_segment: usize = one(n, &f)?;
    let (n, f) = next_fields("batches_per_period")?;
    let batches_per_period: usize = one(n, &f)?;
    let (n, f) = next_fields("batch_size")?;
    let batch_size: usize = one(n, &f)?;
    let (n, f) = next_fields("segments")?;
    let segment_count: usize = one(n, &f)?;

    let mut segments = Vec::with_capacity(segment_count);
    for _ in 0..segment_count {
        let (n, f) = next_fields("segment")?;
        let kind = f.first().map(String::as_str).unwrap_or("");
        let rest = &f[f.len().min(1)..];
        let seg = match kind {
            "identity" => CovariateTransform::Identity,
            "gaussian_noise" => CovariateTransform::GaussianNoise { scale: one(n, rest)? },
            "feature_scale" => {
                let d: usize = parse(n, rest.first().ok_or_else(|| err(n, "missing dimension".into()))?)?;
                let scale: Vec<f64> = many(n, &rest[1..])?;
                if scale.len() != d {
                    return Err(err(n, format!("feature_scale has {} values, expected {d}", scale.len())));
                }
                CovariateTransform::FeatureScale { scale }
            }
            "affine" => {
                let d: usize = parse(n, rest.first().ok_or_else(|| err(n, "missing dimension".into()))?)?;
                let values: Vec<f64> = many(n, &rest[1..])?;
                if values.len() != d * d + d {
                    return Err(err(n, format!("affine has {} values, expected {}", values.len(), d * d + d)));
                }
                let rotation = Matrix::from_vec(d, d, values[..d * d].to_vec())?;
                CovariateTransform::Affine { rotation, shift: values[d * d..].to_vec() }
            }
            other => return Err(err(n, format!("unknown transform {other:?}"))),
        };
        segments.push(seg);
    }
    let config = StreamConfig { segments, periods_per_segment, batches_per_period, batch_size, gamma, seed };
    config.validate()?;

    let mut period_dists = Vec::new();
    for _ in 0..segment_count * periods_per_segment {
        let (n, f) = next_fields("period")?;
        let q: Vec<f64> = many(n, &f)?;
        if q.len() != num_classes {
            return Err(err(n, format!("period has {} classes, expected {num_classes}", q.len())));
        }
        period_dists.push(q);
    }
    let mut sample_indices = Vec::new();
    for _ in 0..config.total_batches() {
        let (n, f) = next_fields("batch")?;
        let idx: Vec<usize> = many(n, &f)?;
        if idx.len() != batch_size {
            return Err(err(n, format!("batch has {} indices, expected {batch_size}", idx.len())));
        }
        sample_indices.push(idx);
    }
    Ok(StreamManifest { config, num_classes, period_dists, sample_indices })
}
