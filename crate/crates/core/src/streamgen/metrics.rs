//! Imbalance degree (ID) and change degree (CD) of a sequence of label
//! distributions.
//!
//! ID is the mean Euclidean distance of each distribution to uniform; its
//! maximum, reached by one-hot distributions, is `sqrt(1 - 1/C)`. CD is the
//! mean Euclidean distance between consecutive distributions scaled by
//! `sqrt(2)/2`, which maps its range onto `[0, 1]`.

use crate::error::{Error, Result};

const SIMPLEX_TOLERANCE: f64 = 1e-9;

fn check_simplex(dists: &[Vec<f64>]) -> Result<usize> {
    let classes = dists.first().map(Vec::len).unwrap_or(0);
    if classes == 0 {
        return Err(Error::InvalidDistribution("no distributions".into()));
    }
    for (i, d) in dists.iter().enumerate() {
        if d.len() != classes {
            return Err(Error::InvalidDistribution(format!(
                "distribution {i} has {} classes, expected {classes}",
                d.len()
            )));
        }
        let total: f64 = d.iter().sum();
        if d.iter().any(|&p| p.is_nan() || p < 0.0) || (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("distribution {i} is not on the simplex (sum {total})")));
        }
    }
    Ok(classes)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn id_metric(dists: &[Vec<f64>]) -> Result<f64> {
    let classes = check_simplex(dists)?;
    let uniform = vec![1.0 / classes as f64; classes];
    Ok(dists.iter().map(|d| distance(d, &uniform)).sum::<f64>() / dists.len() as f64)
}

pub fn cd_metric(dists: &[Vec<f64>]) -> Result<f64> {
    if dists.len() < 2 {
        return Err(Error::TooFewDistributions(dists.len()));
    }
    check_simplex(dists)?;
    let n = (dists.len() - 1) as f64;
    let total: f64 = dists.windows(2).map(|w| distance(&w[1], &w[0])).sum();
    Ok(std::f64::consts::SQRT_2 / (2.0 * n) * total)
}
