//! Gradient-preserving robust batch normalization.
//!
//! A site normalizes with global statistics `(mu_g, sigma2_g)` that are only
//! refreshed (by an exponential moving average) on explicitly tracked batches.
//! The forward value is the same as normalizing the raw input with the global
//! statistics, but the input is first rewritten as
//!
//! ```text
//! F_gpre = (F - mu + sg(mu)) / sqrt(sigma2 + eps) * sqrt(sg(sigma2) + eps)
//! ```
//!
//! where `sg` marks stop-gradient copies of the batch statistics. The backward
//! pass therefore carries the batch-coupled Jacobian of ordinary training-mode
//! batch norm, scaled per channel, while the global buffers contribute nothing.

use crate::error::{shape_err, Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tracking {
    Enable,
    Disable,
}

/// Per-site parameters and statistic buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct GpreRbnState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu_g: Vec<f64>,
    pub sigma2_g: Vec<f64>,
    pub mu_s: Vec<f64>,
    pub sigma2_s: Vec<f64>,
    /// EMA rate for the global statistics.
    pub alpha: f64,
    pub eps: f64,
    /// Running-statistic momentum used while pretraining.
    pub momentum: f64,
    /// Number of pretraining batches folded into `mu_s`/`sigma2_s`.
    pub source_batches: u64,
}

impl GpreRbnState {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mu_g: vec![0.0; channels],
            sigma2_g: vec![1.0; channels],
            mu_s: vec![0.0; channels],
            sigma2_s: vec![1.0; channels],
            alpha: DEFAULT_ALPHA,
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
            source_batches: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Copies the global statistics from another site of the same shape.
    pub fn copy_globals_from(&mut self, other: &GpreRbnState) {
        self.mu_g.clone_from(&other.mu_g);
        self.sigma2_g.clone_from(&other.sigma2_g);
    }
}

/// Channel-wise mean and biased variance.
pub fn batch_stats(f: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = f.rows() as f64;
    let mu = f.column_means();
    let mut sigma2 = vec![0.0; f.cols()];
    for row in f.row_iter() {
        for ((s, x), m) in sigma2.iter_mut().zip(row).zip(&mu) {
            let d = x - m;
            *s += d * d;
        }
    }
    for s in &mut sigma2 {
        *s /= n;
    }
    (mu, sigma2)
}

/// Values treated as constants by the backward pass of one site forward:
/// the stop-gradient batch statistics and the statistics used to normalize.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenStats {
    pub sg_mu: Vec<f64>,
    pub sg_sigma2: Vec<f64>,
    pub norm_mu: Vec<f64>,
    pub norm_sigma2: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GpreCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
    /// `sqrt(sg_sigma2 + eps) / sqrt(norm_sigma2 + eps)` per channel.
    scale: Vec<f64>,
    normalized: Matrix,
    gamma: Vec<f64>,
    frozen: FrozenStats,
    consumed: bool,
}

impl GpreCache {
    pub fn frozen(&self) -> &FrozenStats {
        &self.frozen
    }

    /// `(F_gpre - norm_mu) / sqrt(norm_sigma2 + eps)`, before the affine map.
    pub fn normalized(&self) -> &Matrix {
        &self.normalized
    }
}

#[derive(Clone, Debug)]
pub struct SiteGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub input: Matrix,
}

fn check_channels(state: &GpreRbnState, f: &Matrix) -> Result<()> {
    if f.cols() != state.channels() {
        return Err(shape_err(format!("site has {} channels, input has {}", state.channels(), f.cols())));
    }
    Ok(())
}

/// Core evaluation shared by every mode: the batch statistics are recomputed
/// from `f`, everything in `frozen` is taken as given.
pub fn forward_frozen(state: &GpreRbnState, f: &Matrix, frozen: &FrozenStats) -> Result<(Matrix, GpreCache)> {
    check_channels(state, f)?;
    let c = state.channels();
    for v in [&frozen.sg_mu, &frozen.sg_sigma2, &frozen.norm_mu, &frozen.norm_sigma2] {
        if v.len() != c {
            return Err(shape_err("frozen statistics length differs from channel count"));
        }
    }
    let eps = state.eps;
    let (mu, sigma2) = batch_stats(f);
    let inv_std: Vec<f64> = sigma2.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
    let sg_std: Vec<f64> = frozen.sg_sigma2.iter().map(|s| (s + eps).sqrt()).collect();
    let norm_inv_std: Vec<f64> = frozen.norm_sigma2.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
    let scale: Vec<f64> = sg_std.iter().zip(&norm_inv_std).map(|(a, b)| a * b).collect();

    let (rows, _) = f.shape();
    let mut xhat = Matrix::zeros(rows, c);
    let mut normalized = Matrix::zeros(rows, c);
    let mut out = Matrix::zeros(rows, c);
    for i in 0..rows {
        for j in 0..c {
            let xh = (f[(i, j)] - mu[j]) * inv_std[j];
            let f_gpre = xh * sg_std[j] + frozen.sg_mu[j];
            let n = (f_gpre - frozen.norm_mu[j]) * norm_inv_std[j];
            xhat[(i, j)] = xh;
            normalized[(i, j)] = n;
            out[(i, j)] = state.gamma[j] * n + state.beta[j];
        }
    }
    let cache = GpreCache {
        xhat,
        inv_std,
        scale,
        normalized,
        gamma: state.gamma.clone(),
        frozen: frozen.clone(),
        consumed: false,
    };
    Ok((out, cache))
}

/// Statistics a site forward will use, without touching `state`. With
/// tracking enabled the normalizing statistics are the post-EMA globals.
pub fn plan_global(state: &GpreRbnState, f: &Matrix, tracking: Tracking) -> Result<FrozenStats> {
    check_channels(state, f)?;
    let (mu, sigma2) = batch_stats(f);
    let (norm_mu, norm_sigma2) = match tracking {
        Tracking::Disable => (state.mu_g.clone(), state.sigma2_g.clone()),
        Tracking::Enable => {
            if f.rows() < 2 {
                return Err(Error::DegenerateBatch(f.rows()));
            }
            let a = state.alpha;
            let m = state.mu_g.iter().zip(&mu).map(|(g, b)| (1.0 - a) * g + a * b).collect();
            let v = state.sigma2_g.iter().zip(&sigma2).map(|(g, b)| (1.0 - a) * g + a * b).collect();
            (m, v)
        }
    };
    Ok(FrozenStats { sg_mu: mu, sg_sigma2: sigma2, norm_mu, norm_sigma2 })
}

/// Statistics for training-form batch norm: normalize by the batch itself.
pub fn plan_batch(state: &GpreRbnState, f: &Matrix) -> Result<FrozenStats> {
    check_channels(state, f)?;
    let (mu, sigma2) = batch_stats(f);
    Ok(FrozenStats { norm_mu: mu.clone(), norm_sigma2: sigma2.clone(), sg_mu: mu, sg_sigma2: sigma2 })
}

/// Folds batch statistics into the source running statistics.
pub(crate) fn update_running(state: &mut GpreRbnState, stats: &FrozenStats) {
    let m = state.momentum;
    for j in 0..state.channels() {
        state.mu_s[j] = (1.0 - m) * state.mu_s[j] + m * stats.sg_mu[j];
        state.sigma2_s[j] = (1.0 - m) * state.sigma2_s[j] + m * stats.sg_sigma2[j];
    }
    state.source_batches += 1;
}

/// GpreRBN forward. With tracking enabled the global statistics take one EMA
/// step toward the (detached) batch statistics before normalizing.
pub fn gpre_forward(state: &mut GpreRbnState, f: &Matrix, tracking: Tracking) -> Result<(Matrix, GpreCache)> {
    let frozen = plan_global(state, f, tracking)?;
    if tracking == Tracking::Enable {
        state.mu_g.clone_from(&frozen.norm_mu);
        state.sigma2_g.clone_from(&frozen.norm_sigma2);
    }
    forward_frozen(state, f, &frozen)
}

/// Training-form batch norm: normalize with the batch's own statistics.
/// `track_running` folds them into the source running statistics.
pub fn batch_norm_forward(state: &mut GpreRbnState, f: &Matrix, track_running: bool) -> Result<(Matrix, GpreCache)> {
    let frozen = plan_batch(state, f)?;
    if track_running {
        if f.rows() < 2 {
            return Err(Error::DegenerateBatch(f.rows()));
        }
        update_running(state, &frozen);
    }
    forward_frozen(state, f, &frozen)
}

/// Backward pass through the affine map and the gradient-preserving rewrite.
pub fn gpre_backward(cache: &mut GpreCache, grad_out: &Matrix) -> Result<SiteGrads> {
    if cache.consumed {
        return Err(Error::StaleCache);
    }
    if grad_out.shape() != cache.xhat.shape() {
        return Err(shape_err(format!("grad {:?} vs activations {:?}", grad_out.shape(), cache.xhat.shape())));
    }
    cache.consumed = true;
    let (rows, c) = grad_out.shape();
    let n = rows as f64;
    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    let mut dxhat = Matrix::zeros(rows, c);
    for i in 0..rows {
        for j in 0..c {
            let g = grad_out[(i, j)];
            grad_beta[j] += g;
            grad_gamma[j] += g * cache.normalized[(i, j)];
            dxhat[(i, j)] = g * cache.gamma[j] * cache.scale[j];
        }
    }
    let mut mean_d = vec![0.0; c];
    let mut mean_dx = vec![0.0; c];
    for i in 0..rows {
        for j in 0..c {
            mean_d[j] += dxhat[(i, j)] / n;
            mean_dx[j] += dxhat[(i, j)] * cache.xhat[(i, j)] / n;
        }
    }
    let mut input = Matrix::zeros(rows, c);
    for i in 0..rows {
        for j in 0..c {
            input[(i, j)] = cache.inv_std[j] * (dxhat[(i, j)] - mean_d[j] - cache.xhat[(i, j)] * mean_dx[j]);
        }
    }
    Ok(SiteGrads { gamma: grad_gamma, beta: grad_beta, input })
}

/// Seeds the global statistics with the source running statistics.
pub fn init_global_from_source(state: &mut GpreRbnState) -> Result<()> {
    if state.source_batches == 0 {
        return Err(Error::UninitializedSource);
    }
    state.mu_g.clone_from(&state.mu_s);
    state.sigma2_g.clone_from(&state.sigma2_s);
    Ok(())
}
