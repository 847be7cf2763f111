//! Bias-guided output refinement of a batch of balanced predictions.
//!
//! Predictions `P` are smoothed over a row-stochastic affinity graph `S` by
//! solving `(I - lambda S) Z* = (1 - lambda) P`, the minimizer of
//!
//! ```text
//! (1 - lambda) sum_i |z_i - p_i|^2 + (lambda / 2) sum_ij s_ij |z_i - z_j|^2,  z_i . 1 = 1
//! ```
//!
//! for a symmetric `S`; for a general `S` it is the fixed point of
//! `Z = lambda S Z + (1 - lambda) P`.
//!
//! `lambda` comes from a batch imbalance score `zeta` through
//! `lambda = zeta^(1 / ln C)`, and the final output blends
//! `zeta * onehot(Z*) + (1 - zeta) * P`.

use crate::error::{Error, Result};
use crate::numerics::{argmax, pairwise_sq_dist, solve_linear, Matrix};

pub const DEFAULT_K: usize = 5;
/// Fixed graph weight of the refinement-without-reweighting variant.
pub const FIXED_LAMBDA: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AffinityConfig {
    /// Each row puts `1/k` on its `k` nearest other samples.
    Knn { k: usize },
    /// Gaussian kernel with bandwidth `sigma`, zero diagonal, row-normalized.
    Rbf { sigma: f64 },
}

impl Default for AffinityConfig {
    fn default() -> Self {
        Self::Knn { k: DEFAULT_K }
    }
}

/// How the graph weight is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaRule {
    /// `lambda` from the imbalance score, output blended by `zeta`.
    Adaptive,
    /// Constant `lambda`; the output is `onehot(Z*)` without blending.
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineConfig {
    pub affinity: AffinityConfig,
    pub lambda: LambdaRule,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { affinity: AffinityConfig::default(), lambda: LambdaRule::Adaptive }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementResult {
    pub p: Matrix,
    pub z_star: Matrix,
    pub z_final: Matrix,
    pub zeta: f64,
    pub lambda: f64,
}

impl RefinementResult {
    /// Reported class per row: argmax of `z_final`, ties to the lower index.
    pub fn classes(&self) -> Vec<usize> {
        self.z_final.argmax_rows()
    }
}

pub fn build_affinity(f: &Matrix, config: &AffinityConfig) -> Result<Matrix> {
    let b = f.rows();
    if b < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: b });
    }
    let dist = pairwise_sq_dist(f);
    let mut s = Matrix::zeros(b, b);
    match *config {
        AffinityConfig::Knn { k } => {
            if k == 0 || k >= b {
                return Err(Error::TooFewSamples { needed: k + 1, got: b });
            }
            let weight = 1.0 / k as f64;
            let mut order: Vec<usize> = Vec::with_capacity(b - 1);
            for i in 0..b {
                order.clear();
                order.extend((0..b).filter(|&j| j != i));
                // Stable sort keeps lower indices first among equal distances.
                order.sort_by(|&x, &y| dist[(i, x)].total_cmp(&dist[(i, y)]));
                for &j in &order[..k] {
                    s[(i, j)] = weight;
                }
            }
        }
        AffinityConfig::Rbf { sigma } => {
            if sigma.is_nan() || sigma <= 0.0 {
                return Err(Error::InvalidParameter(format!("rbf bandwidth must be > 0, got {sigma}")));
            }
            let denom = 2.0 * sigma * sigma;
            for i in 0..b {
                let mut total = 0.0;
                for j in 0..b {
                    if i != j {
                        let v = (-dist[(i, j)] / denom).exp();
                        s[(i, j)] = v;
                        total += v;
                    }
                }
                let row = s.row_mut(i);
                if total > 0.0 {
                    for v in row.iter_mut() {
                        *v /= total;
                    }
                } else {
                    // Every kernel value underflowed.
                    let uniform = 1.0 / (b - 1) as f64;
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = if j == i { 0.0 } else { uniform };
                    }
                }
            }
        }
    }
    Ok(s)
}

/// Closed-form graph-regularized predictions `(1 - lambda)(I - lambda S)^-1 P`.
pub fn lsie_solve(p: &Matrix, s: &Matrix, lambda: f64) -> Result<Matrix> {
    let b = p.rows();
    if s.shape() != (b, b) {
        return Err(Error::ShapeMismatch(format!("affinity {:?} for {b} predictions", s.shape())));
    }
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda must be in [0, 1), got {lambda}")));
    }
    let mut a = s.scale(-lambda);
    for i in 0..b {
        a[(i, i)] += 1.0;
    }
    solve_linear(&a, &p.scale(1.0 - lambda))
}

/// Imbalance score of the batch's argmax predictions and the graph weight
/// derived from it.
pub fn imbalance_lambda(p: &Matrix) -> (f64, f64) {
    let (b, classes) = p.shape();
    let mut counts = vec![0usize; classes];
    for row in p.row_iter() {
        counts[argmax(row)] += 1;
    }
    let r = classes.min(b);
    let mut order: Vec<usize> = (0..classes).collect();
    // Stable: equal counts keep ascending class order.
    order.sort_by(|&x, &y| counts[y].cmp(&counts[x]));
    let top: Vec<f64> = order[..r].iter().map(|&c| counts[c] as f64).collect();
    let total: f64 = top.iter().sum();
    if total == 0.0 {
        return (0.0, 0.0);
    }
    let uniform = 1.0 / r as f64;
    let zeta = top.iter().map(|q| (q / total - uniform).powi(2)).sum::<f64>().sqrt();
    let lambda = gamma_transform(zeta, classes);
    (zeta, lambda)
}

fn gamma_transform(zeta: f64, classes: usize) -> f64 {
    if zeta <= 0.0 {
        0.0
    } else {
        zeta.powf(1.0 / (classes as f64).ln())
    }
}

fn one_hot_rows(z: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for (i, c) in z.argmax_rows().into_iter().enumerate() {
        out[(i, c)] = 1.0;
    }
    out
}

/// Full refinement pipeline for one batch of predictions `p` with features `f`.
pub fn refine(p: &Matrix, f: &Matrix, config: &RefineConfig) -> Result<RefinementResult> {
    if p.rows() != f.rows() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} feature rows", p.rows(), f.rows())));
    }
    if p.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let (zeta, adaptive_lambda) = imbalance_lambda(p);
    let lambda = match config.lambda {
        LambdaRule::Adaptive => adaptive_lambda,
        LambdaRule::Fixed(l) => l,
    };
    let b = p.rows();
    if lambda == 0.0 || b < 2 {
        return Ok(RefinementResult { p: p.clone(), z_star: p.clone(), z_final: p.clone(), zeta, lambda });
    }
    // A batch smaller than k + 1 connects each row to all others.
    let affinity = match config.affinity {
        AffinityConfig::Knn { k } => AffinityConfig::Knn { k: k.min(b - 1) },
        other => other,
    };
    let s = build_affinity(f, &affinity)?;
    // The solve needs lambda < 1; a degenerate batch gives exactly 1.
    let solve_lambda = lambda.min(1.0 - 1e-9);
    let z_star = lsie_solve(p, &s, solve_lambda)?;
    let hard = one_hot_rows(&z_star);
    let z_final = match config.lambda {
        LambdaRule::Adaptive => hard.scale(zeta).add_scaled(p, 1.0 - zeta)?,
        LambdaRule::Fixed(_) => hard,
    };
    Ok(RefinementResult { p: p.clone(), z_star, z_final, zeta, lambda })
}
