//! Robust training without forgetting: a student trained on strongly
//! augmented inputs against a slowly moving teacher and the frozen source
//! model, one Adam step per stream batch.
//!
//! The three models share one set of global normalization statistics. The
//! student's tracked forward over a bank batch updates them and the copy is
//! pushed to the teacher and the source right after.

use crate::backbone::{adam_step, loss, AdamConfig, AdamState, ForwardOutput, Gradients, Mode, Model, Scope};
use crate::error::{Error, Result};
use crate::gprerbn::FrozenStats;
use crate::memory_bank::MemoryBank;
use crate::numerics::{softmax_rows, Matrix, RandomSource};

pub const DEFAULT_LAMBDA_BATCH: f64 = 0.01;
pub const DEFAULT_LAMBDA_RE: f64 = 0.1;
pub const DEFAULT_NU: f64 = 0.001;
pub const DEFAULT_BATCH_SIZE: usize = 64;
/// Weak and strong noise scales as fractions of the source feature spread.
pub const WEAK_NOISE_FRACTION: f64 = 0.01;
pub const STRONG_NOISE_FRACTION: f64 = 0.1;
pub const DEFAULT_P_DROP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptConfig {
    pub lambda_batch: f64,
    pub lambda_re: f64,
    pub nu: f64,
    pub batch_size: usize,
    pub sigma_w: f64,
    pub sigma_s: f64,
    pub p_drop: f64,
    pub adam: AdamConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            lambda_batch: DEFAULT_LAMBDA_BATCH,
            lambda_re: DEFAULT_LAMBDA_RE,
            nu: DEFAULT_NU,
            batch_size: DEFAULT_BATCH_SIZE,
            sigma_w: WEAK_NOISE_FRACTION,
            sigma_s: STRONG_NOISE_FRACTION,
            p_drop: DEFAULT_P_DROP,
            adam: AdamConfig::default(),
        }
    }
}

impl AdaptConfig {
    /// Defaults with noise scales proportional to `feature_std`.
    pub fn for_feature_std(feature_std: f64) -> Self {
        Self {
            sigma_w: WEAK_NOISE_FRACTION * feature_std,
            sigma_s: STRONG_NOISE_FRACTION * feature_std,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_owned()));
        if !(0.0..=1.0).contains(&self.nu) {
            return bad("nu must lie in [0, 1]");
        }
        if !(self.lambda_batch >= 0.0 && self.lambda_re >= 0.0) {
            return bad("lambda_batch and lambda_re must be >= 0");
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return bad("p_drop must lie in [0, 1)");
        }
        if !(self.sigma_w >= 0.0 && self.sigma_s >= 0.0) {
            return bad("augmentation noise scales must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewKind {
    Weak,
    Strong,
}

/// Row-wise augmentation. Weak adds isotropic noise; strong adds larger
/// noise, zeroes coordinates independently, and rescales each row.
pub fn augment(x: &Matrix, kind: ViewKind, config: &AdaptConfig, rng: &mut RandomSource) -> Matrix {
    let mut out = x.clone();
    match kind {
        ViewKind::Weak => {
            if config.sigma_w > 0.0 {
                for v in out.as_mut_slice() {
                    *v += config.sigma_w * rng.normal();
                }
            }
        }
        ViewKind::Strong => {
            for i in 0..out.rows() {
                let row = out.row_mut(i);
                for v in row.iter_mut() {
                    *v += config.sigma_s * rng.normal();
                    if rng.bernoulli(config.p_drop) {
                        *v = 0.0;
                    }
                }
                let factor = rng.uniform_range(0.8, 1.2);
                for v in row.iter_mut() {
                    *v *= factor;
                }
            }
        }
    }
    out
}

/// Per-row `L_sd + lambda_re * L_re` from student logits and detached
/// teacher and source probabilities.
pub fn instance_losses(student_logits: &Matrix, teacher: &Matrix, source: &Matrix, lambda_re: f64) -> Result<Vec<f64>> {
    if teacher.shape() != student_logits.shape() || source.shape() != student_logits.shape() {
        return Err(Error::ShapeMismatch("student, teacher and source outputs differ in shape".into()));
    }
    let probs = softmax_rows(student_logits);
    let classes = probs.cols() as f64;
    Ok((0..probs.rows())
        .map(|i| {
            let mut sd = 0.0;
            let mut re = 0.0;
            for ((p, t), a) in probs.row(i).iter().zip(teacher.row(i)).zip(source.row(i)) {
                let log_p = p.max(loss::LOG_FLOOR).ln();
                sd -= t * log_p;
                re -= a * log_p;
            }
            (sd + lambda_re * re) / classes
        })
        .collect())
}

/// Everything the total loss depends on once the stochastic parts (views,
/// tracked statistics, detached targets) are fixed.
#[derive(Clone, Debug)]
pub struct LossParts {
    pub bank_strong: Matrix,
    /// `p_T + lambda_re * p_A` on the weak views.
    pub bank_targets: Matrix,
    pub bank_stats: Vec<FrozenStats>,
    pub current_strong: Matrix,
    pub current_targets: Matrix,
    pub current_stats: Vec<FrozenStats>,
}

/// `mean_bank ell + lambda_batch * mean_current ell` and its gradient with
/// respect to the student's affine parameters.
pub fn total_loss(student: &Model, parts: &LossParts, lambda_batch: f64) -> Result<(f64, Gradients)> {
    let mut bank = student.forward_frozen(&parts.bank_strong, &parts.bank_stats)?;
    let (bank_loss, bank_grad) = loss::soft_cross_entropy(&bank.logits, &parts.bank_targets)?;
    let mut grads = student.backward(&mut bank.cache, &bank_grad, Scope::AffineOnly)?;
    let mut total = bank_loss;
    if lambda_batch != 0.0 {
        let mut cur = student.forward_frozen(&parts.current_strong, &parts.current_stats)?;
        let (cur_loss, cur_grad) = loss::soft_cross_entropy(&cur.logits, &parts.current_targets)?;
        let cur_grads = student.backward(&mut cur.cache, &cur_grad, Scope::AffineOnly)?;
        grads.add_scaled(&cur_grads, lambda_batch)?;
        total += lambda_batch * cur_loss;
    }
    Ok((total, grads))
}

#[derive(Clone, Debug)]
pub struct AdaptSession {
    student: Model,
    teacher: Model,
    source: Model,
    bank: MemoryBank,
    adam: AdamState,
    config: AdaptConfig,
    rng: RandomSource,
    t: u64,
}

impl AdaptSession {
    /// Student and teacher start as copies of `source`, with global
    /// statistics seeded from its source statistics.
    pub fn new(source: &Model, config: AdaptConfig, bank_capacity: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut source = source.clone();
        source.init_global_from_source()?;
        let bank = MemoryBank::new(bank_capacity, source.config().num_classes)?;
        let adam = AdamState::new(config.adam, &source.param_lengths(Scope::AffineOnly));
        Ok(Self {
            student: source.clone(),
            teacher: source.clone(),
            source,
            bank,
            adam,
            config,
            rng: RandomSource::new(seed),
            t: 0,
        })
    }

    pub fn student(&self) -> &Model {
        &self.student
    }

    pub fn teacher(&self) -> &Model {
        &self.teacher
    }

    pub fn source(&self) -> &Model {
        &self.source
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn config(&self) -> &AdaptConfig {
        &self.config
    }

    /// Number of optimizer steps taken.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Teacher forward with global statistics and no tracking.
    pub fn predict(&self, x: &Matrix) -> Result<ForwardOutput> {
        self.teacher.infer(x, Mode::AdaptNoTrack)
    }

    /// Category-balanced insertion of a batch under its predicted classes.
    pub fn observe(&mut self, x: &Matrix, predicted: &[usize]) -> Result<()> {
        self.bank.insert_batch(x, predicted)
    }

    /// Tracked student forward on `x`, then the shared statistics are pushed
    /// to the other two models.
    fn track(&mut self, x: &Matrix) -> Result<ForwardOutput> {
        let out = self.student.forward(x, Mode::AdaptTrack)?;
        self.teacher.copy_globals_from(&self.student);
        self.source.copy_globals_from(&self.student);
        Ok(out)
    }

    /// Updates the global statistics from a raw batch, without the bank.
    pub fn track_raw(&mut self, x: &Matrix) -> Result<()> {
        self.track(x).map(drop)
    }

    /// Draws a bank batch and runs only the tracked statistics update on its
    /// strong views.
    pub fn track_bank(&mut self) -> Result<()> {
        let bank_x = self.bank.sample_features(self.config.batch_size, &mut self.rng)?;
        let strong = augment(&bank_x, ViewKind::Strong, &self.config, &mut self.rng);
        self.track(&strong).map(drop)
    }

    fn targets(&self, weak: &Matrix) -> Result<Matrix> {
        let teacher = softmax_rows(&self.teacher.infer(weak, Mode::AdaptNoTrack)?.logits);
        if self.config.lambda_re == 0.0 {
            return Ok(teacher);
        }
        let source = softmax_rows(&self.source.infer(weak, Mode::AdaptNoTrack)?.logits);
        teacher.add_scaled(&source, self.config.lambda_re)
    }

    /// Draws views for both batches, runs the tracked student forward on the
    /// bank views, and records the detached targets and the statistics each
    /// student forward uses.
    pub fn prepare(&mut self, bank_x: &Matrix, current_x: &Matrix) -> Result<LossParts> {
        if bank_x.rows() == 0 || current_x.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let bank_weak = augment(bank_x, ViewKind::Weak, &self.config, &mut self.rng);
        let bank_strong = augment(bank_x, ViewKind::Strong, &self.config, &mut self.rng);
        let current_weak = augment(current_x, ViewKind::Weak, &self.config, &mut self.rng);
        let current_strong = augment(current_x, ViewKind::Strong, &self.config, &mut self.rng);

        let bank_stats = self.track(&bank_strong)?.cache.frozen_stats();
        let current_stats = self.student.infer(&current_strong, Mode::AdaptNoTrack)?.cache.frozen_stats();
        Ok(LossParts {
            bank_targets: self.targets(&bank_weak)?,
            bank_strong,
            bank_stats,
            current_targets: self.targets(&current_weak)?,
            current_strong,
            current_stats,
        })
    }

    /// One optimizer step on the student's affine parameters followed by the
    /// teacher EMA. Returns the loss before the step.
    pub fn adapt_step(&mut self, current_x: &Matrix) -> Result<f64> {
        let bank_x = self.bank.sample_features(self.config.batch_size, &mut self.rng)?;
        let parts = self.prepare(&bank_x, current_x)?;
        let (value, grads) = total_loss(&self.student, &parts, self.config.lambda_batch)?;
        let mut params = self.student.params_mut(Scope::AffineOnly);
        adam_step(&mut params, &grads.arrays(), &mut self.adam)?;
        self.teacher.ema_affine_from(&self.student, self.config.nu)?;
        self.t += 1;
        Ok(value)
    }
}
