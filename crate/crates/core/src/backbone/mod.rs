//! A small MLP classifier: `Linear -> GpreRBN -> ReLU` blocks and a linear
//! head, with hand-written reverse-mode gradients.

mod adam;
mod checkpoint;
pub mod loss;
mod pretrain;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use pretrain::{accuracy, pretrain_observed, pretrain_source, PretrainOptions};

use crate::error::{shape_err, Error, Result};
use crate::gprerbn::{self, FrozenStats, GpreCache, GpreRbnState, Tracking};
use crate::numerics::{Matrix, RandomSource};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidParameter(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if self.input_dim == 0 || self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "input_dim and hidden_dims must be non-empty and >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// How each normalization site behaves in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, with source running statistics updated.
    Pretrain,
    /// Batch statistics only; used by per-batch recalibration baselines.
    BatchStats,
    /// Global statistics, no tracking.
    Eval,
    AdaptTrack,
    AdaptNoTrack,
}

impl Mode {
    fn mutates(self) -> bool {
        matches!(self, Mode::Pretrain | Mode::AdaptTrack)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    All,
    AffineOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in x out`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weight)?;
        out.add_row_vector(&self.bias)?;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub linear: Linear,
    pub bn: GpreRbnState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub blocks: Vec<Block>,
    pub head: Linear,
}

/// Identifies one parameter array.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamId {
    Weight(usize),
    Bias(usize),
    Gamma(usize),
    Beta(usize),
    HeadWeight,
    HeadBias,
}

/// Gradients in canonical parameter order for a scope.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub scope: Scope,
    pub entries: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    pub fn arrays(&self) -> Vec<&[f64]> {
        self.entries.iter().map(|(_, g)| g.as_slice()).collect()
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) -> Result<()> {
        if self.scope != other.scope || self.entries.len() != other.entries.len() {
            return Err(shape_err("gradient sets differ in scope"));
        }
        for ((a_id, a), (b_id, b)) in self.entries.iter_mut().zip(&other.entries) {
            if a_id != b_id || a.len() != b.len() {
                return Err(shape_err(format!("gradient {a_id:?} vs {b_id:?}")));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += factor * y;
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|(_, g)| g.iter().all(|&v| v == 0.0))
    }
}

pub struct ForwardOutput {
    pub logits: Matrix,
    /// Last hidden activation, the input to the head.
    pub features: Matrix,
    pub cache: ForwardCache,
}

pub struct ForwardCache {
    block_inputs: Vec<Matrix>,
    activations: Vec<Matrix>,
    sites: Vec<GpreCache>,
    consumed: bool,
}

impl ForwardCache {
    /// Stop-gradient and normalization statistics each site used.
    pub fn frozen_stats(&self) -> Vec<FrozenStats> {
        self.sites.iter().map(|c| c.frozen().clone()).collect()
    }
}

impl Model {
    /// Fan-in scaled uniform weights, zero biases, unit BN scale.
    pub fn new(config: ModelConfig, rng: &mut RandomSource) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.hidden_dims.len());
        let mut fan_in = config.input_dim;
        for &width in &config.hidden_dims {
            let bound = (6.0 / fan_in as f64).sqrt();
            blocks.push(Block { linear: uniform_linear(fan_in, width, bound, rng), bn: GpreRbnState::new(width) });
            fan_in = width;
        }
        let bound = (1.0 / fan_in as f64).sqrt();
        let head = uniform_linear(fan_in, config.num_classes, bound, rng);
        Ok(Self { config, blocks, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn from_parts(config: ModelConfig, blocks: Vec<Block>, head: Linear) -> Result<Self> {
        config.validate()?;
        let model = Self { config, blocks, head };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let mut fan_in = self.config.input_dim;
        if self.blocks.len() != self.config.hidden_dims.len() {
            return Err(shape_err("block count differs from hidden_dims"));
        }
        for (k, (block, &w)) in self.blocks.iter().zip(&self.config.hidden_dims).enumerate() {
            let bn = &block.bn;
            let ok = block.linear.weight.shape() == (fan_in, w)
                && block.linear.bias.len() == w
                && [&bn.gamma, &bn.beta, &bn.mu_g, &bn.sigma2_g, &bn.mu_s, &bn.sigma2_s].iter().all(|v| v.len() == w);
            if !ok {
                return Err(shape_err(format!("block {k} does not match width {w}")));
            }
            fan_in = w;
        }
        if self.head.weight.shape() != (fan_in, self.config.num_classes)
            || self.head.bias.len() != self.config.num_classes
        {
            return Err(shape_err("head shape"));
        }
        Ok(())
    }

    pub fn num_sites(&self) -> usize {
        self.blocks.len()
    }

    /// Full forward pass. Tracking and pretrain modes update the site buffers.
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<ForwardOutput> {
        let mut planned = Vec::with_capacity(self.blocks.len());
        let out = self.run(x, |_, state, f| {
            let frozen = match mode {
                Mode::Pretrain | Mode::BatchStats => gprerbn::plan_batch(state, f)?,
                Mode::Eval | Mode::AdaptNoTrack => gprerbn::plan_global(state, f, Tracking::Disable)?,
                Mode::AdaptTrack => gprerbn::plan_global(state, f, Tracking::Enable)?,
            };
            if mode == Mode::Pretrain && f.rows() < 2 {
                return Err(Error::DegenerateBatch(f.rows()));
            }
            planned.push(frozen.clone());
            Ok(frozen)
        })?;
        match mode {
            Mode::Pretrain => {
                for (block, stats) in self.blocks.iter_mut().zip(&planned) {
                    gprerbn::update_running(&mut block.bn, stats);
                }
            }
            Mode::AdaptTrack => {
                for (block, stats) in self.blocks.iter_mut().zip(&planned) {
                    block.bn.mu_g.clone_from(&stats.norm_mu);
                    block.bn.sigma2_g.clone_from(&stats.norm_sigma2);
                }
            }
            _ => {}
        }
        Ok(out)
    }

    /// Forward pass in a mode that leaves the model untouched.
    pub fn infer(&self, x: &Matrix, mode: Mode) -> Result<ForwardOutput> {
        if mode.mutates() {
            return Err(Error::InvalidParameter(format!("{mode:?} mutates the model; use forward")));
        }
        self.run(x, |_, state, f| match mode {
            Mode::BatchStats => gprerbn::plan_batch(state, f),
            _ => gprerbn::plan_global(state, f, Tracking::Disable),
        })
    }

    /// Forward pass with every site's stop-gradient and normalizing statistics
    /// supplied; batch statistics are still recomputed from the activations.
    pub fn forward_frozen(&self, x: &Matrix, frozen: &[FrozenStats]) -> Result<ForwardOutput> {
        if frozen.len() != self.blocks.len() {
            return Err(shape_err(format!("{} frozen sites for {} blocks", frozen.len(), self.blocks.len())));
        }
        self.run(x, |k, _, _| Ok(frozen[k].clone()))
    }

    fn run(
        &self,
        x: &Matrix,
        mut plan: impl FnMut(usize, &GpreRbnState, &Matrix) -> Result<FrozenStats>,
    ) -> Result<ForwardOutput> {
        if x.cols() != self.config.input_dim {
            return Err(shape_err(format!("input has {} columns, model expects {}", x.cols(), self.config.input_dim)));
        }
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        let mut activations = Vec::with_capacity(self.blocks.len());
        let mut sites = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for (k, block) in self.blocks.iter().enumerate() {
            let pre = block.linear.apply(&h)?;
            let frozen = plan(k, &block.bn, &pre)?;
            let (normed, cache) = gprerbn::forward_frozen(&block.bn, &pre, &frozen)?;
            let act = normed.map(|v| v.max(0.0));
            block_inputs.push(std::mem::replace(&mut h, act.clone()));
            activations.push(act);
            sites.push(cache);
        }
        let logits = self.head.apply(&h)?;
        Ok(ForwardOutput {
            logits,
            features: h,
            cache: ForwardCache { block_inputs, activations, sites, consumed: false },
        })
    }

    /// Reverse-mode gradients of `<grad_logits, logits>`.
    pub fn backward(&self, cache: &mut ForwardCache, grad_logits: &Matrix, scope: Scope) -> Result<Gradients> {
        if cache.consumed {
            return Err(Error::StaleCache);
        }
        if cache.sites.len() != self.blocks.len() {
            return Err(shape_err("cache was produced by a different model"));
        }
        let features = cache.activations.last().expect("model has at least one block");
        if grad_logits.shape() != (features.rows(), self.config.num_classes) {
            return Err(shape_err(format!("grad_logits {:?}", grad_logits.shape())));
        }
        cache.consumed = true;

        let mut head_grads = None;
        if scope == Scope::All {
            head_grads = Some((features.t_matmul(grad_logits)?, grad_logits.column_sums()));
        }
        let mut grad_h = grad_logits.matmul_t(&self.head.weight)?;
        let mut per_block: Vec<Vec<(ParamId, Vec<f64>)>> = Vec::with_capacity(self.blocks.len());
        for k in (0..self.blocks.len()).rev() {
            let act = &cache.activations[k];
            for (g, a) in grad_h.as_mut_slice().iter_mut().zip(act.as_slice()) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            let site = gprerbn::gpre_backward(&mut cache.sites[k], &grad_h)?;
            let mut entries = Vec::with_capacity(4);
            if scope == Scope::All {
                let input = &cache.block_inputs[k];
                entries.push((ParamId::Weight(k), input.t_matmul(&site.input)?.into_vec()));
                entries.push((ParamId::Bias(k), site.input.column_sums()));
            }
            entries.push((ParamId::Gamma(k), site.gamma));
            entries.push((ParamId::Beta(k), site.beta));
            per_block.push(entries);
            if k > 0 {
                grad_h = site.input.matmul_t(&self.blocks[k].linear.weight)?;
            }
        }
        let mut entries: Vec<(ParamId, Vec<f64>)> = per_block.into_iter().rev().flatten().collect();
        if let Some((w, b)) = head_grads {
            entries.push((ParamId::HeadWeight, w.into_vec()));
            entries.push((ParamId::HeadBias, b));
        }
        Ok(Gradients { scope, entries })
    }

    /// Parameter arrays in the same order `backward` emits gradients.
    pub fn params(&self, scope: Scope) -> Vec<(ParamId, &[f64])> {
        let mut out = Vec::new();
        for (k, block) in self.blocks.iter().enumerate() {
            if scope == Scope::All {
                out.push((ParamId::Weight(k), block.linear.weight.as_slice()));
                out.push((ParamId::Bias(k), block.linear.bias.as_slice()));
            }
            out.push((ParamId::Gamma(k), block.bn.gamma.as_slice()));
            out.push((ParamId::Beta(k), block.bn.beta.as_slice()));
        }
        if scope == Scope::All {
            out.push((ParamId::HeadWeight, self.head.weight.as_slice()));
            out.push((ParamId::HeadBias, self.head.bias.as_slice()));
        }
        out
    }

    pub fn params_mut(&mut self, scope: Scope) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for block in &mut self.blocks {
            if scope == Scope::All {
                out.push(block.linear.weight.as_mut_slice());
                out.push(block.linear.bias.as_mut_slice());
            }
            out.push(block.bn.gamma.as_mut_slice());
            out.push(block.bn.beta.as_mut_slice());
        }
        if scope == Scope::All {
            out.push(self.head.weight.as_mut_slice());
            out.push(self.head.bias.as_mut_slice());
        }
        out
    }

    pub fn param_lengths(&self, scope: Scope) -> Vec<usize> {
        self.params(scope).iter().map(|(_, p)| p.len()).collect()
    }

    /// Applies `params <- params - step * grads` for a matching gradient set.
    pub fn apply_gradients(&mut self, grads: &Gradients, step: f64) -> Result<()> {
        let mut params = self.params_mut(grads.scope);
        if params.len() != grads.entries.len() {
            return Err(shape_err("gradient set does not match model"));
        }
        for (p, (_, g)) in params.iter_mut().zip(&grads.entries) {
            if p.len() != g.len() {
                return Err(shape_err("gradient length"));
            }
            for (x, d) in p.iter_mut().zip(g) {
                *x -= step * d;
            }
        }
        Ok(())
    }

    /// `self.affine <- (1 - rate) * self.affine + rate * other.affine`.
    pub fn ema_affine_from(&mut self, other: &Model, rate: f64) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(shape_err("models differ in depth"));
        }
        for (mine, theirs) in self.blocks.iter_mut().zip(&other.blocks) {
            for (dst, src) in [(&mut mine.bn.gamma, &theirs.bn.gamma), (&mut mine.bn.beta, &theirs.bn.beta)] {
                if dst.len() != src.len() {
                    return Err(shape_err("models differ in width"));
                }
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = (1.0 - rate) * *d + rate * s;
                }
            }
        }
        Ok(())
    }

    /// Copies every site's global statistics from `other`.
    pub fn copy_globals_from(&mut self, other: &Model) {
        for (mine, theirs) in self.blocks.iter_mut().zip(&other.blocks) {
            mine.bn.copy_globals_from(&theirs.bn);
        }
    }

    /// Seeds every site's global statistics with its source statistics.
    pub fn init_global_from_source(&mut self) -> Result<()> {
        for block in &mut self.blocks {
            gprerbn::init_global_from_source(&mut block.bn)?;
        }
        Ok(())
    }

    /// FNV-1a over the bit patterns of all parameters and source statistics.
    /// Global statistics are buffers and are excluded.
    pub fn parameter_checksum(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        let mut feed = |values: &[f64]| {
            for v in values {
                for byte in v.to_bits().to_le_bytes() {
                    hash ^= u64::from(byte);
                    hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        };
        for (_, p) in self.params(Scope::All) {
            feed(p);
        }
        for block in &self.blocks {
            feed(&block.bn.mu_s);
            feed(&block.bn.sigma2_s);
        }
        hash
    }
}

fn uniform_linear(fan_in: usize, fan_out: usize, bound: f64, rng: &mut RandomSource) -> Linear {
    let data = (0..fan_in * fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
    Linear { weight: Matrix::from_vec(fan_in, fan_out, data).expect("length matches"), bias: vec![0.0; fan_out] }
}

#[cfg(test)]
mod tests;
