use super::{adam_step, loss, AdamConfig, AdamState, Mode, Model, ModelConfig, Scope};
use crate::error::{Error, Result};
use crate::gprerbn::FrozenStats;
use crate::numerics::RandomSource;
use crate::streamgen::BaseDataset;

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 64, adam: AdamConfig::default() }
    }
}

/// Trains a fresh model with cross-entropy on labeled source data, tracking
/// running statistics at every site, then seeds the global statistics from
/// them.
pub fn pretrain_source(
    config: &ModelConfig,
    data: &BaseDataset,
    options: &PretrainOptions,
    rng: &mut RandomSource,
) -> Result<Model> {
    pretrain_observed(config, data, options, rng, |_| {})
}

/// [`pretrain_source`] that reports each batch's site statistics as they are
/// folded into the running statistics.
pub fn pretrain_observed(
    config: &ModelConfig,
    data: &BaseDataset,
    options: &PretrainOptions,
    rng: &mut RandomSource,
    mut observe: impl FnMut(&[FrozenStats]),
) -> Result<Model> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.features.cols() != config.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} features, model expects {}",
            data.features.cols(),
            config.input_dim
        )));
    }
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= config.num_classes) {
        return Err(Error::InvalidClass { class: bad, classes: config.num_classes });
    }
    let mut model = Model::new(config.clone(), rng)?;
    if options.epochs == 0 {
        return Ok(model);
    }
    let batch = options.batch_size.max(2);
    let mut adam = AdamState::new(options.adam, &model.param_lengths(Scope::All));
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..options.epochs {
        rng.shuffle(&mut order);
        let mut start = 0;
        while start < order.len() {
            let mut end = (start + batch).min(order.len());
            // Fold a trailing single row into this batch; batch norm needs two.
            if order.len() - end == 1 {
                end = order.len();
            }
            let idx = &order[start..end];
            start = end;
            if idx.len() < 2 {
                continue;
            }
            let x = data.features.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let mut out = model.forward(&x, Mode::Pretrain)?;
            observe(&out.cache.frozen_stats());
            let (_, grad) = loss::cross_entropy(&out.logits, &y)?;
            let grads = model.backward(&mut out.cache, &grad, Scope::All)?;
            let mut params = model.params_mut(Scope::All);
            adam_step(&mut params, &grads.arrays(), &mut adam)?;
        }
    }
    if model.blocks.iter().all(|b| b.bn.source_batches > 0) {
        model.init_global_from_source()?;
    }
    Ok(model)
}

/// Fraction of rows whose argmax prediction matches the label.
pub fn accuracy(model: &Model, data: &BaseDataset, mode: Mode) -> Result<f64> {
    let out = model.infer(&data.features, mode)?;
    let correct = out.logits.argmax_rows().iter().zip(&data.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / data.len() as f64)
}
