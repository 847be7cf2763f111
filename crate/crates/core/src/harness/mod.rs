//! Runs a method over a stream: the full teacher/student loop with output
//! refinement, its ablation variants, and per-batch baselines.
//!
//! Every step commits its predictions before any model update of that step.

mod config;
mod results;

pub use config::{
    parse_key_values, read_key_value_file, AffinityKind, DataConfig, DataSource, RunConfig, StreamSettings, KEYS,
};
pub use results::{read_summary, write_results, RunResult, StepRecord, SUMMARY_FILE, TRACE_FILE};

use std::fmt;
use std::str::FromStr;

use crate::adaptation::{AdaptConfig, AdaptSession};
use crate::backbone::{
    accuracy, adam_step, load_checkpoint, loss, pretrain_source, AdamConfig, AdamState, Mode, Model, ModelConfig, Scope,
};
use crate::error::{Error, Result};
use crate::memory_bank::DEFAULT_CAPACITY;
use crate::numerics::{softmax_rows, Matrix, RandomSource};
use crate::output_adaptation::{imbalance_lambda, refine, AffinityConfig, LambdaRule, RefineConfig, FIXED_LAMBDA};
use crate::streamgen::{cd_metric, id_metric, read_manifest, replay_stream, Stream};

/// Steps of the ablation lattice. Each adds one feature to the previous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Global statistics tracked on raw test batches.
    A,
    /// Tracking moves to category-balanced bank batches.
    B,
    /// Plus self-distillation training.
    C,
    /// Plus source regularization.
    D,
    /// Plus graph refinement at a fixed weight.
    E,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Grotta,
    Source,
    BnStat,
    Pl,
    Tent,
    OutputOnly,
    Ablation(Variant),
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Grotta,
        Method::Source,
        Method::BnStat,
        Method::Pl,
        Method::Tent,
        Method::OutputOnly,
        Method::Ablation(Variant::A),
        Method::Ablation(Variant::B),
        Method::Ablation(Variant::C),
        Method::Ablation(Variant::D),
        Method::Ablation(Variant::E),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Grotta => "grotta",
            Method::Source => "source",
            Method::BnStat => "bn_stat",
            Method::Pl => "pl",
            Method::Tent => "tent",
            Method::OutputOnly => "output_only",
            Method::Ablation(Variant::A) => "ablation_a",
            Method::Ablation(Variant::B) => "ablation_b",
            Method::Ablation(Variant::C) => "ablation_c",
            Method::Ablation(Variant::D) => "ablation_d",
            Method::Ablation(Variant::E) => "ablation_e",
        }
    }

    fn features(self) -> Option<Features> {
        let base = Features { track_raw: false, bank: true, train: false, source_reg: false, refine: None };
        let trained = Features { train: true, source_reg: true, ..base };
        Some(match self {
            Method::Ablation(Variant::A) => Features { track_raw: true, bank: false, ..base },
            Method::Ablation(Variant::B) => base,
            Method::Ablation(Variant::C) => Features { train: true, ..base },
            Method::Ablation(Variant::D) => trained,
            Method::Ablation(Variant::E) => Features { refine: Some(LambdaRule::Fixed(FIXED_LAMBDA)), ..trained },
            Method::Grotta => Features { refine: Some(LambdaRule::Adaptive), ..trained },
            Method::OutputOnly => Features { refine: Some(LambdaRule::Adaptive), ..base },
            Method::Source | Method::BnStat | Method::Pl | Method::Tent => return None,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL.into_iter().find(|m| m.name() == key).ok_or_else(|| Error::UnknownMethod(s.to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Features {
    track_raw: bool,
    bank: bool,
    train: bool,
    source_reg: bool,
    refine: Option<LambdaRule>,
}

/// Method choice and every knob the run loop reads.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSettings {
    pub method: Method,
    pub adapt: AdaptConfig,
    pub affinity: AffinityConfig,
    pub bank_capacity: usize,
    /// EMA rate of the global statistics at every site.
    pub alpha: f64,
    /// Optimizer of the per-batch baselines.
    pub baseline_adam: AdamConfig,
    pub seed: u64,
}

impl MethodSettings {
    pub fn new(method: Method, adapt: AdaptConfig, seed: u64) -> Self {
        Self {
            method,
            adapt,
            affinity: AffinityConfig::default(),
            bank_capacity: DEFAULT_CAPACITY,
            alpha: crate::gprerbn::DEFAULT_ALPHA,
            baseline_adam: AdamConfig::default(),
            seed,
        }
    }
}

enum Runner {
    Session { session: Box<AdaptSession>, features: Features, refine: Option<RefineConfig> },
    Baseline { method: Method, model: Model, adam: AdamState },
}

/// Per-step output of a method, before scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub predicted: Vec<usize>,
    pub refined: Vec<usize>,
    pub zeta: f64,
}

/// A method's mutable state over one stream.
pub struct MethodRunner {
    inner: Runner,
}

impl MethodRunner {
    pub fn new(source: &Model, settings: &MethodSettings) -> Result<Self> {
        let mut model = source.clone();
        for block in &mut model.blocks {
            block.bn.alpha = settings.alpha;
        }
        model.init_global_from_source()?;
        let inner = match settings.method.features() {
            Some(features) => {
                let mut adapt = settings.adapt;
                if !features.source_reg {
                    adapt.lambda_re = 0.0;
                }
                let session = AdaptSession::new(&model, adapt, settings.bank_capacity, settings.seed)?;
                let refine = features.refine.map(|lambda| RefineConfig { affinity: settings.affinity, lambda });
                Runner::Session { session: Box::new(session), features, refine }
            }
            None => {
                let adam = AdamState::new(settings.baseline_adam, &model.param_lengths(Scope::AffineOnly));
                Runner::Baseline { method: settings.method, model, adam }
            }
        };
        Ok(Self { inner })
    }

    /// Predicts for `x`, then applies the method's update for this step.
    pub fn step(&mut self, x: &Matrix) -> Result<StepOutput> {
        match &mut self.inner {
            Runner::Session { session, features, refine: refine_cfg } => {
                let out = session.predict(x)?;
                let probs = softmax_rows(&out.logits);
                let predicted = out.logits.argmax_rows();
                let (refined, zeta) = match refine_cfg {
                    Some(cfg) => {
                        let r = refine(&probs, &out.features, cfg)?;
                        (r.classes(), r.zeta)
                    }
                    None => (predicted.clone(), imbalance_lambda(&probs).0),
                };
                if features.track_raw {
                    session.track_raw(x)?;
                }
                if features.bank {
                    session.observe(x, &predicted)?;
                    if features.train {
                        session.adapt_step(x)?;
                    } else {
                        session.track_bank()?;
                    }
                }
                Ok(StepOutput { predicted: predicted.clone(), refined, zeta })
            }
            Runner::Baseline { method, model, adam } => {
                let predicted = baseline_step(*method, model, adam, x)?;
                let probs = Matrix::from_rows(
                    &predicted
                        .iter()
                        .map(|&c| {
                            let mut row = vec![0.0; model.config().num_classes];
                            row[c] = 1.0;
                            row
                        })
                        .collect::<Vec<_>>(),
                )?;
                let zeta = imbalance_lambda(&probs).0;
                Ok(StepOutput { refined: predicted.clone(), predicted, zeta })
            }
        }
    }

    /// The model whose predictions are reported.
    pub fn model(&self) -> &Model {
        match &self.inner {
            Runner::Session { session, .. } => session.teacher(),
            Runner::Baseline { model, .. } => model,
        }
    }

    pub fn session(&self) -> Option<&AdaptSession> {
        match &self.inner {
            Runner::Session { session, .. } => Some(session),
            Runner::Baseline { .. } => None,
        }
    }
}

/// Predictions of a per-batch baseline for `x`, updating `model` as the
/// method prescribes.
pub fn baseline_step(method: Method, model: &mut Model, adam: &mut AdamState, x: &Matrix) -> Result<Vec<usize>> {
    match method {
        Method::Source => Ok(model.infer(x, Mode::Eval)?.logits.argmax_rows()),
        Method::BnStat => Ok(model.infer(x, Mode::BatchStats)?.logits.argmax_rows()),
        Method::Tent | Method::Pl => {
            let mut out = model.infer(x, Mode::BatchStats)?;
            let predicted = out.logits.argmax_rows();
            let grad = if method == Method::Tent {
                loss::entropy(&out.logits).1
            } else {
                loss::cross_entropy(&out.logits, &predicted)?.1
            };
            let grads = model.backward(&mut out.cache, &grad, Scope::AffineOnly)?;
            let mut params = model.params_mut(Scope::AffineOnly);
            adam_step(&mut params, &grads.arrays(), adam)?;
            Ok(predicted)
        }
        other => Err(Error::UnknownMethod(format!("{other} is not a per-batch baseline"))),
    }
}

/// Runs `settings.method` from `source` over every batch of `stream`.
pub fn run_stream(source: &Model, stream: &Stream, settings: &MethodSettings) -> Result<RunResult> {
    let mut runner = MethodRunner::new(source, settings)?;
    let mut steps = Vec::with_capacity(stream.batches.len());
    for batch in &stream.batches {
        let out = runner.step(&batch.features)?;
        let correct = out.refined.iter().zip(batch.true_labels()).filter(|(p, y)| p == y).count();
        steps.push(StepRecord {
            step: batch.step,
            segment: batch.segment,
            period: batch.period,
            predicted: out.predicted,
            refined: out.refined,
            correct,
            zeta: out.zeta,
        });
    }
    let id = id_metric(&stream.period_dists)?;
    let cd = if stream.period_dists.len() >= 2 { cd_metric(&stream.period_dists)? } else { 0.0 };
    let echo = vec![
        ("method".to_owned(), settings.method.to_string()),
        ("seed".to_owned(), settings.seed.to_string()),
        ("gamma".to_owned(), format!("{:e}", stream.manifest.config.gamma)),
        ("stream_seed".to_owned(), stream.manifest.config.seed.to_string()),
        ("alpha".to_owned(), format!("{:e}", settings.alpha)),
        ("nu".to_owned(), format!("{:e}", settings.adapt.nu)),
        ("lambda_batch".to_owned(), format!("{:e}", settings.adapt.lambda_batch)),
        ("lambda_re".to_owned(), format!("{:e}", settings.adapt.lambda_re)),
        ("bank_capacity".to_owned(), settings.bank_capacity.to_string()),
        ("adapt_batch".to_owned(), settings.adapt.batch_size.to_string()),
        ("affinity".to_owned(), config::affinity_to_string(&settings.affinity)),
    ];
    Ok(RunResult::from_steps(settings.method, steps, id, cd, echo))
}

/// Trains the source model on the pretraining split. Returns the model and
/// its accuracy on the stream pool before any shift.
pub fn pretrain(config: &RunConfig) -> Result<(Model, f64)> {
    let (train, pool) = config.data.load()?;
    let model_config =
        ModelConfig { input_dim: train.dim(), hidden_dims: config.hidden_dims.clone(), num_classes: train.num_classes };
    let model = pretrain_source(&model_config, &train, &config.pretrain, &mut RandomSource::new(config.seed))?;
    let acc = accuracy(&model, &pool, Mode::Eval)?;
    Ok((model, acc))
}

/// Loads (or pretrains) the source model, builds or replays the stream, runs
/// the method and writes results when an output directory is set.
pub fn run(config: &RunConfig) -> Result<RunResult> {
    let (train, pool) = config.data.load()?;
    let model = match &config.checkpoint {
        Some(path) => load_checkpoint(path)?,
        None => pretrain(config)?.0,
    };
    let stream = match &config.manifest {
        Some(path) => replay_stream(&pool, &read_manifest(path)?)?,
        None => config.stream.generate(&pool)?,
    };
    let result = run_stream(&model, &stream, &config.method_settings(train.feature_std()))?;
    if let Some(dir) = &config.output {
        write_results(&result, dir)?;
    }
    Ok(result)
}
