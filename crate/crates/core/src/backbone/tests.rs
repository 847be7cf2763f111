use super::*;
use crate::gprerbn::batch_stats;
use crate::numerics::softmax_rows;
use crate::streamgen::{synth_gaussians, BaseDataset};

fn config() -> ModelConfig {
    ModelConfig { input_dim: 5, hidden_dims: vec![7, 6], num_classes: 4 }
}

fn random_matrix(rng: &mut RandomSource, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

/// A model with non-trivial affine parameters and source/global statistics.
fn seeded_model(seed: u64) -> Model {
    let mut rng = RandomSource::new(seed);
    let mut m = Model::new(config(), &mut rng).unwrap();
    for block in &mut m.blocks {
        let c = block.bn.channels();
        block.bn.gamma = (0..c).map(|_| 1.0 + 0.3 * rng.normal()).collect();
        block.bn.beta = (0..c).map(|_| 0.2 * rng.normal()).collect();
        block.bn.mu_s = (0..c).map(|_| 0.5 * rng.normal()).collect();
        block.bn.sigma2_s = (0..c).map(|_| 0.5 + rng.uniform()).collect();
        block.bn.source_batches = 1;
    }
    m.init_global_from_source().unwrap();
    m
}

fn loss_at(model: &Model, x: &Matrix, frozen: &[FrozenStats], labels: &[usize]) -> f64 {
    let logits = model.forward_frozen(x, frozen).unwrap().logits;
    loss::cross_entropy(&logits, labels).unwrap().0
}

fn check_gradients(mode: Mode, scope: Scope, seed: u64) {
    let mut model = seeded_model(seed);
    let mut rng = RandomSource::new(seed + 1000);
    let x = random_matrix(&mut rng, 9, 5);
    let labels: Vec<usize> = (0..9).map(|_| rng.index(4)).collect();
    let mut out = model.forward(&x, mode).unwrap();
    let frozen = out.cache.frozen_stats();
    let (_, grad_logits) = loss::cross_entropy(&out.logits, &labels).unwrap();
    let grads = model.backward(&mut out.cache, &grad_logits, scope).unwrap();

    let h = 1e-5;
    let lengths = model.param_lengths(scope);
    assert_eq!(lengths.len(), grads.entries.len());
    for (a, &len) in lengths.iter().enumerate() {
        for j in 0..len {
            let mut plus = model.clone();
            plus.params_mut(scope)[a][j] += h;
            let mut minus = model.clone();
            minus.params_mut(scope)[a][j] -= h;
            let fd = (loss_at(&plus, &x, &frozen, &labels) - loss_at(&minus, &x, &frozen, &labels)) / (2.0 * h);
            let analytic = grads.entries[a].1[j];
            // Absolute slack covers biases feeding a normalization, whose true
            // gradient is zero and whose difference quotient is round-off.
            assert!(
                (fd - analytic).abs() <= 1e-5 * fd.abs().max(analytic.abs()) + 1e-9,
                "{mode:?} {:?}[{j}]: fd {fd} analytic {analytic}",
                grads.entries[a].0
            );
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..3 {
        for mode in [Mode::AdaptTrack, Mode::AdaptNoTrack, Mode::BatchStats] {
            check_gradients(mode, Scope::All, seed);
            check_gradients(mode, Scope::AffineOnly, seed);
        }
    }
}

#[test]
fn affine_scope_lists_two_arrays_per_site() {
    let mut model = seeded_model(1);
    let x = random_matrix(&mut RandomSource::new(2), 4, 5);
    let mut out = model.forward(&x, Mode::AdaptNoTrack).unwrap();
    let g = model.backward(&mut out.cache, &Matrix::filled(4, 4, 0.1), Scope::AffineOnly).unwrap();
    let ids: Vec<ParamId> = g.entries.iter().map(|(id, _)| *id).collect();
    assert_eq!(ids, vec![ParamId::Gamma(0), ParamId::Beta(0), ParamId::Gamma(1), ParamId::Beta(1)]);
    assert_eq!(g.get(ParamId::Gamma(1)).unwrap().len(), 6);
    assert!(g.get(ParamId::HeadWeight).is_none());
}

#[test]
fn zero_upstream_gradient_gives_zero() {
    let mut model = seeded_model(3);
    let x = random_matrix(&mut RandomSource::new(4), 6, 5);
    let mut out = model.forward(&x, Mode::AdaptNoTrack).unwrap();
    let g = model.backward(&mut out.cache, &Matrix::zeros(6, 4), Scope::All).unwrap();
    assert!(g.is_zero());
}

#[test]
fn cache_is_single_use() {
    let mut model = seeded_model(5);
    let x = random_matrix(&mut RandomSource::new(6), 3, 5);
    let mut out = model.forward(&x, Mode::AdaptNoTrack).unwrap();
    let g = Matrix::zeros(3, 4);
    model.backward(&mut out.cache, &g, Scope::All).unwrap();
    assert!(matches!(model.backward(&mut out.cache, &g, Scope::All), Err(Error::StaleCache)));
}

#[test]
fn zero_head_gives_uniform_predictions() {
    let mut model = seeded_model(7);
    model.head.weight = Matrix::zeros(6, 4);
    model.head.bias = vec![0.0; 4];
    let x = random_matrix(&mut RandomSource::new(8), 5, 5);
    let p = softmax_rows(&model.infer(&x, Mode::Eval).unwrap().logits);
    assert!(p.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn eval_and_untracked_modes_leave_model_unchanged() {
    let mut model = seeded_model(9);
    let before = model.clone();
    let x = random_matrix(&mut RandomSource::new(10), 5, 5);
    model.forward(&x, Mode::Eval).unwrap();
    model.forward(&x, Mode::AdaptNoTrack).unwrap();
    model.forward(&x, Mode::BatchStats).unwrap();
    assert_eq!(model, before);
    assert!(model.infer(&x, Mode::AdaptTrack).is_err());
    assert!(model.infer(&x, Mode::Pretrain).is_err());
}

#[test]
fn tracked_forward_moves_globals_by_one_ema_step() {
    let mut model = seeded_model(11);
    let x = random_matrix(&mut RandomSource::new(12), 8, 5);
    let alpha = model.blocks[0].bn.alpha;
    let mu0 = model.blocks[0].bn.mu_g.clone();
    let var0 = model.blocks[0].bn.sigma2_g.clone();
    let pre = model.blocks[0].linear.apply(&x).unwrap();
    let (mu, var) = batch_stats(&pre);
    model.forward(&x, Mode::AdaptTrack).unwrap();
    for c in 0..mu.len() {
        assert!((model.blocks[0].bn.mu_g[c] - ((1.0 - alpha) * mu0[c] + alpha * mu[c])).abs() < 1e-12);
        assert!((model.blocks[0].bn.sigma2_g[c] - ((1.0 - alpha) * var0[c] + alpha * var[c])).abs() < 1e-12);
    }
    assert_eq!(model.blocks[0].bn.mu_s, seeded_model(11).blocks[0].bn.mu_s);
}

#[test]
fn input_shape_is_checked() {
    let model = seeded_model(13);
    assert!(matches!(model.infer(&Matrix::zeros(3, 4), Mode::Eval), Err(Error::ShapeMismatch(_))));
}

#[test]
fn invalid_configs() {
    let mut rng = RandomSource::new(0);
    for bad in [
        ModelConfig { input_dim: 0, hidden_dims: vec![2], num_classes: 2 },
        ModelConfig { input_dim: 2, hidden_dims: vec![], num_classes: 2 },
        ModelConfig { input_dim: 2, hidden_dims: vec![2, 0], num_classes: 2 },
        ModelConfig { input_dim: 2, hidden_dims: vec![2], num_classes: 1 },
    ] {
        assert!(Model::new(bad, &mut rng).is_err());
    }
}

#[test]
fn ema_affine_and_checksum() {
    let mut a = seeded_model(14);
    let b = seeded_model(15);
    let checksum = a.parameter_checksum();
    a.ema_affine_from(&b, 0.25).unwrap();
    let expected = 0.75 * seeded_model(14).blocks[1].bn.gamma[2] + 0.25 * b.blocks[1].bn.gamma[2];
    assert!((a.blocks[1].bn.gamma[2] - expected).abs() < 1e-15);
    assert_ne!(a.parameter_checksum(), checksum);
    let mut c = seeded_model(14);
    c.blocks[0].bn.mu_g[0] += 1.0;
    assert_eq!(c.parameter_checksum(), checksum);
}

fn separable_data(seed: u64) -> BaseDataset {
    synth_gaussians(2, 8, 200, 8.0, seed).unwrap()
}

#[test]
fn pretraining_fits_separable_data() {
    let data = separable_data(1);
    let cfg = ModelConfig { input_dim: 8, hidden_dims: vec![16], num_classes: 2 };
    let options = PretrainOptions { epochs: 20, batch_size: 32, adam: AdamConfig::default() };
    let model = pretrain_source(&cfg, &data, &options, &mut RandomSource::new(2)).unwrap();
    assert!(accuracy(&model, &data, Mode::Eval).unwrap() >= 0.99);
    assert!(model.blocks[0].bn.source_batches > 0);
    assert_eq!(model.blocks[0].bn.mu_g, model.blocks[0].bn.mu_s);
}

#[test]
fn source_statistics_replay_the_running_average() {
    let data = separable_data(3);
    let cfg = ModelConfig { input_dim: 8, hidden_dims: vec![5, 4], num_classes: 2 };
    let options = PretrainOptions { epochs: 2, batch_size: 50, adam: AdamConfig::default() };
    let mut seen: Vec<Vec<FrozenStats>> = Vec::new();
    let model = pretrain_observed(&cfg, &data, &options, &mut RandomSource::new(4), |s| seen.push(s.to_vec())).unwrap();
    for site in 0..2 {
        let momentum = model.blocks[site].bn.momentum;
        let width = cfg.hidden_dims[site];
        let (mut mu, mut var) = (vec![0.0; width], vec![1.0; width]);
        for stats in &seen {
            for c in 0..width {
                mu[c] = (1.0 - momentum) * mu[c] + momentum * stats[site].norm_mu[c];
                var[c] = (1.0 - momentum) * var[c] + momentum * stats[site].norm_sigma2[c];
            }
        }
        for c in 0..width {
            assert!((mu[c] - model.blocks[site].bn.mu_s[c]).abs() < 1e-12);
            assert!((var[c] - model.blocks[site].bn.sigma2_s[c]).abs() < 1e-12);
        }
        assert_eq!(model.blocks[site].bn.source_batches, seen.len() as u64);
    }
}

#[test]
fn zero_epochs_returns_initialization() {
    let data = separable_data(5);
    let cfg = ModelConfig { input_dim: 8, hidden_dims: vec![4], num_classes: 2 };
    let options = PretrainOptions { epochs: 0, ..PretrainOptions::default() };
    let model = pretrain_source(&cfg, &data, &options, &mut RandomSource::new(6)).unwrap();
    assert_eq!(model, Model::new(cfg, &mut RandomSource::new(6)).unwrap());
}

#[test]
fn pretraining_validates_inputs() {
    let data = separable_data(7);
    let options = PretrainOptions::default();
    let wrong_dim = ModelConfig { input_dim: 3, hidden_dims: vec![4], num_classes: 2 };
    assert!(matches!(
        pretrain_source(&wrong_dim, &data, &options, &mut RandomSource::new(0)),
        Err(Error::ShapeMismatch(_))
    ));
    let data3 = synth_gaussians(3, 8, 5, 4.0, 0).unwrap();
    let too_few = ModelConfig { input_dim: 8, hidden_dims: vec![4], num_classes: 2 };
    assert!(matches!(
        pretrain_source(&too_few, &data3, &options, &mut RandomSource::new(0)),
        Err(Error::InvalidClass { .. })
    ));
}
