//! Fixtures shared by the benchmarks in `benches/`.

use ptta_core::backbone::{pretrain_source, PretrainOptions};
use ptta_core::numerics::{softmax_rows, Matrix, RandomSource};
use ptta_core::streamgen::synth_gaussians;
use ptta_core::{AdaptConfig, AdaptSession, ModelConfig};

pub fn gaussian_matrix(seed: u64, rows: usize, cols: usize, scale: f64) -> Matrix {
    let mut rng = RandomSource::new(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| scale * rng.normal()).collect()).expect("length matches")
}

/// Softmax rows of random logits, skewed toward class 0 so refinement does
/// not take the balanced-batch shortcut.
pub fn skewed_predictions(seed: u64, rows: usize, classes: usize) -> Matrix {
    let mut logits = gaussian_matrix(seed, rows, classes, 1.0);
    for i in 0..rows {
        logits[(i, 0)] += 2.0;
    }
    softmax_rows(&logits)
}

/// A session on the default synthetic task with a filled memory bank.
pub fn warm_session(hidden: &[usize]) -> (AdaptSession, Matrix) {
    let data = synth_gaussians(8, 16, 200, 6.0, 1).expect("valid synthetic task");
    let config = ModelConfig { input_dim: 16, hidden_dims: hidden.to_vec(), num_classes: 8 };
    let options = PretrainOptions { epochs: 2, ..PretrainOptions::default() };
    let source = pretrain_source(&config, &data, &options, &mut RandomSource::new(2)).expect("pretraining");
    let mut session =
        AdaptSession::new(&source, AdaptConfig::for_feature_std(data.feature_std()), 1024, 3).expect("session");
    let batch = data.features.select_rows(&(0..64).collect::<Vec<_>>());
    for _ in 0..16 {
        let predicted = session.predict(&batch).expect("forward").logits.argmax_rows();
        session.observe(&batch, &predicted).expect("insert");
    }
    (session, batch)
}
