//! Dense matrices, seeded randomness, linear solves and simplex sampling.

mod linalg;
mod matrix;
mod random;

pub use linalg::{pairwise_sq_dist, solve_linear, PIVOT_TOLERANCE};
pub use matrix::{argmax, softmax_rows, Matrix};
pub use random::{dirichlet_sample, RandomSource};
