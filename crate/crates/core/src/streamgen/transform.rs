use crate::error::{shape_err, Result};
use crate::numerics::{Matrix, RandomSource};

/// Input-space corruption applied to every sample of a segment.
#[derive(Clone, Debug, PartialEq)]
pub enum CovariateTransform {
    Identity,
    /// Additive isotropic Gaussian noise with the given standard deviation.
    GaussianNoise {
        scale: f64,
    },
    /// `x -> R x + shift`.
    Affine {
        rotation: Matrix,
        shift: Vec<f64>,
    },
    /// Per-coordinate rescaling.
    FeatureScale {
        scale: Vec<f64>,
    },
}

impl CovariateTransform {
    /// Transforms every row. Only `GaussianNoise` draws from `noise`.
    pub fn apply(&self, x: &Matrix, noise: &mut RandomSource) -> Result<Matrix> {
        let d = x.cols();
        match self {
            Self::Identity => Ok(x.clone()),
            Self::GaussianNoise { scale } => {
                let mut out = x.clone();
                for v in out.as_mut_slice() {
                    *v += scale * noise.normal();
                }
                Ok(out)
            }
            Self::Affine { rotation, shift } => {
                if rotation.shape() != (d, d) || shift.len() != d {
                    return Err(shape_err(format!("affine transform is not {d}-dimensional")));
                }
                let mut out = x.matmul_t(rotation)?;
                out.add_row_vector(shift)?;
                Ok(out)
            }
            Self::FeatureScale { scale } => {
                if scale.len() != d {
                    return Err(shape_err(format!("scale has {} entries for {d} features", scale.len())));
                }
                let mut out = x.clone();
                for i in 0..out.rows() {
                    for (v, s) in out.row_mut(i).iter_mut().zip(scale) {
                        *v *= s;
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::GaussianNoise { .. } => "gaussian_noise",
            Self::Affine { .. } => "affine",
            Self::FeatureScale { .. } => "feature_scale",
        }
    }
}

/// Rotation built from `dim` random Givens rotations of angle `angle`.
fn random_rotation(dim: usize, angle: f64, rng: &mut RandomSource) -> Matrix {
    let mut r = Matrix::identity(dim);
    if dim < 2 {
        return r;
    }
    let (s, c) = angle.sin_cos();
    for _ in 0..dim {
        let i = rng.index(dim);
        let mut j = rng.index(dim - 1);
        if j >= i {
            j += 1;
        }
        // Left-multiply by the Givens rotation in the (i, j) plane.
        for col in 0..dim {
            let (a, b) = (r[(i, col)], r[(j, col)]);
            r[(i, col)] = c * a - s * b;
            r[(j, col)] = s * a + c * b;
        }
    }
    r
}

fn random_unit(dim: usize, rng: &mut RandomSource) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

/// A cycle of shift, rescale, noise and rotate-and-shift corruptions whose
/// severity grows from `0.5 * severity` to `1.5 * severity` over the segments.
pub fn default_segments(dim: usize, count: usize, severity: f64, rng: &mut RandomSource) -> Vec<CovariateTransform> {
    (0..count)
        .map(|k| {
            let level = severity * (0.5 + k as f64 / (count.max(2) - 1) as f64);
            match k % 4 {
                0 => CovariateTransform::Affine {
                    rotation: Matrix::identity(dim),
                    shift: random_unit(dim, rng).into_iter().map(|v| 3.0 * level * v).collect(),
                },
                1 => CovariateTransform::FeatureScale {
                    scale: (0..dim).map(|_| (0.6 * level * rng.normal()).exp()).collect(),
                },
                2 => CovariateTransform::GaussianNoise { scale: 0.8 * level },
                _ => CovariateTransform::Affine {
                    rotation: random_rotation(dim, 0.35 * level, rng),
                    shift: random_unit(dim, rng).into_iter().map(|v| 1.5 * level * v).collect(),
                },
            }
        })
        .collect()
}
