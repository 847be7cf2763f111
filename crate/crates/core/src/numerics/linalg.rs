use super::Matrix;
use crate::error::{shape_err, Error, Result};

/// Pivots smaller than this after partial pivoting are treated as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn solve_linear(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(shape_err(format!("solve_linear needs a square matrix, got {:?}", a.shape())));
    }
    if b.rows() != n {
        return Err(shape_err(format!("right-hand side has {} rows, expected {n}", b.rows())));
    }
    let m = b.cols();
    let mut lu = a.clone();
    let mut x = b.clone();

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_mag = lu[(col, col)].abs();
        for r in col + 1..n {
            let mag = lu[(r, col)].abs();
            if mag > pivot_mag {
                pivot_row = r;
                pivot_mag = mag;
            }
        }
        if pivot_mag < PIVOT_TOLERANCE {
            return Err(Error::SingularMatrix { column: col, pivot: pivot_mag });
        }
        if pivot_row != col {
            swap_rows(&mut lu, col, pivot_row);
            swap_rows(&mut x, col, pivot_row);
        }
        let pivot = lu[(col, col)];
        for r in col + 1..n {
            let factor = lu[(r, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            lu[(r, col)] = 0.0;
            for c in col + 1..n {
                lu[(r, c)] -= factor * lu[(col, c)];
            }
            for c in 0..m {
                x[(r, c)] -= factor * x[(col, c)];
            }
        }
    }

    for row in (0..n).rev() {
        let pivot = lu[(row, row)];
        for c in 0..m {
            let mut acc = x[(row, c)];
            for k in row + 1..n {
                acc -= lu[(row, k)] * x[(k, c)];
            }
            x[(row, c)] = acc / pivot;
        }
    }
    Ok(x)
}

fn swap_rows(m: &mut Matrix, i: usize, j: usize) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    for c in 0..cols {
        data.swap(i * cols + c, j * cols + c);
    }
}

/// Squared Euclidean distances between all pairs of rows.
pub fn pairwise_sq_dist(f: &Matrix) -> Matrix {
    let n = f.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = f.row(i).iter().zip(f.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}
