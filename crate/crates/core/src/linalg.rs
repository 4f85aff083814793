//! Dense helpers for the small matrices this crate works with.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Builds a square matrix from row vectors.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let d = rows.len();
    if d == 0 {
        return Err(Error::Dimension("matrix has no rows".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(Error::Dimension(format!(
                "row {i} has {} entries, expected {d}",
                row.len()
            )));
        }
    }
    Ok(Matrix::from_fn(d, d, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn sup_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Smallest `k ≤ (d-1)² + 1` such that the support of `m^k` is full, using
/// boolean matrix powers. `None` when no such power exists (not primitive).
pub fn primitivity_exponent(m: &Matrix) -> Option<usize> {
    let d = m.nrows();
    let support: Vec<Vec<bool>> = (0..d)
        .map(|i| (0..d).map(|j| m[(i, j)] > 0.0).collect())
        .collect();
    let bound = (d - 1) * (d - 1) + 1;
    let mut power = support.clone();
    for k in 1..=bound {
        if power.iter().all(|row| row.iter().all(|&b| b)) {
            return Some(k);
        }
        let mut next = vec![vec![false; d]; d];
        for i in 0..d {
            for l in 0..d {
                if power[i][l] {
                    for j in 0..d {
                        next[i][j] |= support[l][j];
                    }
                }
            }
        }
        power = next;
    }
    None
}

/// Left-multiplies a row vector: returns `xᵀ M` as a column vector.
pub fn left_mul(x: &Vector, m: &Matrix) -> Vector {
    m.tr_mul(x)
}
