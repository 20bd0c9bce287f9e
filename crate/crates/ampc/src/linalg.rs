//! Small shared linear-algebra helpers and the row-major serialization
//! representation used by every model file.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major matrix encoding for model files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixRepr {
    pub rows: usize,
    pub cols: usize,
    /// Entries in row-major order, length rows*cols.
    pub data: Vec<f64>,
}

impl MatrixRepr {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixRepr {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Config(format!(
                "matrix payload holds {} entries, header says {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

pub fn vec_to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

pub fn dvector_to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.as_slice().to_vec()
}

pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Moore-Penrose pseudo-inverse via SVD with a relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax > 0.0 { smax * rel_cutoff } else { 0.0 };
    m.clone()
        .pseudo_inverse(eps)
        .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))
}

/// Least-squares solve min ||a x - b|| via SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_cutoff: f64) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax > 0.0 { smax * rel_cutoff } else { 0.0 };
    svd.solve(b, eps)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))
}

/// Numerical rank: number of singular values above rel_cutoff * sigma_max.
pub fn numerical_rank(singular_values: &[f64], rel_cutoff: f64) -> usize {
    let smax = singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    singular_values
        .iter()
        .filter(|&&s| s > rel_cutoff * smax)
        .count()
}

/// Spectral radius of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}
