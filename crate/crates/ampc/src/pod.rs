//! Proper orthogonal decomposition of state snapshots.
//!
//! The basis comes straight from the SVD of the snapshot matrix; snapshots
//! are used raw by default, with optional mean-centering behind a flag.
//! Columns are sign-canonicalized (first nonzero entry nonnegative) so a
//! serialized basis is reproducible across runs and platforms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, MatrixRepr};

/// How to pick the retained order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderSelection {
    /// Keep exactly k directions.
    Explicit(usize),
    /// Keep the smallest k whose captured energy reaches the threshold.
    EnergyThreshold(f64),
}

/// Orthonormal projection basis with its SVD diagnostics.
#[derive(Debug, Clone)]
pub struct PodBasis {
    /// n x k orthonormal columns.
    pub u_k: DMatrix<f64>,
    /// All singular values of the snapshot matrix, descending.
    pub singular_values: Vec<f64>,
    pub k: usize,
    /// Sum of the first k squared singular values over the total.
    pub energy_captured: f64,
    /// Snapshot mean subtracted before the SVD, when centering was enabled.
    pub mean: Option<DVector<f64>>,
}

const RANK_CUTOFF: f64 = 1e-12;

/// Compute a POD basis from an n x N snapshot matrix (N >= n).
pub fn compute_basis(
    snapshots: &DMatrix<f64>,
    order: OrderSelection,
    mean_center: bool,
) -> Result<PodBasis> {
    let n = snapshots.nrows();
    let big_n = snapshots.ncols();
    if big_n < n {
        return Err(Error::Config(format!(
            "snapshot matrix needs at least as many columns as rows, got {n}x{big_n}"
        )));
    }
    let mean = if mean_center {
        let mut m = DVector::zeros(n);
        for c in 0..big_n {
            m += snapshots.column(c);
        }
        Some(m / big_n as f64)
    } else {
        None
    };
    let mut x = snapshots.clone();
    if let Some(m) = &mean {
        for mut col in x.column_iter_mut() {
            col -= m;
        }
    }

    let svd = x.svd(true, false);
    let mut u = svd.u.expect("left singular vectors requested");
    let sigma: Vec<f64> = svd.singular_values.iter().cloned().collect();

    // Sign canonicalization for reproducible serialization.
    for j in 0..u.ncols() {
        let lead = u.column(j).iter().cloned().find(|v| *v != 0.0);
        if let Some(v) = lead {
            if v < 0.0 {
                let negated = -u.column(j);
                u.set_column(j, &negated);
            }
        }
    }

    let total_energy: f64 = sigma.iter().map(|s| s * s).sum();
    let rank = numerical_rank(&sigma, RANK_CUTOFF);
    let k = match order {
        OrderSelection::Explicit(k) => {
            if k == 0 || k > n {
                return Err(Error::Config(format!("order k = {k} outside 1..={n}")));
            }
            if k > rank {
                return Err(Error::RankDeficient {
                    requested: k,
                    rank,
                });
            }
            k
        }
        OrderSelection::EnergyThreshold(theta) => {
            if !(0.0..=1.0).contains(&theta) {
                return Err(Error::Config(format!(
                    "energy threshold must lie in [0, 1], got {theta}"
                )));
            }
            if total_energy == 0.0 {
                return Err(Error::RankDeficient { requested: 1, rank: 0 });
            }
            let mut acc = 0.0;
            let mut k = rank.max(1);
            for (idx, s) in sigma.iter().enumerate() {
                acc += s * s;
                if acc / total_energy >= theta {
                    k = idx + 1;
                    break;
                }
            }
            k
        }
    };

    let energy_captured = if total_energy > 0.0 {
        sigma.iter().take(k).map(|s| s * s).sum::<f64>() / total_energy
    } else {
        0.0
    };

    Ok(PodBasis {
        u_k: u.columns(0, k).into_owned(),
        singular_values: sigma,
        k,
        energy_captured,
        mean,
    })
}

impl PodBasis {
    /// Full state dimension.
    pub fn n(&self) -> usize {
        self.u_k.nrows()
    }

    /// z = U_k^T (x - mean).
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n() {
            return Err(Error::Dimension {
                context: "pod project",
                expected: self.n(),
                got: x.len(),
            });
        }
        match &self.mean {
            Some(m) => Ok(self.u_k.transpose() * (x - m)),
            None => Ok(self.u_k.transpose() * x),
        }
    }

    /// x = U_k z + mean.
    pub fn lift(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.k {
            return Err(Error::Dimension {
                context: "pod lift",
                expected: self.k,
                got: z.len(),
            });
        }
        match &self.mean {
            Some(m) => Ok(&self.u_k * z + m),
            None => Ok(&self.u_k * z),
        }
    }

    /// Squared Frobenius reconstruction error of projecting the given
    /// snapshots onto the basis.
    pub fn reconstruction_error_sq(&self, snapshots: &DMatrix<f64>) -> f64 {
        let mut err = 0.0;
        for c in 0..snapshots.ncols() {
            let x = snapshots.column(c).into_owned();
            let xr = self
                .lift(&self.project(&x).expect("dimension checked"))
                .expect("dimension checked");
            err += (x - xr).norm_squared();
        }
        err
    }
}

/// Serialized form of a basis (matrices row-major).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PodBasisFile {
    pub u_k: MatrixRepr,
    pub singular_values: Vec<f64>,
    pub k: usize,
    pub energy_captured: f64,
    pub mean: Option<Vec<f64>>,
}

impl PodBasisFile {
    pub fn from_basis(b: &PodBasis) -> Self {
        PodBasisFile {
            u_k: MatrixRepr::from_matrix(&b.u_k),
            singular_values: b.singular_values.clone(),
            k: b.k,
            energy_captured: b.energy_captured,
            mean: b.mean.as_ref().map(|m| m.as_slice().to_vec()),
        }
    }

    pub fn to_basis(&self) -> Result<PodBasis> {
        Ok(PodBasis {
            u_k: self.u_k.to_matrix()?,
            singular_values: self.singular_values.clone(),
            k: self.k,
            energy_captured: self.energy_captured,
            mean: self.mean.as_ref().map(|m| DVector::from_row_slice(m)),
        })
    }
}
