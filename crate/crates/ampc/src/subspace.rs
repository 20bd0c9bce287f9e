//! Subspace identification of a discrete LTI state-space model from
//! input-output data.
//!
//! The algorithm follows the classical projection route: build block-Hankel
//! matrices of past/future inputs and outputs, obliquely project the future
//! outputs along the future-input row space onto the past data, read the
//! extended observability matrix off an SVD of the projection, then recover
//! `C` (leading block rows), `A` (shift invariance), and `B`, `D` (structured
//! block-Toeplitz least squares). Data enter in deviation form: channel means
//! are removed before the Hankel construction and stored with the model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::Dataset;
use crate::linalg::{lstsq, numerical_rank, pinv, spectral_radius, MatrixRepr};

/// Relative singular-value cutoff used by every pseudo-inverse and rank
/// decision in this module.
pub const SV_CUTOFF: f64 = 1e-10;

/// Block-Hankel matrices of past/future inputs and outputs.
#[derive(Debug, Clone)]
pub struct HankelSet {
    pub u_past: DMatrix<f64>,
    pub u_future: DMatrix<f64>,
    pub y_past: DMatrix<f64>,
    pub y_future: DMatrix<f64>,
    /// Stacked past data [U_p; Y_p].
    pub z_past: DMatrix<f64>,
    /// Block rows per half.
    pub i: usize,
    /// Columns.
    pub j: usize,
    /// Channel means removed from the raw data.
    pub u_mean: DVector<f64>,
    pub y_mean: DVector<f64>,
    /// Magnitude of the raw data, the reference for rank-zero decisions.
    pub data_scale: f64,
}

/// Identified discrete-time LTI model in deviation coordinates.
#[derive(Debug, Clone)]
pub struct LinearStateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub dt: f64,
    /// Model order.
    pub s: usize,
    /// Singular values of the oblique projection, for order diagnostics.
    pub singular_values: Vec<f64>,
    /// Channel means restored around the deviation model.
    pub u_mean: DVector<f64>,
    pub y_mean: DVector<f64>,
    pub spectral_radius: f64,
    pub stable: bool,
    /// Condition warning from the shift-invariance solve, when any.
    pub warnings: Vec<String>,
}

fn block_hankel(data: &DMatrix<f64>, start: usize, block_rows: usize, cols: usize) -> DMatrix<f64> {
    let ch = data.nrows();
    let mut h = DMatrix::zeros(ch * block_rows, cols);
    for b in 0..block_rows {
        for c in 0..cols {
            let sample = data.column(start + b + c);
            for row in 0..ch {
                h[(b * ch + row, c)] = sample[row];
            }
        }
    }
    h
}

/// Build past/future block-Hankel matrices with `i` block rows per half and
/// the default (maximal) number of columns j = N - 2i + 1.
pub fn build_hankel(dataset: &Dataset, i: usize) -> Result<HankelSet> {
    build_hankel_with_cols(dataset, i, None)
}

pub fn build_hankel_with_cols(dataset: &Dataset, i: usize, j: Option<usize>) -> Result<HankelSet> {
    if i == 0 {
        return Err(Error::Config("block row count i must be >= 1".into()));
    }
    let n_data = dataset.len();
    let j = match j {
        Some(j) if j >= 1 => j,
        Some(_) => return Err(Error::Config("Hankel column count j must be >= 1".into())),
        None => {
            if n_data < 2 * i {
                return Err(Error::Config(format!(
                    "dataset of length {n_data} too short for 2i = {} block rows",
                    2 * i
                )));
            }
            n_data - 2 * i + 1
        }
    };
    if n_data < 2 * i + j - 1 {
        return Err(Error::Config(format!(
            "dataset of length {n_data} too short: need at least 2i + j - 1 = {}",
            2 * i + j - 1
        )));
    }

    let r = dataset.u_io.nrows();
    let l = dataset.y_io.nrows();
    let mut u_mean = DVector::zeros(r);
    let mut y_mean = DVector::zeros(l);
    for c in 0..n_data {
        u_mean += dataset.u_io.column(c);
        y_mean += dataset.y_io.column(c);
    }
    u_mean /= n_data as f64;
    y_mean /= n_data as f64;

    let mut u_dev = dataset.u_io.clone();
    let mut y_dev = dataset.y_io.clone();
    for mut col in u_dev.column_iter_mut() {
        col -= &u_mean;
    }
    for mut col in y_dev.column_iter_mut() {
        col -= &y_mean;
    }

    let u_past = block_hankel(&u_dev, 0, i, j);
    let u_future = block_hankel(&u_dev, i, i, j);
    let y_past = block_hankel(&y_dev, 0, i, j);
    let y_future = block_hankel(&y_dev, i, i, j);

    let mut z_past = DMatrix::zeros(u_past.nrows() + y_past.nrows(), j);
    z_past.rows_mut(0, u_past.nrows()).copy_from(&u_past);
    z_past
        .rows_mut(u_past.nrows(), y_past.nrows())
        .copy_from(&y_past);

    let data_scale = dataset
        .u_io
        .amax()
        .max(dataset.y_io.amax())
        .max(1e-300);

    Ok(HankelSet {
        u_past,
        u_future,
        y_past,
        y_future,
        z_past,
        i,
        j,
        u_mean,
        y_mean,
        data_scale,
    })
}

/// Right-multiply M by the projector onto the orthogonal complement of the
/// row space of W: M (I - W^T (W W^T)^+ W), computed without forming the
/// j x j projector.
fn project_off_rowspace(m: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = w * w.transpose();
    let gram_pinv = pinv(&gram, SV_CUTOFF)?;
    Ok(m - (m * w.transpose()) * gram_pinv * w)
}

/// Future-input rows augmented with a constant row. Sample-mean subtraction
/// leaves a small constant offset in the deviation data (the sample means of
/// a finite record are not exactly DC-consistent); annihilating the constant
/// direction together with the future inputs removes that offset from the
/// projection, so noise-free data yields an exactly rank-s projection.
fn annihilator_rows(h: &HankelSet) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(h.u_future.nrows() + 1, h.j);
    w.rows_mut(0, h.u_future.nrows()).copy_from(&h.u_future);
    w.row_mut(h.u_future.nrows()).fill(1.0);
    w
}

/// Oblique projection of the future outputs along the future-input row space
/// onto the row space of the past data.
pub fn oblique_project(h: &HankelSet) -> Result<DMatrix<f64>> {
    let w = annihilator_rows(h);
    let yf_perp = project_off_rowspace(&h.y_future, &w)?;
    let zp_perp = project_off_rowspace(&h.z_past, &w)?;
    let sv = zp_perp.clone().svd(false, false).singular_values;
    // Rank-zero test against the raw data magnitude, so deviation dust from
    // a constant record does not masquerade as excitation.
    let reference = h.data_scale * (h.j as f64).sqrt();
    if sv.max() <= SV_CUTOFF * reference {
        return Err(Error::PersistenceOfExcitation(
            "projected past data is numerically rank zero; the input does not excite the system"
                .into(),
        ));
    }
    let zp_perp_pinv = pinv(&zp_perp, SV_CUTOFF)?;
    Ok(yf_perp * zp_perp_pinv * &h.z_past)
}

/// How to pick the identified order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderChoice {
    Explicit(usize),
    /// Keep singular values above this relative cutoff.
    RelativeCutoff(f64),
}

/// Identify (A, B, C, D) from a dataset.
pub fn identify(dataset: &Dataset, i: usize, order: OrderChoice) -> Result<LinearStateSpaceModel> {
    let h = build_hankel(dataset, i)?;
    let l = dataset.y_io.nrows();
    let r = dataset.u_io.nrows();

    let o_i = oblique_project(&h)?;
    let svd = o_i.clone().svd(true, false);
    let svs: Vec<f64> = svd.singular_values.iter().cloned().collect();
    let rank = numerical_rank(&svs, SV_CUTOFF);

    let s = match order {
        OrderChoice::Explicit(s) => {
            if s == 0 {
                return Err(Error::Config("model order must be >= 1".into()));
            }
            if s > rank {
                return Err(Error::RankDeficient { requested: s, rank });
            }
            s
        }
        OrderChoice::RelativeCutoff(cut) => {
            let smax = svs.first().cloned().unwrap_or(0.0);
            let k = svs.iter().filter(|&&v| v > cut * smax).count();
            if k == 0 {
                return Err(Error::PersistenceOfExcitation(
                    "oblique projection has no singular values above the cutoff".into(),
                ));
            }
            k
        }
    };
    if i * l <= s {
        return Err(Error::Config(format!(
            "need i*l > s for the shift-invariance solve, got i*l = {} and s = {s}",
            i * l
        )));
    }

    let u_all = svd.u.expect("left singular vectors requested");
    let u1 = u_all.columns(0, s).into_owned();
    // Gamma_i = U_1 S_1^{1/2}
    let s_half = DMatrix::from_diagonal(&DVector::from_iterator(
        s,
        svs.iter().take(s).map(|v| v.sqrt()),
    ));
    let gamma = &u1 * s_half;

    // C = first l rows of Gamma_i; A from the shift relation.
    let c = gamma.rows(0, l).into_owned();
    let gamma_lower = gamma.rows(0, l * (i - 1)).into_owned();
    let gamma_upper = gamma.rows(l, l * (i - 1)).into_owned();
    let mut warnings = Vec::new();
    {
        let sv = gamma_lower.clone().svd(false, false).singular_values;
        let smin = sv.min();
        let smax = sv.max();
        if smin <= 0.0 || smax / smin > 1e10 {
            warnings.push(format!(
                "shift-invariance system ill-conditioned (cond ~ {:.2e})",
                if smin > 0.0 { smax / smin } else { f64::INFINITY }
            ));
        }
    }
    let a = lstsq(&gamma_lower, &gamma_upper, SV_CUTOFF)?;

    // Gamma_i^perp = U_2^T spans the left null space of Gamma_i.
    let gamma_perp = u_all.columns(s, l * i - s).transpose().into_owned();
    // The constant row rides along so the per-block offset left by sample-mean
    // subtraction is estimated jointly instead of polluting B and D.
    let w = annihilator_rows(&h);
    let m_ext = &gamma_perp * &h.y_future * pinv(&w, SV_CUTOFF)?;
    let m_full = m_ext.columns(0, r * i).into_owned();
    let m_offset = m_ext.column(r * i).into_owned();

    // Stack the step-5 block system: rows q = 1..=i of
    //   M_q = [L_q .. L_i 0 ..] [I_l 0; 0 Gamma_lower] [D; B]
    let p_rows = gamma_perp.nrows(); // l*i - s
    let mut lhs = DMatrix::zeros(p_rows * i, l + s);
    let mut rhs = DMatrix::zeros(p_rows * i, r);
    for q in 0..i {
        // M_{q+1}
        rhs.rows_mut(q * p_rows, p_rows)
            .copy_from(&m_full.columns(q * r, r));
        // Toeplitz row [L_{q+1} ... L_i 0 ... 0] times the block diagonal:
        // first block column pairs L_{q+1} with I_l, the remaining blocks
        // multiply the leading rows of Gamma.
        let mut toeplitz = DMatrix::zeros(p_rows, l * i);
        for (offset, src) in (q..i).enumerate() {
            toeplitz
                .columns_mut(offset * l, l)
                .copy_from(&gamma_perp.columns(src * l, l));
        }
        let l_first = toeplitz.columns(0, l).into_owned();
        let l_rest = toeplitz.columns(l, l * (i - 1)).into_owned();
        lhs.view_mut((q * p_rows, 0), (p_rows, l)).copy_from(&l_first);
        lhs.view_mut((q * p_rows, l), (p_rows, s))
            .copy_from(&(&l_rest * &gamma_lower));
    }
    let db = lstsq(&lhs, &rhs, SV_CUTOFF)?;
    let d = db.rows(0, l).into_owned();
    let b = db.rows(l, s).into_owned();

    // Recover the residual output offset delta_y from the constant column
    // (Gamma_perp (1_i (x) delta_y) = m_offset) and fold it into the mean.
    let mut k_sum = DMatrix::zeros(p_rows, l);
    for q in 0..i {
        k_sum += gamma_perp.columns(q * l, l);
    }
    let delta_y = lstsq(&k_sum, &DMatrix::from_column_slice(p_rows, 1, m_offset.as_slice()), SV_CUTOFF)?;
    let y_mean = &h.y_mean + delta_y.column(0);

    let rho = spectral_radius(&a);
    Ok(LinearStateSpaceModel {
        a,
        b,
        c,
        d,
        dt: dataset.dt,
        s,
        singular_values: svs,
        u_mean: h.u_mean,
        y_mean,
        spectral_radius: rho,
        stable: rho < 1.0,
        warnings,
    })
}

impl LinearStateSpaceModel {
    /// Construct directly from matrices (zero means), mainly for tests and
    /// simulation of known systems.
    pub fn from_matrices(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        dt: f64,
    ) -> Self {
        let s = a.nrows();
        let r = b.ncols();
        let l = c.nrows();
        let rho = spectral_radius(&a);
        LinearStateSpaceModel {
            a,
            b,
            c,
            d,
            dt,
            s,
            singular_values: Vec::new(),
            u_mean: DVector::zeros(r),
            y_mean: DVector::zeros(l),
            spectral_radius: rho,
            stable: rho < 1.0,
            warnings: Vec::new(),
        }
    }

    pub fn r(&self) -> usize {
        self.b.ncols()
    }

    pub fn l(&self) -> usize {
        self.c.nrows()
    }

    /// Markov parameters D, CB, CAB, ..., CA^(count-2)B.
    pub fn markov_parameters(&self, count: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(count);
        out.push(self.d.clone());
        let mut a_pow_b = self.b.clone();
        for _ in 1..count {
            out.push(&self.c * &a_pow_b);
            a_pow_b = &self.a * a_pow_b;
        }
        out
    }

    /// Simulate the recursion z_{k+1} = A z_k + B u_k, y_k = C z_k + D u_k in
    /// deviation form; channel means are subtracted from inputs and added
    /// back onto outputs. `z0 = None` starts from the origin.
    pub fn simulate(&self, z0: Option<&DVector<f64>>, u_seq: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut z = z0.cloned().unwrap_or_else(|| DVector::zeros(self.s));
        let mut out = Vec::with_capacity(u_seq.len());
        for u in u_seq {
            let u_dev = u - &self.u_mean;
            out.push(&self.c * &z + &self.d * &u_dev + &self.y_mean);
            z = &self.a * z + &self.b * u_dev;
        }
        out
    }

    /// Least-squares initial state from a short input/output window: solves
    /// the stacked observability system for z_0 given the first `window`
    /// samples.
    pub fn estimate_initial_state(
        &self,
        u_seq: &[DVector<f64>],
        y_seq: &[DVector<f64>],
        window: usize,
    ) -> Result<DVector<f64>> {
        let w = window.min(u_seq.len()).min(y_seq.len());
        if w == 0 {
            return Ok(DVector::zeros(self.s));
        }
        let l = self.l();
        let mut obs = DMatrix::zeros(l * w, self.s);
        let mut resid = DMatrix::zeros(l * w, 1);
        let mut a_pow = DMatrix::identity(self.s, self.s);
        // forced response accumulator
        let mut z_forced = DVector::zeros(self.s);
        for k in 0..w {
            obs.rows_mut(k * l, l).copy_from(&(&self.c * &a_pow));
            let u_dev = &u_seq[k] - &self.u_mean;
            let y_free = &y_seq[k] - &self.y_mean - &self.c * &z_forced - &self.d * &u_dev;
            resid.rows_mut(k * l, l).copy_from(&y_free);
            z_forced = &self.a * z_forced + &self.b * u_dev;
            a_pow = &self.a * a_pow;
        }
        let z0 = lstsq(&obs, &resid, SV_CUTOFF)?;
        Ok(z0.column(0).into_owned())
    }
}

/// Serialized LTI model (matrices row-major).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LtiModelFile {
    pub a: MatrixRepr,
    pub b: MatrixRepr,
    pub c: MatrixRepr,
    pub d: MatrixRepr,
    pub dt: f64,
    pub s: usize,
    pub singular_values: Vec<f64>,
    pub u_mean: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub spectral_radius: f64,
    pub stable: bool,
}

impl LtiModelFile {
    pub fn from_model(m: &LinearStateSpaceModel) -> Self {
        LtiModelFile {
            a: MatrixRepr::from_matrix(&m.a),
            b: MatrixRepr::from_matrix(&m.b),
            c: MatrixRepr::from_matrix(&m.c),
            d: MatrixRepr::from_matrix(&m.d),
            dt: m.dt,
            s: m.s,
            singular_values: m.singular_values.clone(),
            u_mean: m.u_mean.as_slice().to_vec(),
            y_mean: m.y_mean.as_slice().to_vec(),
            spectral_radius: m.spectral_radius,
            stable: m.stable,
        }
    }

    pub fn to_model(&self) -> Result<LinearStateSpaceModel> {
        Ok(LinearStateSpaceModel {
            a: self.a.to_matrix()?,
            b: self.b.to_matrix()?,
            c: self.c.to_matrix()?,
            d: self.d.to_matrix()?,
            dt: self.dt,
            s: self.s,
            singular_values: self.singular_values.clone(),
            u_mean: DVector::from_row_slice(&self.u_mean),
            y_mean: DVector::from_row_slice(&self.y_mean),
            spectral_radius: self.spectral_radius,
            stable: self.stable,
            warnings: Vec::new(),
        })
    }
}

/// Assemble a [`Dataset`]-shaped record from raw discrete input/output
/// sequences (no underlying continuous trajectory), used when identifying
/// from externally produced data.
pub fn dataset_from_io(
    u_io: DMatrix<f64>,
    y_io: DMatrix<f64>,
    dt: f64,
) -> Result<Dataset> {
    use crate::plant::Trajectory;
    if u_io.ncols() != y_io.ncols() {
        return Err(Error::Dimension {
            context: "dataset_from_io columns",
            expected: u_io.ncols(),
            got: y_io.ncols(),
        });
    }
    let n_data = u_io.ncols();
    let mut t = Vec::with_capacity(n_data + 1);
    let mut u_seq = Vec::with_capacity(n_data + 1);
    let mut y_seq = Vec::with_capacity(n_data + 1);
    let mut x_seq = Vec::with_capacity(n_data + 1);
    for k in 0..n_data {
        t.push(k as f64 * dt);
        u_seq.push(u_io.column(k).into_owned());
        y_seq.push(y_io.column(k).into_owned());
        x_seq.push(DVector::zeros(0));
    }
    t.push(n_data as f64 * dt);
    u_seq.push(u_io.column(n_data - 1).into_owned());
    y_seq.push(y_io.column(n_data - 1).into_owned());
    x_seq.push(DVector::zeros(0));
    Ok(Dataset {
        traj: Trajectory { t, u_seq, x_seq, y_seq },
        dt,
        snapshot: DMatrix::zeros(0, n_data),
        u_io,
        y_io,
        warnings: Vec::new(),
    })
}
