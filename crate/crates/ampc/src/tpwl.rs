//! Trajectory piecewise linearization: local affine models along a
//! representative trajectory, blended by distance-based weights, with an
//! optional POD projection onto a reduced state.
//!
//! The blended dynamics are
//! `x' = sum_i w_i(x) (A_i (x - x_i) + B_i (u - u_i) + f_i)` and likewise for
//! the output map. In reduced mode the state is `z` with `x = U_k z`
//! substituted throughout, Jacobians and affine remainders reused from the
//! full-order construction, and weights evaluated at the lifted state.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite_mat, all_finite_vec, MatrixRepr};
use crate::plant::{PlantModel, Trajectory};
use crate::pod::{PodBasis, PodBasisFile};

/// Default sharpness of the exponential distance weights.
pub const DEFAULT_WEIGHT_SHARPNESS: f64 = 25.0;

/// Affine expansion of the plant at one linearization point.
#[derive(Debug, Clone)]
pub struct LocalAffineModel {
    pub x_i: DVector<f64>,
    pub u_i: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// f(x_i, u_i).
    pub f_i: DVector<f64>,
    /// g(x_i, u_i).
    pub g_i: DVector<f64>,
}

/// Weighted combination of local affine models, optionally projected.
#[derive(Debug, Clone)]
pub struct TpwlModel {
    pub locals: Vec<LocalAffineModel>,
    pub weight_sharpness: f64,
    /// Per-component scale normalizing the distance metric (mixed units).
    pub state_scale: DVector<f64>,
    pub basis: Option<PodBasis>,
    /// Reduced linearization points U_k^T x_i when a basis is present.
    pub z_points: Vec<DVector<f64>>,
}

/// Linearization points chosen along a trajectory.
#[derive(Debug, Clone)]
pub struct SelectedPoints {
    pub points: Vec<(DVector<f64>, DVector<f64>)>,
    pub requested: usize,
}

impl SelectedPoints {
    pub fn achieved(&self) -> usize {
        self.points.len()
    }

    pub fn exact(&self) -> bool {
        self.achieved() == self.requested
    }
}

/// Per-component standard deviation of the trajectory states, floored to 1e-12
/// so constant components do not blow up the metric. This is the scale the
/// TPWL distance metric uses for mixed-unit states.
pub fn trajectory_state_scale(traj: &Trajectory) -> DVector<f64> {
    let n = traj.x_seq[0].len();
    let count = traj.x_seq.len() as f64;
    let mut mean = DVector::zeros(n);
    for x in &traj.x_seq {
        mean += x;
    }
    mean /= count;
    let mut var = DVector::zeros(n);
    for x in &traj.x_seq {
        let d = x - &mean;
        var += d.component_mul(&d);
    }
    var /= count;
    var.map(|v| v.sqrt().max(1e-12))
}

fn scaled_distance(a: &DVector<f64>, b: &DVector<f64>, scale: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = (a[i] - b[i]) / scale[i];
        acc += d * d;
    }
    acc.sqrt()
}

/// Walk the trajectory and select states whose minimum scaled distance to the
/// already selected points exceeds the threshold.
fn walk_select(traj: &Trajectory, scale: &DVector<f64>, threshold: f64) -> Vec<usize> {
    let mut selected = vec![0usize];
    for k in 1..traj.x_seq.len() {
        let d_min = selected
            .iter()
            .map(|&i| scaled_distance(&traj.x_seq[k], &traj.x_seq[i], scale))
            .fold(f64::INFINITY, f64::min);
        if d_min > threshold {
            selected.push(k);
        }
    }
    selected
}

/// Choose `s` linearization points along the trajectory, bisecting the
/// distance threshold; the first point is always the trajectory start. When
/// no threshold yields exactly `s` points the closest achievable count is
/// returned and reported through [`SelectedPoints::exact`].
pub fn select_points(traj: &Trajectory, s: usize) -> Result<SelectedPoints> {
    if traj.is_empty() {
        return Err(Error::Config("cannot select points from an empty trajectory".into()));
    }
    if s < 1 {
        return Err(Error::Config("point count s must be >= 1".into()));
    }
    let scale = trajectory_state_scale(traj);
    let distinct = walk_select(traj, &scale, 0.0).len();
    if s > distinct {
        return Err(Error::Config(format!(
            "requested {s} linearization points but the trajectory holds only {distinct} distinct states"
        )));
    }

    let pick = |indices: &[usize]| -> Vec<(DVector<f64>, DVector<f64>)> {
        indices
            .iter()
            .map(|&i| (traj.x_seq[i].clone(), traj.u_seq[i].clone()))
            .collect()
    };

    if s == 1 {
        return Ok(SelectedPoints {
            points: pick(&[0]),
            requested: 1,
        });
    }

    // count(threshold) is nonincreasing; find the largest threshold still
    // yielding at least s points, which spreads the points maximally.
    let d_max = traj
        .x_seq
        .iter()
        .map(|x| scaled_distance(x, &traj.x_seq[0], &scale))
        .fold(0.0, f64::max);
    let mut lo = 0.0; // count(lo) >= s
    let mut hi = d_max.max(1e-12); // count(hi) likely < s
    if walk_select(traj, &scale, hi).len() >= s {
        hi *= 2.0;
    }
    let mut best: Vec<usize> = walk_select(traj, &scale, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let sel = walk_select(traj, &scale, mid);
        if sel.len() >= s {
            lo = mid;
            best = sel;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * d_max.max(1.0) {
            break;
        }
    }
    // best has >= s points at threshold lo; if the count overshoots, no
    // threshold achieves s exactly (counts jump) - report closest.
    let upper = walk_select(traj, &scale, hi);
    let chosen = if best.len() == s {
        best
    } else if (best.len() as i64 - s as i64).abs() <= (upper.len() as i64 - s as i64).abs() {
        best
    } else {
        upper
    };
    Ok(SelectedPoints {
        points: pick(&chosen),
        requested: s,
    })
}

/// Central finite-difference linearization of the plant at (x_i, u_i) with
/// per-component step 1e-6 * max(1, |v_j|); the Jacobians are verified
/// against directional differences in five seeded random directions.
pub fn linearize(model: &PlantModel, x_i: &DVector<f64>, u_i: &DVector<f64>) -> Result<LocalAffineModel> {
    let n = model.n;
    let r = model.r;
    let l = model.l;
    if x_i.len() != n {
        return Err(Error::Dimension {
            context: "linearize state",
            expected: n,
            got: x_i.len(),
        });
    }
    if u_i.len() != r {
        return Err(Error::Dimension {
            context: "linearize input",
            expected: r,
            got: u_i.len(),
        });
    }

    let mut a = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(l, n);
    for j in 0..n {
        let h = 1e-6 * x_i[j].abs().max(1.0);
        let mut xp = x_i.clone();
        let mut xm = x_i.clone();
        xp[j] += h;
        xm[j] -= h;
        a.set_column(j, &((model.rhs(&xp, u_i) - model.rhs(&xm, u_i)) / (2.0 * h)));
        c.set_column(j, &((model.out(&xp, u_i) - model.out(&xm, u_i)) / (2.0 * h)));
    }
    let mut b = DMatrix::zeros(n, r);
    let mut d = DMatrix::zeros(l, r);
    for j in 0..r {
        let h = 1e-6 * u_i[j].abs().max(1.0);
        let mut up = u_i.clone();
        let mut um = u_i.clone();
        up[j] += h;
        um[j] -= h;
        b.set_column(j, &((model.rhs(x_i, &up) - model.rhs(x_i, &um)) / (2.0 * h)));
        d.set_column(j, &((model.out(x_i, &up) - model.out(x_i, &um)) / (2.0 * h)));
    }
    if !(all_finite_mat(&a) && all_finite_mat(&b) && all_finite_mat(&c) && all_finite_mat(&d)) {
        return Err(Error::Numerical("non-finite Jacobian entries at linearization point".into()));
    }

    let local = LocalAffineModel {
        x_i: x_i.clone(),
        u_i: u_i.clone(),
        a,
        b,
        c,
        d,
        f_i: model.rhs(x_i, u_i),
        g_i: model.out(x_i, u_i),
    };
    verify_jacobians(model, &local)?;
    Ok(local)
}

/// Directional-derivative residual check in five seeded random directions;
/// relative error above 1e-4 fails the construction.
fn verify_jacobians(model: &PlantModel, local: &LocalAffineModel) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7157_11ab);
    let n = local.x_i.len();
    let r = local.u_i.len();
    for _ in 0..5 {
        let dx = DVector::from_fn(n, |i, _| rng.gen_range(-1.0..1.0) * local.x_i[i].abs().max(1.0));
        let du = DVector::from_fn(r, |i, _| rng.gen_range(-1.0..1.0) * local.u_i[i].abs().max(1.0));
        let eps = 1e-5;
        let xp = &local.x_i + &dx * eps;
        let xm = &local.x_i - &dx * eps;
        let up = &local.u_i + &du * eps;
        let um = &local.u_i - &du * eps;
        let fd = (model.rhs(&xp, &up) - model.rhs(&xm, &um)) / (2.0 * eps);
        let lin = &local.a * &dx + &local.b * &du;
        let denom = fd.norm().max(local.f_i.norm()).max(1.0);
        if (fd - lin).norm() / denom > 1e-4 {
            return Err(Error::Numerical(
                "Jacobian residual check failed at linearization point".into(),
            ));
        }
    }
    Ok(())
}

impl TpwlModel {
    /// Build a full-order TPWL model from linearization points.
    pub fn from_points(
        model: &PlantModel,
        points: &[(DVector<f64>, DVector<f64>)],
        weight_sharpness: f64,
        state_scale: DVector<f64>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("TPWL needs at least one linearization point".into()));
        }
        let locals = points
            .iter()
            .map(|(x, u)| linearize(model, x, u))
            .collect::<Result<Vec<_>>>()?;
        Ok(TpwlModel {
            locals,
            weight_sharpness,
            state_scale,
            basis: None,
            z_points: Vec::new(),
        })
    }

    /// Attach a POD basis, producing the reduced-order variant.
    pub fn with_basis(mut self, basis: PodBasis) -> Result<Self> {
        if basis.n() != self.n() {
            return Err(Error::Dimension {
                context: "tpwl basis",
                expected: self.n(),
                got: basis.n(),
            });
        }
        self.z_points = self
            .locals
            .iter()
            .map(|loc| basis.project(&loc.x_i))
            .collect::<Result<Vec<_>>>()?;
        self.basis = Some(basis);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.locals[0].x_i.len()
    }

    pub fn r(&self) -> usize {
        self.locals[0].u_i.len()
    }

    pub fn l(&self) -> usize {
        self.locals[0].g_i.len()
    }

    /// Count of local models.
    pub fn points(&self) -> usize {
        self.locals.len()
    }

    /// Model order as seen by an optimizer: k when reduced, n otherwise.
    pub fn order(&self) -> usize {
        self.basis.as_ref().map_or(self.n(), |b| b.k)
    }

    /// Normalized exponential distance weights at a full state.
    pub fn weights_at(&self, x: &DVector<f64>) -> DVector<f64> {
        let s = self.locals.len();
        let d: Vec<f64> = self
            .locals
            .iter()
            .map(|loc| scaled_distance(x, &loc.x_i, &self.state_scale))
            .collect();
        let d_min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut w = DVector::zeros(s);
        if d_min <= 0.0 {
            // exact hit on one or more points
            let hits = d.iter().filter(|&&v| v == 0.0).count() as f64;
            for i in 0..s {
                w[i] = if d[i] == 0.0 { 1.0 / hits } else { 0.0 };
            }
            return w;
        }
        for i in 0..s {
            w[i] = (-self.weight_sharpness * d[i] / d_min).exp();
        }
        let total = w.sum();
        w / total
    }

    /// Blended derivative and output at a full state.
    pub fn evaluate_full(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let w = self.weights_at(x);
        let n = self.n();
        let r = self.r();
        let mut dx = DVector::zeros(n);
        let mut y = DVector::zeros(self.l());
        let mut ex = DVector::zeros(n);
        let mut eu = DVector::zeros(r);
        for (i, loc) in self.locals.iter().enumerate() {
            if w[i] == 0.0 {
                continue;
            }
            ex.copy_from(x);
            ex -= &loc.x_i;
            eu.copy_from(u);
            eu -= &loc.u_i;
            dx.gemv(w[i], &loc.a, &ex, 1.0);
            dx.gemv(w[i], &loc.b, &eu, 1.0);
            dx.axpy(w[i], &loc.f_i, 1.0);
            y.gemv(w[i], &loc.c, &ex, 1.0);
            y.gemv(w[i], &loc.d, &eu, 1.0);
            y.axpy(w[i], &loc.g_i, 1.0);
        }
        (dx, y)
    }

    /// Blended reduced derivative and output at a reduced state; the weight
    /// argument is the lifted state U_k z.
    pub fn evaluate_reduced(&self, z: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let basis = self.basis.as_ref().ok_or_else(|| {
            Error::Config("reduced-mode evaluation on a TPWL model without basis".into())
        })?;
        let x = basis.lift(z)?;
        let (dx, y) = self.evaluate_full(&x, u);
        Ok((basis.u_k.transpose() * dx, y))
    }
}

/// Simulate TPWL dynamics under a piecewise-constant input sequence using the
/// same fixed-step RK4 scheme as the plant. In reduced mode `init` is a
/// reduced state and the returned state sequence holds the lifted states.
pub fn simulate_tpwl(
    model: &TpwlModel,
    init: &DVector<f64>,
    u_seq: &[DVector<f64>],
    dt: f64,
    substeps: usize,
) -> Result<Trajectory> {
    if dt <= 0.0 || substeps == 0 {
        return Err(Error::Numerical("dt must be positive and substeps >= 1".into()));
    }
    let reduced = model.basis.is_some();
    let expected = if reduced { model.order() } else { model.n() };
    if init.len() != expected {
        return Err(Error::Dimension {
            context: "simulate_tpwl init",
            expected,
            got: init.len(),
        });
    }
    let h = dt / substeps as f64;
    let mut state = init.clone();

    let deriv = |st: &DVector<f64>, u: &DVector<f64>| -> Result<DVector<f64>> {
        if reduced {
            Ok(model.evaluate_reduced(st, u)?.0)
        } else {
            Ok(model.evaluate_full(st, u).0)
        }
    };
    let output = |st: &DVector<f64>, u: &DVector<f64>| -> Result<DVector<f64>> {
        if reduced {
            Ok(model.evaluate_reduced(st, u)?.1)
        } else {
            Ok(model.evaluate_full(st, u).1)
        }
    };
    let record_state = |st: &DVector<f64>| -> Result<DVector<f64>> {
        if reduced {
            model.basis.as_ref().unwrap().lift(st)
        } else {
            Ok(st.clone())
        }
    };

    let steps = u_seq.len();
    let mut t = Vec::with_capacity(steps + 1);
    let mut x_seq = Vec::with_capacity(steps + 1);
    let mut y_seq = Vec::with_capacity(steps + 1);
    let mut u_rec = Vec::with_capacity(steps + 1);
    t.push(0.0);
    x_seq.push(record_state(&state)?);
    y_seq.push(output(&state, &u_seq[0])?);
    u_rec.push(u_seq[0].clone());

    for (k, u) in u_seq.iter().enumerate() {
        for _ in 0..substeps {
            let k1 = deriv(&state, u)?;
            let k2 = deriv(&(&state + &k1 * (h / 2.0)), u)?;
            let k3 = deriv(&(&state + &k2 * (h / 2.0)), u)?;
            let k4 = deriv(&(&state + &k3 * h), u)?;
            state = &state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if !all_finite_vec(&state) {
                return Err(Error::IntegrationDiverged {
                    step: k,
                    detail: "TPWL state became non-finite".into(),
                });
            }
        }
        let next_u = u_seq.get(k + 1).unwrap_or(u);
        t.push((k + 1) as f64 * dt);
        x_seq.push(record_state(&state)?);
        y_seq.push(output(&state, next_u)?);
        u_rec.push(next_u.clone());
    }

    Ok(Trajectory {
        t,
        u_seq: u_rec,
        x_seq,
        y_seq,
    })
}

/// Serialized TPWL model (matrices row-major).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TpwlModelFile {
    pub locals: Vec<LocalAffineFile>,
    pub weight_sharpness: f64,
    pub state_scale: Vec<f64>,
    pub basis: Option<PodBasisFile>,
    pub requested_points: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalAffineFile {
    pub x_i: Vec<f64>,
    pub u_i: Vec<f64>,
    pub a: MatrixRepr,
    pub b: MatrixRepr,
    pub c: MatrixRepr,
    pub d: MatrixRepr,
    pub f_i: Vec<f64>,
    pub g_i: Vec<f64>,
}

impl TpwlModelFile {
    pub fn from_model(m: &TpwlModel, requested_points: Option<usize>) -> Self {
        TpwlModelFile {
            locals: m
                .locals
                .iter()
                .map(|loc| LocalAffineFile {
                    x_i: loc.x_i.as_slice().to_vec(),
                    u_i: loc.u_i.as_slice().to_vec(),
                    a: MatrixRepr::from_matrix(&loc.a),
                    b: MatrixRepr::from_matrix(&loc.b),
                    c: MatrixRepr::from_matrix(&loc.c),
                    d: MatrixRepr::from_matrix(&loc.d),
                    f_i: loc.f_i.as_slice().to_vec(),
                    g_i: loc.g_i.as_slice().to_vec(),
                })
                .collect(),
            weight_sharpness: m.weight_sharpness,
            state_scale: m.state_scale.as_slice().to_vec(),
            basis: m.basis.as_ref().map(PodBasisFile::from_basis),
            requested_points,
        }
    }

    pub fn to_model(&self) -> Result<TpwlModel> {
        let locals = self
            .locals
            .iter()
            .map(|loc| {
                Ok(LocalAffineModel {
                    x_i: DVector::from_row_slice(&loc.x_i),
                    u_i: DVector::from_row_slice(&loc.u_i),
                    a: loc.a.to_matrix()?,
                    b: loc.b.to_matrix()?,
                    c: loc.c.to_matrix()?,
                    d: loc.d.to_matrix()?,
                    f_i: DVector::from_row_slice(&loc.f_i),
                    g_i: DVector::from_row_slice(&loc.g_i),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut model = TpwlModel {
            locals,
            weight_sharpness: self.weight_sharpness,
            state_scale: DVector::from_row_slice(&self.state_scale),
            basis: None,
            z_points: Vec::new(),
        };
        if let Some(b) = &self.basis {
            model = model.with_basis(b.to_basis()?)?;
        }
        Ok(model)
    }
}
