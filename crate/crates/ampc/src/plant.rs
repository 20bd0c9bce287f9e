//! Continuous-time nonlinear plant definitions and their simulation.
//!
//! A [`PlantModel`] wraps the state-derivative map `rhs(x, u)` and the output
//! map `out(x, u)` of a system together with its dimensions, nominal
//! operating point, and a physical state box used to fail fast when an input
//! signal drives the simulation somewhere meaningless. Inputs are held
//! constant over each sample interval (zero-order hold) and integration is
//! classical fixed-step fourth-order Runge-Kutta with a configurable number
//! of internal substeps, so repeated calls are bit-identical.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::all_finite_vec;

type VectorMap = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Continuous-time system x' = rhs(x, u), y = out(x, u).
#[derive(Clone)]
pub struct PlantModel {
    /// State dimension.
    pub n: usize,
    /// Input dimension.
    pub r: usize,
    /// Output dimension.
    pub l: usize,
    rhs: VectorMap,
    out: VectorMap,
    /// Nominal initial state.
    pub x0: DVector<f64>,
    /// Nominal (steady) input.
    pub u0: DVector<f64>,
    /// Named scalar parameters, units embedded in the key names.
    pub params: BTreeMap<String, f64>,
    /// Physical state box; integration aborts outside it.
    pub state_lower: DVector<f64>,
    pub state_upper: DVector<f64>,
}

impl std::fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlantModel")
            .field("n", &self.n)
            .field("r", &self.r)
            .field("l", &self.l)
            .field("x0", &self.x0)
            .field("u0", &self.u0)
            .finish()
    }
}

/// Sampled realization of a simulation: time grid plus per-instant input,
/// state, and output records, all of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub u_seq: Vec<DVector<f64>>,
    pub x_seq: Vec<DVector<f64>>,
    pub y_seq: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

impl PlantModel {
    pub fn new(
        n: usize,
        r: usize,
        l: usize,
        rhs: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        out: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        x0: DVector<f64>,
        u0: DVector<f64>,
    ) -> Self {
        PlantModel {
            n,
            r,
            l,
            rhs: Arc::new(rhs),
            out: Arc::new(out),
            x0,
            u0,
            params: BTreeMap::new(),
            state_lower: DVector::from_element(n, f64::NEG_INFINITY),
            state_upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_state_box(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.state_lower = lower;
        self.state_upper = upper;
        self
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    /// State derivative at (x, u).
    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.rhs)(x, u)
    }

    /// Output at (x, u).
    pub fn out(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.out)(x, u)
    }

    fn state_ok(&self, x: &DVector<f64>) -> bool {
        all_finite_vec(x)
            && x.iter()
                .zip(self.state_lower.iter().zip(self.state_upper.iter()))
                .all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    /// Linear time-invariant plant x' = a x + b u, y = c x + d u.
    pub fn linear(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        x0: DVector<f64>,
        u0: DVector<f64>,
    ) -> Self {
        let n = a.nrows();
        let r = b.ncols();
        let l = c.nrows();
        assert_eq!(a.ncols(), n);
        assert_eq!(b.nrows(), n);
        assert_eq!(c.ncols(), n);
        assert_eq!(d.nrows(), l);
        assert_eq!(d.ncols(), r);
        let a2 = a.clone();
        let b2 = b.clone();
        PlantModel::new(
            n,
            r,
            l,
            move |x, u| &a2 * x + &b2 * u,
            move |x, u| &c * x + &d * u,
            x0,
            u0,
        )
    }

    /// Two non-isothermal CSTRs in series with first-order Arrhenius kinetics.
    ///
    /// States `(C_A1, T_1, C_A2, T_2)`, inputs `(Q_1, Q_2, C_A0)`, outputs
    /// `(C_A2, T_2)`. Reactor 1 is fed fresh reactant at concentration
    /// `C_A0`; its effluent feeds reactor 2. `Q_1`, `Q_2` are external heat
    /// duties on each vessel.
    pub fn two_cstr(p: TwoCstrParams) -> Self {
        let mut params = BTreeMap::new();
        params.insert("flow_m3_per_h".into(), p.flow_m3_per_h);
        params.insert("volume1_m3".into(), p.volume1_m3);
        params.insert("volume2_m3".into(), p.volume2_m3);
        params.insert("feed_temp_k".into(), p.feed_temp_k);
        params.insert("k0_per_h".into(), p.k0_per_h);
        params.insert("activation_energy_kj_per_kmol".into(), p.activation_energy_kj_per_kmol);
        params.insert("gas_constant_kj_per_kmol_k".into(), p.gas_constant_kj_per_kmol_k);
        params.insert("reaction_heat_kj_per_kmol".into(), p.reaction_heat_kj_per_kmol);
        params.insert("rho_cp_kj_per_m3_k".into(), p.rho_cp_kj_per_m3_k);

        let q = p.clone();
        let rhs = move |x: &DVector<f64>, u: &DVector<f64>| {
            let (ca1, t1, ca2, t2) = (x[0], x[1], x[2], x[3]);
            let (q1, q2, ca0) = (u[0], u[1], u[2]);
            let tau1 = q.flow_m3_per_h / q.volume1_m3;
            let tau2 = q.flow_m3_per_h / q.volume2_m3;
            let arr = |t: f64| {
                q.k0_per_h
                    * (-q.activation_energy_kj_per_kmol / (q.gas_constant_kj_per_kmol_k * t)).exp()
            };
            let r1 = arr(t1) * ca1;
            let r2 = arr(t2) * ca2;
            let heat = -q.reaction_heat_kj_per_kmol / q.rho_cp_kj_per_m3_k;
            DVector::from_row_slice(&[
                tau1 * (ca0 - ca1) - r1,
                tau1 * (q.feed_temp_k - t1) + heat * r1 + q1 / (q.rho_cp_kj_per_m3_k * q.volume1_m3),
                tau2 * (ca1 - ca2) - r2,
                tau2 * (t1 - t2) + heat * r2 + q2 / (q.rho_cp_kj_per_m3_k * q.volume2_m3),
            ])
        };
        let out = |x: &DVector<f64>, _u: &DVector<f64>| DVector::from_row_slice(&[x[2], x[3]]);

        PlantModel::new(4, 3, 2, rhs, out, p.x0.clone(), p.u0.clone())
            .with_state_box(
                DVector::from_row_slice(&[-1e-9, 250.0, -1e-9, 250.0]),
                DVector::from_row_slice(&[50.0, 600.0, 50.0, 600.0]),
            )
            .with_params(params)
    }
}

/// Parameters of the two-CSTR benchmark. All values are plain configuration
/// defaults; hours, kmol, m^3, K, kJ.
#[derive(Debug, Clone)]
pub struct TwoCstrParams {
    pub flow_m3_per_h: f64,
    pub volume1_m3: f64,
    pub volume2_m3: f64,
    pub feed_temp_k: f64,
    pub k0_per_h: f64,
    pub activation_energy_kj_per_kmol: f64,
    pub gas_constant_kj_per_kmol_k: f64,
    /// Negative for an exothermic reaction.
    pub reaction_heat_kj_per_kmol: f64,
    pub rho_cp_kj_per_m3_k: f64,
    /// Nominal initial state (C_A1, T_1, C_A2, T_2).
    pub x0: DVector<f64>,
    /// Nominal input (Q_1, Q_2, C_A0).
    pub u0: DVector<f64>,
}

impl Default for TwoCstrParams {
    fn default() -> Self {
        TwoCstrParams {
            flow_m3_per_h: 5.0,
            volume1_m3: 1.0,
            volume2_m3: 0.5,
            feed_temp_k: 320.0,
            k0_per_h: 6.0e7,
            activation_energy_kj_per_kmol: 5.0e4,
            gas_constant_kj_per_kmol_k: 8.314,
            reaction_heat_kj_per_kmol: -5.0e3,
            rho_cp_kj_per_m3_k: 231.0,
            // Open-loop steady state for the nominal input below.
            x0: DVector::from_row_slice(&[
                2.6663646655822104,
                327.2215440350171,
                2.4709033068728306,
                331.452309375047,
            ]),
            u0: DVector::from_row_slice(&[0.0, 0.0, 3.0]),
        }
    }
}

/// One classical RK4 step of size h with constant input.
fn rk4_step(model: &PlantModel, x: &DVector<f64>, u: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = model.rhs(x, u);
    let k2 = model.rhs(&(x + &k1 * (h / 2.0)), u);
    let k3 = model.rhs(&(x + &k2 * (h / 2.0)), u);
    let k4 = model.rhs(&(x + &k3 * h), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Simulate the plant under a piecewise-constant input sequence.
///
/// Returns states and outputs at every sample instant `0..=steps`; the input
/// record repeats the final input at the last instant so all sequences share
/// the time grid's length.
pub fn integrate(
    model: &PlantModel,
    x_init: &DVector<f64>,
    u_piecewise: &[DVector<f64>],
    dt: f64,
    substeps: usize,
) -> Result<Trajectory> {
    if dt <= 0.0 {
        return Err(Error::Numerical(format!("dt must be positive, got {dt}")));
    }
    if substeps == 0 {
        return Err(Error::Numerical("substeps must be >= 1".into()));
    }
    if x_init.len() != model.n {
        return Err(Error::Dimension {
            context: "integrate x_init",
            expected: model.n,
            got: x_init.len(),
        });
    }
    let steps = u_piecewise.len();
    let h = dt / substeps as f64;

    let mut x = x_init.clone();
    if !model.state_ok(&x) {
        return Err(Error::IntegrationDiverged {
            step: 0,
            detail: format!("initial state outside physical box: {:?}", x.as_slice()),
        });
    }

    let mut t = Vec::with_capacity(steps + 1);
    let mut x_seq = Vec::with_capacity(steps + 1);
    let mut y_seq = Vec::with_capacity(steps + 1);
    let mut u_seq = Vec::with_capacity(steps + 1);

    t.push(0.0);
    x_seq.push(x.clone());
    y_seq.push(model.out(&x, &u_piecewise[0]));
    u_seq.push(u_piecewise[0].clone());

    for (k, u) in u_piecewise.iter().enumerate() {
        if u.len() != model.r {
            return Err(Error::Dimension {
                context: "integrate input",
                expected: model.r,
                got: u.len(),
            });
        }
        for _ in 0..substeps {
            x = rk4_step(model, &x, u, h);
            if !model.state_ok(&x) {
                return Err(Error::IntegrationDiverged {
                    step: k,
                    detail: format!("state left physical box or became non-finite: {:?}", x.as_slice()),
                });
            }
        }
        let next_u = u_piecewise.get(k + 1).unwrap_or(u);
        t.push((k + 1) as f64 * dt);
        x_seq.push(x.clone());
        y_seq.push(model.out(&x, next_u));
        u_seq.push(next_u.clone());
    }

    Ok(Trajectory { t, u_seq, x_seq, y_seq })
}

/// Step response from the nominal steady state: the steady input is held with
/// a step of `magnitude` added on `channel` from t = 0.
pub fn step_response(
    model: &PlantModel,
    channel: usize,
    magnitude: f64,
    horizon: usize,
    dt: f64,
    substeps: usize,
) -> Result<Trajectory> {
    if channel >= model.r {
        return Err(Error::Dimension {
            context: "step_response channel",
            expected: model.r,
            got: channel,
        });
    }
    let x_ss = find_steady_state(model, &model.u0, &model.x0)?;
    let mut u = model.u0.clone();
    u[channel] += magnitude;
    let u_seq = vec![u; horizon];
    integrate(model, &x_ss, &u_seq, dt, substeps)
}

/// Newton root-finding on rhs(x, u) = 0 with a finite-difference Jacobian.
pub fn find_steady_state(
    model: &PlantModel,
    u: &DVector<f64>,
    x_guess: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut x = x_guess.clone();
    for _ in 0..100 {
        let f = model.rhs(&x, u);
        if !all_finite_vec(&f) {
            return Err(Error::Numerical("non-finite rhs during steady-state solve".into()));
        }
        let scale = 1.0 + x.amax();
        if f.amax() <= 1e-12 * (1.0 + scale) {
            return Ok(x);
        }
        let jac = fd_jacobian_x(model, &x, u);
        let lu = jac.lu();
        let dx = lu
            .solve(&(-&f))
            .ok_or_else(|| Error::Numerical("singular Jacobian in steady-state Newton".into()))?;
        // Damped update keeps the iterate finite for strongly exothermic
        // parameter sets.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &x + &dx * alpha;
            let fc = model.rhs(&cand, u);
            if all_finite_vec(&fc) && fc.norm() < f.norm() {
                x = cand;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // Stalled at machine precision is convergence, not failure.
            if f.amax() <= 1e-9 * (1.0 + scale) {
                return Ok(x);
            }
            return Err(Error::Numerical(
                "steady-state Newton stalled without residual decrease".into(),
            ));
        }
    }
    let f = model.rhs(&x, u);
    if f.amax() <= 1e-8 {
        Ok(x)
    } else {
        Err(Error::Numerical(format!(
            "steady-state Newton did not converge, residual {:.3e}",
            f.amax()
        )))
    }
}

/// Central finite-difference Jacobian of rhs with respect to x.
pub fn fd_jacobian_x(model: &PlantModel, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let n = model.n;
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fp = model.rhs(&xp, u);
        let fm = model.rhs(&xm, u);
        let col = (fp - fm) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}
