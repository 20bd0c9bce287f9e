//! Prediction backends: the original plant, TPWL (full and reduced),
//! subspace LTI, and NN predictors behind one interface.

use nalgebra::{DMatrix, DVector};

use super::runner::IoHistory;
use super::{ModelIc, PredictionModel};
use crate::error::{Error, Result};
use crate::nn::NNPredictor;
use crate::plant::{integrate, PlantModel};
use crate::subspace::LinearStateSpaceModel;
use crate::tpwl::{simulate_tpwl, TpwlModel};

/// The original nonlinear plant integrated over the horizon (the reference
/// controller everybody else is compared against).
pub struct ExactPlantPredictor {
    pub plant: PlantModel,
    pub dt: f64,
    pub substeps: usize,
}

impl PredictionModel for ExactPlantPredictor {
    fn kind(&self) -> String {
        "original".into()
    }

    fn dim(&self) -> Option<usize> {
        Some(self.plant.n)
    }

    fn predict(&self, ic: &ModelIc, u_seq: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let ModelIc::FullState(x0) = ic else {
            return Err(Error::Config("plant backend needs a full-state initial condition".into()));
        };
        let traj = integrate(&self.plant, x0, u_seq, self.dt, self.substeps)?;
        Ok(traj.y_seq[1..].to_vec())
    }

    fn make_ic(&self, x_true: &DVector<f64>, _history: &IoHistory) -> Result<ModelIc> {
        Ok(ModelIc::FullState(x_true.clone()))
    }
}

/// TPWL backend; reduced when the model carries a basis.
pub struct TpwlPredictor {
    pub model: TpwlModel,
    pub dt: f64,
    pub substeps: usize,
    pub tag: String,
}

impl PredictionModel for TpwlPredictor {
    fn kind(&self) -> String {
        self.tag.clone()
    }

    fn dim(&self) -> Option<usize> {
        Some(self.model.order())
    }

    fn predict(&self, ic: &ModelIc, u_seq: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let init = match (ic, self.model.basis.is_some()) {
            (ModelIc::FullState(x), false) => x.clone(),
            (ModelIc::Reduced(z), true) => z.clone(),
            _ => {
                return Err(Error::Config(
                    "TPWL backend initial condition does not match its projection mode".into(),
                ))
            }
        };
        let traj = simulate_tpwl(&self.model, &init, u_seq, self.dt, self.substeps)?;
        Ok(traj.y_seq[1..].to_vec())
    }

    fn make_ic(&self, x_true: &DVector<f64>, _history: &IoHistory) -> Result<ModelIc> {
        match &self.model.basis {
            Some(basis) => Ok(ModelIc::Reduced(basis.project(x_true)?)),
            None => Ok(ModelIc::FullState(x_true.clone())),
        }
    }
}

/// Subspace LTI backend with analytic prediction matrices and a
/// least-squares state estimate from the recent I/O window.
pub struct LtiPredictor {
    pub model: LinearStateSpaceModel,
    /// I/O window length for the initial-state estimate (2i by convention).
    pub estimation_window: usize,
}

impl LtiPredictor {
    /// y_hat_j = C z_{j+1} + D u_dev_{j+1} + y_mean, with the final move held
    /// (zero-order extension) for the terminal feedthrough term.
    fn predict_from_state(&self, z0: &DVector<f64>, u_seq: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = u_seq.len();
        let m = &self.model;
        let mut z = z0.clone();
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let u_dev = &u_seq[j] - &m.u_mean;
            z = &m.a * z + &m.b * u_dev;
            let u_next = &u_seq[(j + 1).min(n - 1)] - &m.u_mean;
            out.push(&m.c * &z + &m.d * u_next + &m.y_mean);
        }
        out
    }
}

impl PredictionModel for LtiPredictor {
    fn kind(&self) -> String {
        "subspace".into()
    }

    fn dim(&self) -> Option<usize> {
        Some(self.model.s)
    }

    fn predict(&self, ic: &ModelIc, u_seq: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let ModelIc::LtiState(z0) = ic else {
            return Err(Error::Config("subspace backend needs an LTI state initial condition".into()));
        };
        Ok(self.predict_from_state(z0, u_seq))
    }

    fn make_ic(&self, _x_true: &DVector<f64>, history: &IoHistory) -> Result<ModelIc> {
        let window = self.estimation_window.max(1);
        let (u_win, y_win) = history.tail(window);
        if u_win.is_empty() {
            return Ok(ModelIc::LtiState(DVector::zeros(self.model.s)));
        }
        // z0 solves the window fit; roll it forward to the current instant
        let z0 = self.model.estimate_initial_state(&u_win, &y_win, u_win.len())?;
        let mut z = z0;
        for u in &u_win {
            z = &self.model.a * z + &self.model.b * (u - &self.model.u_mean);
        }
        Ok(ModelIc::LtiState(z))
    }

    fn prediction_sensitivity(&self, _ic: &ModelIc, n: usize) -> Option<DMatrix<f64>> {
        let m = &self.model;
        let l = m.l();
        let r = m.r();
        let mut h = DMatrix::zeros(n * l, n * r);
        // powers of A times B: block (j, q) = C A^{j-q} B for q <= j
        let mut ca_pow_b = Vec::with_capacity(n);
        let mut a_pow_b = m.b.clone();
        for _ in 0..n {
            ca_pow_b.push(&m.c * &a_pow_b);
            a_pow_b = &m.a * &a_pow_b;
        }
        for j in 0..n {
            for q in 0..=j {
                let block = &ca_pow_b[j - q];
                for bi in 0..l {
                    for bj in 0..r {
                        h[(j * l + bi, q * r + bj)] += block[(bi, bj)];
                    }
                }
            }
            // feedthrough of the next move, final move held
            let q = (j + 1).min(n - 1);
            for bi in 0..l {
                for bj in 0..r {
                    h[(j * l + bi, q * r + bj)] += m.d[(bi, bj)];
                }
            }
        }
        Some(h)
    }
}

/// NN backend: the current measurement plus the recent I/O record fill the
/// history window; the first decision move completes the final history pair.
pub struct NnBackend {
    pub model: NNPredictor,
    /// Input used to pad history before enough steps have been recorded.
    pub pad_input: DVector<f64>,
}

impl PredictionModel for NnBackend {
    fn kind(&self) -> String {
        "nn".into()
    }

    fn dim(&self) -> Option<usize> {
        None
    }

    fn predict(&self, ic: &ModelIc, u_seq: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let ModelIc::IoWindow {
            past_u,
            past_y,
            current_y,
        } = ic
        else {
            return Err(Error::Config("nn backend needs an I/O-window initial condition".into()));
        };
        if u_seq.len() != self.model.n_future {
            return Err(Error::Dimension {
                context: "nn backend horizon",
                expected: self.model.n_future,
                got: u_seq.len(),
            });
        }
        let mut full_u = past_u.clone();
        full_u.push(u_seq[0].clone());
        let mut full_y = past_y.clone();
        full_y.push(current_y.clone());
        self.model.predict(&full_u, &full_y, &u_seq[1..])
    }

    fn make_ic(&self, x_true: &DVector<f64>, history: &IoHistory) -> Result<ModelIc> {
        let _ = x_true; // output feedback: the NN sees measurements only
        let need = self.model.n_past - 1;
        let (mut u_win, mut y_win) = history.tail(need);
        let current_y = history
            .current_y()
            .ok_or_else(|| Error::Config("nn backend needs the current measurement in history".into()))?;
        while u_win.len() < need {
            u_win.insert(0, self.pad_input.clone());
            y_win.insert(0, y_win.first().cloned().unwrap_or_else(|| current_y.clone()));
        }
        Ok(ModelIc::IoWindow {
            past_u: u_win,
            past_y: y_win,
            current_y,
        })
    }
}
