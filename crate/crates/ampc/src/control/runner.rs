//! Closed-loop execution: state feedback from the true plant, one controller
//! solve per sample, first move applied, everything recorded.

use nalgebra::DVector;

use super::{solve_step, ControlProblem, ControlStep, PredictionModel};
use crate::error::{Error, Result};
use crate::plant::{integrate, PlantModel, Trajectory};

/// Wall-clock timer around the solver call only; on targets without a
/// monotonic clock (wasm) it reports zero.
pub(super) struct StepTimer {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl StepTimer {
    pub(super) fn start() -> Self {
        StepTimer {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    pub(super) fn elapsed_s(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

/// Rolling record of applied inputs and measured outputs, same-index pairs
/// (u_k applied over the k-th interval, y_k measured at its start), plus the
/// not-yet-paired current measurement.
#[derive(Debug, Clone, Default)]
pub struct IoHistory {
    pairs: Vec<(DVector<f64>, DVector<f64>)>,
    current: Option<DVector<f64>>,
}

impl IoHistory {
    pub fn new() -> Self {
        IoHistory::default()
    }

    /// Set the measurement at the current sampling instant.
    pub fn set_current(&mut self, y: DVector<f64>) {
        self.current = Some(y);
    }

    pub fn current_y(&self) -> Option<DVector<f64>> {
        self.current.clone()
    }

    /// Complete the current instant with the input chosen for it.
    pub fn push_applied(&mut self, u: DVector<f64>) {
        let y = self
            .current
            .take()
            .expect("push_applied called without a current measurement");
        self.pairs.push((u, y));
    }

    /// Last `count` completed pairs, oldest first.
    pub fn tail(&self, count: usize) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let start = self.pairs.len().saturating_sub(count);
        let mut u = Vec::with_capacity(self.pairs.len() - start);
        let mut y = Vec::with_capacity(self.pairs.len() - start);
        for (uk, yk) in &self.pairs[start..] {
            u.push(uk.clone());
            y.push(yk.clone());
        }
        (u, y)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Per-sample record of a closed-loop run.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    /// Output at this instant (before applying u).
    pub y: DVector<f64>,
    /// Realized stage cost: this input paired with the output it produced.
    pub stage_cost: f64,
    pub solve_time_s: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Closed-loop run summary plus per-step records.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub steps: Vec<StepRecord>,
    pub accumulated_objective: f64,
    pub mean_solve_time_s: f64,
    pub max_solve_time_s: f64,
    pub model_kind: String,
    pub model_dim: Option<usize>,
    /// Final output after the last applied input.
    pub final_y: DVector<f64>,
    pub final_x: DVector<f64>,
}

impl SimulationResult {
    /// View the run as a trajectory for CSV export and NRMSE computation.
    pub fn trajectory(&self, dt: f64) -> Trajectory {
        let mut t = Vec::with_capacity(self.steps.len() + 1);
        let mut u_seq = Vec::with_capacity(self.steps.len() + 1);
        let mut x_seq = Vec::with_capacity(self.steps.len() + 1);
        let mut y_seq = Vec::with_capacity(self.steps.len() + 1);
        for rec in &self.steps {
            t.push(rec.t);
            u_seq.push(rec.u.clone());
            x_seq.push(rec.x.clone());
            y_seq.push(rec.y.clone());
        }
        if let Some(last) = self.steps.last() {
            t.push(last.t + dt);
            u_seq.push(last.u.clone());
            x_seq.push(self.final_x.clone());
            y_seq.push(self.final_y.clone());
        }
        Trajectory { t, u_seq, x_seq, y_seq }
    }
}

/// Run the receding-horizon loop: at each sample, build the backend's
/// initial condition from the measured state and I/O history, solve one
/// controller step (warm-started from the shifted previous solution), apply
/// the first move to the true plant, and record what happened.
pub fn run_closed_loop(
    plant: &PlantModel,
    problem: &ControlProblem,
    model: &dyn PredictionModel,
    steps: usize,
    substeps: usize,
    x_init: Option<&DVector<f64>>,
) -> Result<SimulationResult> {
    if steps == 0 {
        return Err(Error::Config("closed-loop run needs at least one step".into()));
    }
    let mut x = x_init.cloned().unwrap_or_else(|| plant.x0.clone());
    let mut history = IoHistory::new();
    let mut warm: Option<Vec<DVector<f64>>> = None;
    let mut records: Vec<StepRecord> = Vec::with_capacity(steps);
    let mut u_prev = problem.clamp(&problem.u_steady);

    for k in 0..steps {
        let y_now = plant.out(&x, &u_prev);
        history.set_current(y_now.clone());
        let ic = model.make_ic(&x, &history)?;
        let step: ControlStep = solve_step(problem, model, &ic, warm.as_deref()).map_err(|e| {
            Error::Numerical(format!("controller step {k} failed: {e}"))
        })?;
        let u_apply = step.first_input.clone();

        let traj = integrate(plant, &x, std::slice::from_ref(&u_apply), problem.dt, substeps)
            .map_err(|e| match e {
                Error::IntegrationDiverged { detail, .. } => {
                    Error::IntegrationDiverged { step: k, detail }
                }
                other => other,
            })?;
        let x_next = traj.x_seq[1].clone();
        let y_next = plant.out(&x_next, &u_apply);

        records.push(StepRecord {
            t: k as f64 * problem.dt,
            x: x.clone(),
            u: u_apply.clone(),
            y: y_now.clone(),
            stage_cost: problem.stage_cost(&y_next, &u_apply),
            solve_time_s: step.diagnostics.solve_time_s,
            iterations: step.diagnostics.iterations,
            converged: step.diagnostics.converged,
        });

        history.push_applied(u_apply.clone());
        warm = Some(step.u_seq);
        u_prev = u_apply;
        x = x_next;
    }

    let y_final = plant.out(&x, &u_prev);
    let accumulated_objective: f64 = records.iter().map(|r| r.stage_cost).sum();
    let mean_solve_time_s =
        records.iter().map(|r| r.solve_time_s).sum::<f64>() / records.len() as f64;
    let max_solve_time_s = records
        .iter()
        .map(|r| r.solve_time_s)
        .fold(0.0, f64::max);

    Ok(SimulationResult {
        steps: records,
        accumulated_objective,
        mean_solve_time_s,
        max_solve_time_s,
        model_kind: model.kind(),
        model_dim: model.dim(),
        final_y: y_final,
        final_x: x,
    })
}
