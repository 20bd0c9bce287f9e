//! Receding-horizon control over interchangeable prediction backends.
//!
//! The same direct single-shooting transcription serves tracking MPC and
//! economic MPC: the decision vector stacks the N piecewise-constant input
//! moves, a prediction backend maps them to the N outputs that follow each
//! move, and a projected quasi-Newton solver minimizes the stage-cost sum
//! inside the input box. Output bounds enter as a quadratic penalty.
//!
//! Stage `j` pairs the j-th input move with the output it produces, i.e. the
//! prediction one sample later; the terminal weight applies to the last
//! predicted output on top of its stage weight.

mod backends;
mod runner;
mod solver;

pub use backends::{ExactPlantPredictor, LtiPredictor, NnBackend, TpwlPredictor};
pub use runner::{run_closed_loop, IoHistory, SimulationResult, StepRecord};
pub use solver::{solve_box_lbfgs, SolveDiagnostics};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::plant::{find_steady_state, PlantModel};

/// Initial condition handed to a prediction backend at a sampling instant.
#[derive(Debug, Clone)]
pub enum ModelIc {
    /// Full plant state (exact and full-order TPWL backends).
    FullState(DVector<f64>),
    /// Projected state U_k^T x (reduced TPWL backends).
    Reduced(DVector<f64>),
    /// Estimated LTI state (subspace backends).
    LtiState(DVector<f64>),
    /// Recent I/O record for NN backends: the last `n_past - 1` applied
    /// inputs paired with their outputs, plus the current measurement.
    IoWindow {
        past_u: Vec<DVector<f64>>,
        past_y: Vec<DVector<f64>>,
        current_y: DVector<f64>,
    },
}

/// Uniform handle over every model kind used inside the controllers.
pub trait PredictionModel: Send + Sync {
    /// Short tag for reports ("original", "tpwl-5", "subspace", "nn", ...).
    fn kind(&self) -> String;

    /// Model order as it appears in report tables; None reads "n/a".
    fn dim(&self) -> Option<usize>;

    /// Outputs after each of the `u_seq` moves (length equals `u_seq`).
    fn predict(&self, ic: &ModelIc, u_seq: &[DVector<f64>]) -> Result<Vec<DVector<f64>>>;

    /// Assemble this backend's initial condition from the true state and the
    /// recent I/O history.
    fn make_ic(&self, x_true: &DVector<f64>, history: &IoHistory) -> Result<ModelIc>;

    /// Sensitivity of the stacked prediction with respect to the stacked
    /// input moves, for backends with analytic prediction matrices.
    /// Returns d vec(y_hat) / d vec(u) of shape (N*l) x (N*r).
    fn prediction_sensitivity(&self, _ic: &ModelIc, _n: usize) -> Option<DMatrix<f64>> {
        None
    }
}

/// Diagonal tracking weights and targets.
#[derive(Debug, Clone)]
pub struct TrackingCost {
    pub q: DVector<f64>,
    pub r_weights: DVector<f64>,
    pub p_f: DVector<f64>,
    pub y_target: DVector<f64>,
    pub u_target: DVector<f64>,
}

impl TrackingCost {
    /// Uniform scalar weights on every channel.
    pub fn uniform(
        l: usize,
        r: usize,
        q: f64,
        r_weight: f64,
        p_f: f64,
        y_target: DVector<f64>,
        u_target: DVector<f64>,
    ) -> Self {
        TrackingCost {
            q: DVector::from_element(l, q),
            r_weights: DVector::from_element(r, r_weight),
            p_f: DVector::from_element(l, p_f),
            y_target,
            u_target,
        }
    }

    pub fn stage(&self, y: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..y.len() {
            let d = y[i] - self.y_target[i];
            acc += self.q[i] * d * d;
        }
        for i in 0..u.len() {
            let d = u[i] - self.u_target[i];
            acc += self.r_weights[i] * d * d;
        }
        acc
    }

    pub fn terminal(&self, y: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..y.len() {
            let d = y[i] - self.y_target[i];
            acc += self.p_f[i] * d * d;
        }
        acc
    }
}

/// Declared economic stage-cost expressions over (y, u).
#[derive(Debug, Clone)]
pub enum EconomicCost {
    /// wy . y + wu . u
    Linear {
        wy: DVector<f64>,
        wu: DVector<f64>,
    },
    /// |y - y_ref|^2_Q + |u - u_ref|^2_R
    Quadratic {
        q: DVector<f64>,
        r_weights: DVector<f64>,
        y_ref: DVector<f64>,
        u_ref: DVector<f64>,
    },
    /// -alpha * flow * (u[feed_input] - y[conc_output])
    ///   + beta * sum_j |energy_offsets[j] + u[energy_inputs[j]]|
    ///
    /// The throughput term rewards converting the fed reactant (feed
    /// concentration minus what leaves unreacted); the energy term charges
    /// the absolute heat duties around their offsets.
    ThroughputEnergy {
        alpha: f64,
        beta: f64,
        flow: f64,
        feed_input: usize,
        conc_output: usize,
        energy_inputs: Vec<usize>,
        energy_offsets: Vec<f64>,
    },
}

impl EconomicCost {
    pub fn eval(&self, y: &DVector<f64>, u: &DVector<f64>) -> f64 {
        match self {
            EconomicCost::Linear { wy, wu } => wy.dot(y) + wu.dot(u),
            EconomicCost::Quadratic {
                q,
                r_weights,
                y_ref,
                u_ref,
            } => {
                let mut acc = 0.0;
                for i in 0..y.len() {
                    let d = y[i] - y_ref[i];
                    acc += q[i] * d * d;
                }
                for i in 0..u.len() {
                    let d = u[i] - u_ref[i];
                    acc += r_weights[i] * d * d;
                }
                acc
            }
            EconomicCost::ThroughputEnergy {
                alpha,
                beta,
                flow,
                feed_input,
                conc_output,
                energy_inputs,
                energy_offsets,
            } => {
                let mut acc = -alpha * flow * (u[*feed_input] - y[*conc_output]);
                for (j, &idx) in energy_inputs.iter().enumerate() {
                    acc += beta * (energy_offsets[j] + u[idx]).abs();
                }
                acc
            }
        }
    }

    pub fn grad_y(&self, y: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        match self {
            EconomicCost::Linear { wy, .. } => wy.clone(),
            EconomicCost::Quadratic { q, y_ref, .. } => {
                DVector::from_fn(y.len(), |i, _| 2.0 * q[i] * (y[i] - y_ref[i]))
            }
            EconomicCost::ThroughputEnergy {
                alpha,
                flow,
                conc_output,
                ..
            } => {
                let mut g = DVector::zeros(y.len());
                g[*conc_output] = alpha * flow;
                g
            }
        }
    }

    pub fn grad_u(&self, _y: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match self {
            EconomicCost::Linear { wu, .. } => wu.clone(),
            EconomicCost::Quadratic {
                r_weights, u_ref, ..
            } => DVector::from_fn(u.len(), |i, _| 2.0 * r_weights[i] * (u[i] - u_ref[i])),
            EconomicCost::ThroughputEnergy {
                alpha,
                beta,
                flow,
                feed_input,
                energy_inputs,
                energy_offsets,
                ..
            } => {
                let mut g = DVector::zeros(u.len());
                g[*feed_input] = -alpha * flow;
                for (j, &idx) in energy_inputs.iter().enumerate() {
                    g[idx] += beta * (energy_offsets[j] + u[idx]).signum();
                }
                g
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum ControlObjective {
    Tracking(TrackingCost),
    Economic(EconomicCost),
}

/// Solver settings shared by every controller step.
#[derive(Debug, Clone)]
pub struct SolverSettings {
    /// Convergence tolerance on the projected-gradient norm.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Quadratic penalty weight on output-bound violations.
    pub penalty_weight: f64,
    pub lbfgs_memory: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tolerance: 1e-6,
            max_iterations: 200,
            penalty_weight: 1e4,
            lbfgs_memory: 10,
        }
    }
}

/// One receding-horizon problem: horizon, bounds, cost, solver settings, and
/// the steady input used for candidate starts and history padding.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub horizon: usize,
    pub dt: f64,
    pub u_lower: DVector<f64>,
    pub u_upper: DVector<f64>,
    /// Componentwise lower bound on outputs (y >= y_min), penalty-enforced.
    pub y_min: Option<f64>,
    pub objective: ControlObjective,
    pub u_steady: DVector<f64>,
    pub settings: SolverSettings,
}

impl ControlProblem {
    pub fn r(&self) -> usize {
        self.u_lower.len()
    }

    fn clamp(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| u[i].clamp(self.u_lower[i], self.u_upper[i]))
    }

    /// Realized stage cost used for closed-loop accounting: the input move
    /// paired with the output it produced.
    pub fn stage_cost(&self, y_next: &DVector<f64>, u: &DVector<f64>) -> f64 {
        match &self.objective {
            ControlObjective::Tracking(t) => t.stage(y_next, u),
            ControlObjective::Economic(e) => e.eval(y_next, u),
        }
    }
}

/// Result of one controller step.
#[derive(Debug, Clone)]
pub struct ControlStep {
    pub u_seq: Vec<DVector<f64>>,
    pub first_input: DVector<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Stacked decision vector layout: theta[j*r + c] = u_j[c].
fn stack(u_seq: &[DVector<f64>]) -> DVector<f64> {
    let r = u_seq[0].len();
    DVector::from_fn(u_seq.len() * r, |i, _| u_seq[i / r][i % r])
}

fn unstack(theta: &DVector<f64>, n: usize, r: usize) -> Vec<DVector<f64>> {
    (0..n)
        .map(|j| DVector::from_fn(r, |c, _| theta[j * r + c]))
        .collect()
}

/// Shooting objective: stage costs of predicted outputs plus the output-box
/// penalty; gradient analytic when the backend provides prediction
/// sensitivities, central finite differences otherwise.
struct ShootingObjective<'a> {
    problem: &'a ControlProblem,
    model: &'a dyn PredictionModel,
    ic: &'a ModelIc,
    /// Precomputed d vec(y)/d vec(u) for linear backends.
    sensitivity: Option<DMatrix<f64>>,
}

impl<'a> ShootingObjective<'a> {
    fn new(problem: &'a ControlProblem, model: &'a dyn PredictionModel, ic: &'a ModelIc) -> Self {
        let sensitivity = model.prediction_sensitivity(ic, problem.horizon);
        ShootingObjective {
            problem,
            model,
            ic,
            sensitivity,
        }
    }

    fn predict(&self, u_seq: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        self.model.predict(self.ic, u_seq)
    }

    fn value_from_prediction(&self, y_hat: &[DVector<f64>], u_seq: &[DVector<f64>]) -> f64 {
        let n = u_seq.len();
        let mut total = 0.0;
        for j in 0..n {
            total += match &self.problem.objective {
                ControlObjective::Tracking(t) => t.stage(&y_hat[j], &u_seq[j]),
                ControlObjective::Economic(e) => e.eval(&y_hat[j], &u_seq[j]),
            };
        }
        if let ControlObjective::Tracking(t) = &self.problem.objective {
            total += t.terminal(&y_hat[n - 1]);
        }
        if let Some(y_min) = self.problem.y_min {
            let w = self.problem.settings.penalty_weight;
            for y in y_hat {
                for v in y.iter() {
                    let viol = (y_min - v).max(0.0);
                    total += w * viol * viol;
                }
            }
        }
        total
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        let u_seq = unstack(theta, self.problem.horizon, self.problem.r());
        match self.predict(&u_seq) {
            Ok(y_hat) => self.value_from_prediction(&y_hat, &u_seq),
            Err(_) => f64::INFINITY,
        }
    }

    /// dJ/dy_hat for every predicted output, plus the direct dJ/du terms.
    fn cost_gradients(
        &self,
        y_hat: &[DVector<f64>],
        u_seq: &[DVector<f64>],
    ) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let n = u_seq.len();
        let l = y_hat[0].len();
        let mut dy = Vec::with_capacity(n);
        let mut du = Vec::with_capacity(n);
        for j in 0..n {
            let (mut gy, gu) = match &self.problem.objective {
                ControlObjective::Tracking(t) => (
                    DVector::from_fn(l, |i, _| 2.0 * t.q[i] * (y_hat[j][i] - t.y_target[i])),
                    DVector::from_fn(u_seq[j].len(), |i, _| {
                        2.0 * t.r_weights[i] * (u_seq[j][i] - t.u_target[i])
                    }),
                ),
                ControlObjective::Economic(e) => {
                    (e.grad_y(&y_hat[j], &u_seq[j]), e.grad_u(&y_hat[j], &u_seq[j]))
                }
            };
            if j == n - 1 {
                if let ControlObjective::Tracking(t) = &self.problem.objective {
                    for i in 0..l {
                        gy[i] += 2.0 * t.p_f[i] * (y_hat[j][i] - t.y_target[i]);
                    }
                }
            }
            if let Some(y_min) = self.problem.y_min {
                let w = self.problem.settings.penalty_weight;
                for i in 0..l {
                    let viol = (y_min - y_hat[j][i]).max(0.0);
                    gy[i] += -2.0 * w * viol;
                }
            }
            dy.push(gy);
            du.push(gu);
        }
        (dy, du)
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let n = self.problem.horizon;
        let r = self.problem.r();
        if let Some(h) = &self.sensitivity {
            let u_seq = unstack(theta, n, r);
            if let Ok(y_hat) = self.predict(&u_seq) {
                let (dy, du) = self.cost_gradients(&y_hat, &u_seq);
                let l = y_hat[0].len();
                let mut dy_stack = DVector::zeros(n * l);
                for j in 0..n {
                    for i in 0..l {
                        dy_stack[j * l + i] = dy[j][i];
                    }
                }
                let mut grad = h.transpose() * dy_stack;
                for j in 0..n {
                    for c in 0..r {
                        grad[j * r + c] += du[j][c];
                    }
                }
                return grad;
            }
        }
        // central differences on the shooting map
        let mut grad = DVector::zeros(theta.len());
        for idx in 0..theta.len() {
            let h = 1e-6 * theta[idx].abs().max(1.0);
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[idx] += h;
            tm[idx] -= h;
            grad[idx] = (self.value(&tp) - self.value(&tm)) / (2.0 * h);
        }
        grad
    }
}

/// Solve one receding-horizon step from candidate starts: the shifted
/// previous solution (when given) and the constant steady input. Returns the
/// best local solution found.
pub fn solve_step(
    problem: &ControlProblem,
    model: &dyn PredictionModel,
    ic: &ModelIc,
    warm: Option<&[DVector<f64>]>,
) -> Result<ControlStep> {
    let n = problem.horizon;
    if n == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    let r = problem.r();
    let timer = runner::StepTimer::start();

    let objective = ShootingObjective::new(problem, model, ic);

    let mut candidates: Vec<DVector<f64>> = Vec::new();
    if let Some(prev) = warm {
        // shift one step, repeat the final move
        let mut shifted: Vec<DVector<f64>> = prev[1..].to_vec();
        shifted.push(prev[prev.len() - 1].clone());
        while shifted.len() < n {
            shifted.push(prev[prev.len() - 1].clone());
        }
        shifted.truncate(n);
        candidates.push(stack(&shifted.iter().map(|u| problem.clamp(u)).collect::<Vec<_>>()));
    }
    candidates.push(stack(&vec![problem.clamp(&problem.u_steady); n]));
    if let ControlObjective::Tracking(t) = &problem.objective {
        let clamped = problem.clamp(&t.u_target);
        if clamped != problem.clamp(&problem.u_steady) {
            candidates.push(stack(&vec![clamped; n]));
        }
    }

    let lo = DVector::from_fn(n * r, |i, _| problem.u_lower[i % r]);
    let hi = DVector::from_fn(n * r, |i, _| problem.u_upper[i % r]);

    let mut best: Option<(f64, DVector<f64>, SolveDiagnostics)> = None;
    for start in candidates {
        let (theta, mut diag) = solve_box_lbfgs(
            |t| objective.value(t),
            |t| objective.gradient(t),
            &start,
            &lo,
            &hi,
            &problem.settings,
        );
        let value = objective.value(&theta);
        diag.objective = value;
        let better = match &best {
            Some((v, _, _)) => value < *v,
            None => true,
        };
        if better {
            best = Some((value, theta, diag));
        }
    }
    let (value, theta, mut diag) = best.expect("at least one candidate start");
    if !value.is_finite() {
        return Err(Error::Numerical(
            "controller step produced a non-finite objective for every candidate".into(),
        ));
    }
    diag.solve_time_s = timer.elapsed_s();
    let u_seq = unstack(&theta, n, r);
    let first_input = problem.clamp(&u_seq[0]);
    Ok(ControlStep {
        u_seq,
        first_input,
        diagnostics: diag,
    })
}

/// Tracking-MPC step (quadratic deviation objective).
pub fn solve_mpc_step(
    problem: &ControlProblem,
    model: &dyn PredictionModel,
    ic: &ModelIc,
    warm: Option<&[DVector<f64>]>,
) -> Result<ControlStep> {
    match &problem.objective {
        ControlObjective::Tracking(_) => solve_step(problem, model, ic, warm),
        _ => Err(Error::Config("solve_mpc_step needs a tracking objective".into())),
    }
}

/// EMPC step (economic stage cost over the horizon).
pub fn solve_empc_step(
    problem: &ControlProblem,
    model: &dyn PredictionModel,
    ic: &ModelIc,
    warm: Option<&[DVector<f64>]>,
) -> Result<ControlStep> {
    match &problem.objective {
        ControlObjective::Economic(_) => solve_step(problem, model, ic, warm),
        _ => Err(Error::Config("solve_empc_step needs an economic objective".into())),
    }
}

/// Steady-state economic optimization: minimize the economic cost over
/// steady pairs (rhs(x, u) = 0) inside the input box, by multi-start
/// projected quasi-Newton on u with an inner Newton solve for the steady
/// state.
pub struct SteadyStateResult {
    pub y_s: DVector<f64>,
    pub u_s: DVector<f64>,
    pub x_s: DVector<f64>,
    pub cost: f64,
}

pub fn steady_state_optimize(
    plant: &PlantModel,
    cost: &EconomicCost,
    u_lower: &DVector<f64>,
    u_upper: &DVector<f64>,
    seed: u64,
    n_random_starts: usize,
) -> Result<SteadyStateResult> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let r = plant.r;
    let clamp = |u: &DVector<f64>| {
        DVector::from_fn(r, |i, _| u[i].clamp(u_lower[i], u_upper[i]))
    };

    let steady_output = |u: &DVector<f64>, x_guess: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let x = find_steady_state(plant, u, x_guess)?;
        let y = plant.out(&x, u);
        Ok((x, y))
    };

    let mut starts = vec![clamp(&plant.u0), (u_lower + u_upper) * 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_random_starts {
        starts.push(DVector::from_fn(r, |i, _| {
            rng.gen_range(u_lower[i]..=u_upper[i])
        }));
    }

    let settings = SolverSettings {
        tolerance: 1e-8,
        max_iterations: 300,
        penalty_weight: 0.0,
        lbfgs_memory: 10,
    };

    let mut best: Option<SteadyStateResult> = None;
    for start in starts {
        // warm-started inner Newton: keep the steady state of the current
        // iterate as the guess for neighboring evaluations
        let x_warm = std::cell::RefCell::new(plant.x0.clone());
        let f = |u: &DVector<f64>| -> f64 {
            let guess = x_warm.borrow().clone();
            match steady_output(u, &guess) {
                Ok((x, y)) => {
                    *x_warm.borrow_mut() = x;
                    cost.eval(&y, u)
                }
                Err(_) => f64::INFINITY,
            }
        };
        let g = |u: &DVector<f64>| -> DVector<f64> {
            let mut grad = DVector::zeros(r);
            for idx in 0..r {
                let h = 1e-6 * u[idx].abs().max(1.0);
                let mut up = u.clone();
                let mut um = u.clone();
                up[idx] += h;
                um[idx] -= h;
                grad[idx] = (f(&up) - f(&um)) / (2.0 * h);
            }
            grad
        };
        if !f(&start).is_finite() {
            continue;
        }
        let (u_opt, _) = solve_box_lbfgs(f, g, &start, u_lower, u_upper, &settings);
        let guess = x_warm.borrow().clone();
        let Ok((x_s, y_s)) = steady_output(&u_opt, &guess) else {
            continue;
        };
        let value = cost.eval(&y_s, &u_opt);
        let better = match &best {
            Some(b) => value < b.cost,
            None => true,
        };
        if better {
            best = Some(SteadyStateResult {
                y_s,
                u_s: u_opt,
                x_s,
                cost: value,
            });
        }
    }
    best.ok_or_else(|| {
        Error::Infeasible("no steady state found inside the input bounds from any start".into())
    })
}
