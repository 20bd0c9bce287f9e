//! Interactive browser demo over the two-CSTR benchmark: step responses,
//! open-loop accuracy of the approximation models, and closed-loop MPC/EMPC.
//!
//! The exported functions return JSON strings so the page needs nothing but
//! `JSON.parse` and a canvas. Everything is seeded and deterministic; the
//! computational core is the same library the CLI uses.

use nalgebra::DVector;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use ampc::control::{
    run_closed_loop, ControlObjective, ControlProblem, EconomicCost, ExactPlantPredictor,
    LtiPredictor, PredictionModel, SolverSettings, TpwlPredictor, TrackingCost,
};
use ampc::excitation::{collect_dataset, multilevel_signal, Dataset, MultiLevelSpec};
use ampc::plant::{find_steady_state, step_response, PlantModel, TwoCstrParams};
use ampc::pod::{compute_basis, OrderSelection};
use ampc::subspace::{identify, OrderChoice};
use ampc::tpwl::{
    select_points, simulate_tpwl, trajectory_state_scale, TpwlModel, DEFAULT_WEIGHT_SHARPNESS,
};

const DT_HOURS: f64 = 1.0 / 30.0; // 2-minute sampling
const SUBSTEPS: usize = 6;

fn benchmark_plant() -> Result<PlantModel, String> {
    let mut plant = PlantModel::two_cstr(TwoCstrParams::default());
    plant.x0 = find_steady_state(&plant, &plant.u0, &plant.x0).map_err(|e| e.to_string())?;
    Ok(plant)
}

fn input_bounds() -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from_row_slice(&[-2.0e4, -2.0e4, 2.0]),
        DVector::from_row_slice(&[2.0e4, 2.0e4, 4.0]),
    )
}

fn economic_cost() -> EconomicCost {
    EconomicCost::ThroughputEnergy {
        alpha: 200.0,
        beta: 5.0e-4,
        flow: 5.0,
        feed_input: 2,
        conc_output: 0,
        energy_inputs: vec![0, 1],
        energy_offsets: vec![0.0, 0.0],
    }
}

#[derive(Serialize)]
struct StepResponseJson {
    t_minutes: Vec<f64>,
    conc: Vec<f64>,
    temp: Vec<f64>,
    input_label: String,
}

/// Step response of the benchmark from its steady state.
pub fn step_response_json(channel: usize, magnitude: f64, steps: usize) -> Result<String, String> {
    let plant = benchmark_plant()?;
    let traj = step_response(&plant, channel, magnitude, steps.clamp(10, 600), DT_HOURS, SUBSTEPS)
        .map_err(|e| e.to_string())?;
    let labels = ["Q1 [kJ/h]", "Q2 [kJ/h]", "C_A0 [kmol/m3]"];
    let out = StepResponseJson {
        t_minutes: traj.t.iter().map(|t| t * 60.0).collect(),
        conc: traj.y_seq.iter().map(|y| y[0]).collect(),
        temp: traj.y_seq.iter().map(|y| y[1]).collect(),
        input_label: labels.get(channel).unwrap_or(&"?").to_string(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct OpenLoopJson {
    t_minutes: Vec<f64>,
    reference_conc: Vec<f64>,
    reference_temp: Vec<f64>,
    models: Vec<OpenLoopModelJson>,
}

#[derive(Serialize)]
struct OpenLoopModelJson {
    label: String,
    nrmse: f64,
    conc: Vec<f64>,
    temp: Vec<f64>,
}

fn demo_dataset(plant: &PlantModel, seed: u64, steps: usize) -> Result<Dataset, String> {
    let (lo, hi) = input_bounds();
    let u_seq = multilevel_signal(
        &MultiLevelSpec {
            levels_per_channel: 5,
            hold_min: 6,
            hold_max: 12,
            u_lower: lo,
            u_upper: hi,
            seed,
        },
        steps,
    )
    .map_err(|e| e.to_string())?;
    collect_dataset(plant, &u_seq, DT_HOURS, SUBSTEPS).map_err(|e| e.to_string())
}

/// Fit TPWL / POD-TPWL / subspace models on a fresh excitation dataset and
/// overlay their open-loop predictions on the validation window.
pub fn open_loop_compare_json(
    seed: u32,
    steps: usize,
    tpwl_points: usize,
    pod_order: usize,
    sid_order: usize,
) -> Result<String, String> {
    let plant = benchmark_plant()?;
    let steps = steps.clamp(300, 2000);
    let ds = demo_dataset(&plant, seed as u64, steps)?;
    let (train, val) = ds.split(0.8);
    let count = val.len();
    let u_val: Vec<DVector<f64>> = (0..count).map(|k| val.u_io.column(k).into_owned()).collect();
    let reference: Vec<DVector<f64>> =
        (0..count).map(|k| val.y_io.column(k).into_owned()).collect();

    // normalize errors by the validation mean magnitude per channel
    let mut norm = DVector::zeros(2);
    for y in &reference {
        norm[0] += y[0].abs();
        norm[1] += y[1].abs();
    }
    norm /= count as f64;

    let scale = trajectory_state_scale(&train.traj);
    let tpwl_points = tpwl_points.clamp(1, 9);
    let sel = select_points(&train.traj, tpwl_points).map_err(|e| e.to_string())?;
    let tpwl = TpwlModel::from_points(&plant, &sel.points, DEFAULT_WEIGHT_SHARPNESS, scale)
        .map_err(|e| e.to_string())?;

    let mut models = Vec::new();
    let mut push_model = |label: String, y_seq: Vec<DVector<f64>>| {
        let nrmse = ampc::bench::nrmse(&y_seq[..count], &reference, &norm).unwrap_or(f64::NAN);
        models.push(OpenLoopModelJson {
            label,
            nrmse,
            conc: y_seq[..count].iter().map(|y| y[0]).collect(),
            temp: y_seq[..count].iter().map(|y| y[1]).collect(),
        });
    };

    let traj = simulate_tpwl(&tpwl, &val.traj.x_seq[0], &u_val, DT_HOURS, SUBSTEPS)
        .map_err(|e| e.to_string())?;
    push_model(format!("TPWL {tpwl_points} pt"), traj.y_seq);

    let pod_order = pod_order.clamp(1, 4);
    let basis = compute_basis(&train.snapshot, OrderSelection::Explicit(pod_order), false)
        .map_err(|e| e.to_string())?;
    let reduced = tpwl
        .clone()
        .with_basis(basis.clone())
        .map_err(|e| e.to_string())?;
    let z0 = basis.project(&val.traj.x_seq[0]).map_err(|e| e.to_string())?;
    let traj = simulate_tpwl(&reduced, &z0, &u_val, DT_HOURS, SUBSTEPS).map_err(|e| e.to_string())?;
    push_model(format!("POD-TPWL k={pod_order}"), traj.y_seq);

    let sid_order = sid_order.clamp(1, 12);
    let lti = identify(&train, 10, OrderChoice::Explicit(sid_order)).map_err(|e| e.to_string())?;
    let window = 20.min(count);
    let z0 = lti
        .estimate_initial_state(&u_val[..window], &reference[..window], window)
        .map_err(|e| e.to_string())?;
    push_model(format!("Subspace s={sid_order}"), lti.simulate(Some(&z0), &u_val));

    let out = OpenLoopJson {
        t_minutes: (0..count).map(|k| k as f64 * DT_HOURS * 60.0).collect(),
        reference_conc: reference.iter().map(|y| y[0]).collect(),
        reference_temp: reference.iter().map(|y| y[1]).collect(),
        models,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ClosedLoopJson {
    t_minutes: Vec<f64>,
    conc: Vec<f64>,
    temp: Vec<f64>,
    q1: Vec<f64>,
    q2: Vec<f64>,
    feed: Vec<f64>,
    y_target: Vec<f64>,
    objective: f64,
    mean_iterations: f64,
    model: String,
    mode: String,
}

/// Closed-loop MPC or EMPC on the benchmark with the chosen backend.
pub fn closed_loop_json(
    mode: &str,
    model_kind: &str,
    steps: usize,
    horizon: usize,
    seed: u32,
) -> Result<String, String> {
    let plant = benchmark_plant()?;
    let (lo, hi) = input_bounds();
    let cost = economic_cost();
    let ss = ampc::control::steady_state_optimize(&plant, &cost, &lo, &hi, 11, 3)
        .map_err(|e| e.to_string())?;
    let horizon = horizon.clamp(2, 15);
    let steps = steps.clamp(5, 120);

    let objective = match mode {
        "mpc" => ControlObjective::Tracking(TrackingCost::uniform(
            2,
            3,
            1.0,
            0.0,
            10.0,
            ss.y_s.clone(),
            ss.u_s.clone(),
        )),
        "empc" => ControlObjective::Economic(cost.clone()),
        other => return Err(format!("unknown mode '{other}' (mpc or empc)")),
    };
    let problem = ControlProblem {
        horizon,
        dt: DT_HOURS,
        u_lower: lo,
        u_upper: hi,
        y_min: Some(0.0),
        objective,
        u_steady: ss.u_s.clone(),
        settings: SolverSettings {
            max_iterations: 120,
            ..SolverSettings::default()
        },
    };

    let backend: Box<dyn PredictionModel> = match model_kind {
        "original" => Box::new(ExactPlantPredictor {
            plant: plant.clone(),
            dt: DT_HOURS,
            substeps: 4,
        }),
        "tpwl-1" | "tpwl-5" | "pod-tpwl" => {
            let ds = demo_dataset(&plant, seed as u64, 500)?;
            let points = if model_kind == "tpwl-1" { 1 } else { 5 };
            let sel = select_points(&ds.traj, points).map_err(|e| e.to_string())?;
            let scale = trajectory_state_scale(&ds.traj);
            let mut tpwl =
                TpwlModel::from_points(&plant, &sel.points, DEFAULT_WEIGHT_SHARPNESS, scale)
                    .map_err(|e| e.to_string())?;
            if model_kind == "pod-tpwl" {
                let basis = compute_basis(&ds.snapshot, OrderSelection::Explicit(3), false)
                    .map_err(|e| e.to_string())?;
                tpwl = tpwl.with_basis(basis).map_err(|e| e.to_string())?;
            }
            Box::new(TpwlPredictor {
                model: tpwl,
                dt: DT_HOURS,
                substeps: 4,
                tag: model_kind.to_string(),
            })
        }
        "subspace" => {
            let ds = demo_dataset(&plant, seed as u64, 500)?;
            let lti = identify(&ds, 10, OrderChoice::Explicit(4)).map_err(|e| e.to_string())?;
            Box::new(LtiPredictor {
                model: lti,
                estimation_window: 20,
            })
        }
        other => {
            return Err(format!(
                "unknown model '{other}' (original, tpwl-1, tpwl-5, pod-tpwl, subspace)"
            ))
        }
    };

    let result = run_closed_loop(&plant, &problem, backend.as_ref(), steps, SUBSTEPS, None)
        .map_err(|e| e.to_string())?;
    let mean_iterations = result
        .steps
        .iter()
        .map(|r| r.iterations as f64)
        .sum::<f64>()
        / result.steps.len() as f64;
    let out = ClosedLoopJson {
        t_minutes: result.steps.iter().map(|r| r.t * 60.0).collect(),
        conc: result.steps.iter().map(|r| r.y[0]).collect(),
        temp: result.steps.iter().map(|r| r.y[1]).collect(),
        q1: result.steps.iter().map(|r| r.u[0]).collect(),
        q2: result.steps.iter().map(|r| r.u[1]).collect(),
        feed: result.steps.iter().map(|r| r.u[2]).collect(),
        y_target: ss.y_s.as_slice().to_vec(),
        objective: result.accumulated_objective,
        mean_iterations,
        model: result.model_kind,
        mode: mode.to_string(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

// wasm-bindgen surface: thin wrappers turning errors into JS exceptions.

#[wasm_bindgen]
pub fn demo_step_response(channel: usize, magnitude: f64, steps: usize) -> Result<String, JsValue> {
    step_response_json(channel, magnitude, steps).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn demo_open_loop(
    seed: u32,
    steps: usize,
    tpwl_points: usize,
    pod_order: usize,
    sid_order: usize,
) -> Result<String, JsValue> {
    open_loop_compare_json(seed, steps, tpwl_points, pod_order, sid_order)
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn demo_closed_loop(
    mode: String,
    model_kind: String,
    steps: usize,
    horizon: usize,
    seed: u32,
) -> Result<String, JsValue> {
    closed_loop_json(&mode, &model_kind, steps, horizon, seed).map_err(|e| JsValue::from_str(&e))
}
