//! Experiment harness: the excite / fit / open-loop-validate / closed-loop
//! comparison protocol, driven by one config file, with CSV and JSON
//! artifacts for every stage.

pub mod config;
mod report;

pub use config::{ExperimentConfig, ModelConfig};
pub use report::{simulation_csv as simulation_csv_text, ClosedLoopRow, ExperimentReport, OpenLoopRow};

use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::control::{
    run_closed_loop, ControlObjective, ControlProblem, EconomicCost, ExactPlantPredictor,
    LtiPredictor, NnBackend, PredictionModel, SolverSettings, SteadyStateResult, TpwlPredictor,
    TrackingCost,
};
use crate::error::{Error, Result};
use crate::excitation::{
    collect_dataset, multilevel_signal, prbs_plus_steps, trajectory_to_csv, Dataset,
    MultiLevelSpec, PrbsPlusStepsSpec,
};
use crate::nn::{self, NnModelFile};
use crate::plant::{PlantModel, Trajectory};
use crate::pod::{compute_basis, OrderSelection};
use crate::subspace::{identify, LtiModelFile, OrderChoice};
use crate::tpwl::{
    select_points, simulate_tpwl, trajectory_state_scale, TpwlModel, TpwlModelFile,
    DEFAULT_WEIGHT_SHARPNESS,
};

/// Normalized root mean square error.
///
/// Per channel: `(1/y_s) * sqrt(sum((y_hat - y)^2) / n)`; multi-channel
/// sequences return the mean of the per-channel values.
pub fn nrmse(
    predicted: &[DVector<f64>],
    reference: &[DVector<f64>],
    normalizer: &DVector<f64>,
) -> Result<f64> {
    if predicted.len() != reference.len() || predicted.is_empty() {
        return Err(Error::Dimension {
            context: "nrmse lengths",
            expected: reference.len(),
            got: predicted.len(),
        });
    }
    let l = reference[0].len();
    if normalizer.len() != l {
        return Err(Error::Dimension {
            context: "nrmse normalizer",
            expected: l,
            got: normalizer.len(),
        });
    }
    let n = predicted.len() as f64;
    let mut total = 0.0;
    for ch in 0..l {
        if normalizer[ch] == 0.0 {
            return Err(Error::Numerical(format!(
                "nrmse normalizer is zero on channel {ch}"
            )));
        }
        let mut acc = 0.0;
        for (p, r) in predicted.iter().zip(reference.iter()) {
            let d = p[ch] - r[ch];
            acc += d * d;
        }
        total += (acc / n).sqrt() / normalizer[ch].abs();
    }
    Ok(total / l as f64)
}

/// A fitted model: the serialized artifact plus a live prediction backend.
pub struct FittedModel {
    pub tag: String,
    pub backend: Box<dyn PredictionModel>,
    pub artifact: ModelArtifact,
    /// Steps of real data a model needs before open-loop prediction starts.
    pub burn_in: usize,
}

pub enum ModelArtifact {
    Original,
    Tpwl(TpwlModelFile),
    Lti(LtiModelFile),
    Nn(NnModelFile),
}

impl ModelArtifact {
    pub fn to_json(&self) -> Result<Option<String>> {
        let json = match self {
            ModelArtifact::Original => return Ok(None),
            ModelArtifact::Tpwl(f) => serde_json::to_string_pretty(f),
            ModelArtifact::Lti(f) => serde_json::to_string_pretty(f),
            ModelArtifact::Nn(f) => serde_json::to_string_pretty(f),
        };
        json.map(Some)
            .map_err(|e| Error::Config(format!("model serialization failed: {e}")))
    }
}

/// Generate the excitation signal and collect the identification dataset.
pub fn generate_dataset(cfg: &ExperimentConfig, plant: &PlantModel) -> Result<Dataset> {
    let e = &cfg.excitation;
    let u_seq = match e.kind.as_str() {
        "multilevel" => multilevel_signal(
            &MultiLevelSpec {
                levels_per_channel: e.levels,
                hold_min: e.hold_min,
                hold_max: e.hold_max,
                u_lower: cfg.u_lower(),
                u_upper: cfg.u_upper(),
                seed: e.seed,
            },
            e.steps,
        )?,
        "prbs_plus_steps" => prbs_plus_steps(
            &PrbsPlusStepsSpec {
                base_low: cfg.u_lower(),
                base_high: cfg.u_upper(),
                extra_fraction: e.extra_fraction,
                hold_min: e.hold_min,
                hold_max: e.hold_max,
                u_lower: cfg.u_lower(),
                u_upper: cfg.u_upper(),
                seed: e.seed,
            },
            e.steps,
        )?,
        other => return Err(Error::Config(format!("unknown excitation kind '{other}'"))),
    };
    collect_dataset(plant, &u_seq, cfg.dt_hours(), cfg.plant.substeps)
}

/// Fit one configured model on the training split.
pub fn fit_model(
    cfg: &ExperimentConfig,
    model_cfg: &ModelConfig,
    plant: &PlantModel,
    train: &Dataset,
) -> Result<FittedModel> {
    let dt = cfg.dt_hours();
    let substeps = cfg.control.prediction_substeps;
    match model_cfg {
        ModelConfig::Original { tag } => Ok(FittedModel {
            tag: tag.clone(),
            backend: Box::new(ExactPlantPredictor {
                plant: plant.clone(),
                dt,
                substeps,
            }),
            artifact: ModelArtifact::Original,
            burn_in: 0,
        }),
        ModelConfig::Tpwl { tag, points } => {
            let tpwl = fit_tpwl(plant, train, *points, None)?;
            Ok(FittedModel {
                tag: tag.clone(),
                backend: Box::new(TpwlPredictor {
                    model: tpwl.clone(),
                    dt,
                    substeps,
                    tag: tag.clone(),
                }),
                artifact: ModelArtifact::Tpwl(TpwlModelFile::from_model(&tpwl, Some(*points))),
                burn_in: 0,
            })
        }
        ModelConfig::PodTpwl {
            tag,
            points,
            pod_order,
            pod_energy,
            mean_center,
        } => {
            let order = match (pod_order, pod_energy) {
                (Some(k), _) => OrderSelection::Explicit(*k),
                (None, Some(theta)) => OrderSelection::EnergyThreshold(*theta),
                (None, None) => {
                    return Err(Error::Config(format!(
                        "model '{tag}': set pod_order or pod_energy"
                    )))
                }
            };
            let basis = compute_basis(&train.snapshot, order, *mean_center)?;
            let tpwl = fit_tpwl(plant, train, *points, Some(basis))?;
            Ok(FittedModel {
                tag: tag.clone(),
                backend: Box::new(TpwlPredictor {
                    model: tpwl.clone(),
                    dt,
                    substeps,
                    tag: tag.clone(),
                }),
                artifact: ModelArtifact::Tpwl(TpwlModelFile::from_model(&tpwl, Some(*points))),
                burn_in: 0,
            })
        }
        ModelConfig::Subspace {
            tag,
            block_rows,
            order,
            sv_cutoff,
        } => {
            let choice = match (order, sv_cutoff) {
                (Some(s), _) => OrderChoice::Explicit(*s),
                (None, Some(c)) => OrderChoice::RelativeCutoff(*c),
                (None, None) => OrderChoice::RelativeCutoff(1e-6),
            };
            let model = identify(train, *block_rows, choice)?;
            Ok(FittedModel {
                tag: tag.clone(),
                backend: Box::new(LtiPredictor {
                    model: model.clone(),
                    estimation_window: 2 * block_rows,
                }),
                artifact: ModelArtifact::Lti(LtiModelFile::from_model(&model)),
                burn_in: 2 * block_rows,
            })
        }
        ModelConfig::Nn {
            tag,
            n_past,
            hidden,
            activations,
            learning_rate,
            batch_size,
            epochs,
            seed,
            patience,
        } => {
            let n_future = cfg.control.horizon;
            let set = nn::build_training_set(train, *n_past, n_future)?;
            let hidden_cfg: Vec<(usize, nn::Activation)> = hidden
                .iter()
                .zip(activations.iter())
                .map(|(nodes, act)| Ok((*nodes, config::parse_activation(act)?)))
                .collect::<Result<_>>()?;
            let (model, train_report) = nn::train(
                &set,
                &nn::TrainConfig {
                    hidden: hidden_cfg,
                    learning_rate: *learning_rate,
                    batch_size: *batch_size,
                    epochs: *epochs,
                    seed: *seed,
                    validation_fraction: 0.2,
                    patience: *patience,
                },
            )?;
            Ok(FittedModel {
                tag: tag.clone(),
                backend: Box::new(NnBackend {
                    model: model.clone(),
                    pad_input: plant.u0.clone(),
                }),
                artifact: ModelArtifact::Nn(NnModelFile::from_model(&model, Some(train_report))),
                burn_in: *n_past,
            })
        }
    }
}

fn fit_tpwl(
    plant: &PlantModel,
    train: &Dataset,
    points: usize,
    basis: Option<crate::pod::PodBasis>,
) -> Result<TpwlModel> {
    let sel = select_points(&train.traj, points)?;
    let scale = trajectory_state_scale(&train.traj);
    let model = TpwlModel::from_points(plant, &sel.points, DEFAULT_WEIGHT_SHARPNESS, scale)?;
    match basis {
        Some(b) => model.with_basis(b),
        None => Ok(model),
    }
}

/// Open-loop prediction of a fitted model over a validation dataset,
/// aligned with the validation instants (the first `burn_in` entries repeat
/// the measured data as seed history).
pub fn open_loop_outputs(
    fitted: &FittedModel,
    plant: &PlantModel,
    val: &Dataset,
    dt: f64,
    substeps: usize,
) -> Result<Vec<DVector<f64>>> {
    let count = val.len();
    let u_cols: Vec<DVector<f64>> = (0..count).map(|k| val.u_io.column(k).into_owned()).collect();
    let y_cols: Vec<DVector<f64>> = (0..count).map(|k| val.y_io.column(k).into_owned()).collect();

    match &fitted.artifact {
        ModelArtifact::Original => {
            let traj = crate::plant::integrate(plant, &val.traj.x_seq[0], &u_cols, dt, substeps)?;
            Ok(traj.y_seq[..count].to_vec())
        }
        ModelArtifact::Tpwl(file) => {
            let model = file.to_model()?;
            let init = match &model.basis {
                Some(b) => b.project(&val.traj.x_seq[0])?,
                None => val.traj.x_seq[0].clone(),
            };
            let traj = simulate_tpwl(&model, &init, &u_cols, dt, substeps)?;
            Ok(traj.y_seq[..count].to_vec())
        }
        ModelArtifact::Lti(file) => {
            let model = file.to_model()?;
            let window = fitted.burn_in.min(count);
            let z0 = model.estimate_initial_state(&u_cols[..window], &y_cols[..window], window)?;
            Ok(model.simulate(Some(&z0), &u_cols))
        }
        ModelArtifact::Nn(file) => {
            let model = file.to_model()?;
            let n_past = model.n_past;
            let n_future = model.n_future;
            if count < n_past + n_future {
                return Err(Error::Config(
                    "validation set shorter than one NN window".into(),
                ));
            }
            // seed with measured history, then roll forward block by block
            // feeding predictions back as past outputs
            let mut outputs: Vec<DVector<f64>> = y_cols[..n_past].to_vec();
            while outputs.len() < count {
                let anchor = outputs.len() - 1; // last known instant
                let past_u: Vec<DVector<f64>> =
                    u_cols[anchor + 1 - n_past..=anchor].to_vec();
                let past_y: Vec<DVector<f64>> =
                    outputs[anchor + 1 - n_past..=anchor].to_vec();
                let remaining = count - outputs.len();
                let take = remaining.min(n_future);
                let future_u: Vec<DVector<f64>> = (0..n_future - 1)
                    .map(|j| {
                        let idx = (anchor + 1 + j).min(count - 1);
                        u_cols[idx].clone()
                    })
                    .collect();
                let pred = model.predict(&past_u, &past_y, &future_u)?;
                outputs.extend_from_slice(&pred[..take]);
            }
            Ok(outputs)
        }
    }
}

/// Assemble the closed-loop problem for one mode.
pub fn build_problem(
    cfg: &ExperimentConfig,
    plant: &PlantModel,
    mode: &str,
    steady: &SteadyStateResult,
) -> Result<ControlProblem> {
    let c = &cfg.control;
    let objective = match mode {
        "mpc" => ControlObjective::Tracking(TrackingCost::uniform(
            plant.l,
            plant.r,
            c.q,
            c.r_weight,
            c.p_f,
            steady.y_s.clone(),
            steady.u_s.clone(),
        )),
        "empc" => ControlObjective::Economic(economic_cost(cfg, plant)),
        other => return Err(Error::Config(format!("unknown mode '{other}'"))),
    };
    Ok(ControlProblem {
        horizon: c.horizon,
        dt: cfg.dt_hours(),
        u_lower: cfg.u_lower(),
        u_upper: cfg.u_upper(),
        y_min: c.y_min,
        objective,
        u_steady: steady.u_s.clone(),
        settings: SolverSettings {
            tolerance: c.tolerance,
            max_iterations: c.max_iterations,
            penalty_weight: c.penalty_weight,
            lbfgs_memory: 10,
        },
    })
}

/// The benchmark's economic stage cost: reward converted feed, charge heat.
pub fn economic_cost(cfg: &ExperimentConfig, plant: &PlantModel) -> EconomicCost {
    let flow = plant
        .params
        .get("flow_m3_per_h")
        .copied()
        .unwrap_or(1.0);
    EconomicCost::ThroughputEnergy {
        alpha: cfg.control.alpha,
        beta: cfg.control.beta,
        flow,
        feed_input: 2,
        conc_output: 0,
        energy_inputs: vec![0, 1],
        energy_offsets: vec![0.0, 0.0],
    }
}

/// Compute the steady-state economic optimum used as the tracking target.
pub fn steady_targets(cfg: &ExperimentConfig, plant: &PlantModel) -> Result<SteadyStateResult> {
    crate::control::steady_state_optimize(
        plant,
        &economic_cost(cfg, plant),
        &cfg.u_lower(),
        &cfg.u_upper(),
        cfg.control.steady_seed,
        cfg.control.steady_starts,
    )
}

/// Run the full protocol: excite, fit, open-loop validate, closed-loop MPC
/// and EMPC, and write every artifact under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::create_dir_all(out_dir.join("models"))?;
    std::fs::create_dir_all(out_dir.join("runs"))?;
    std::fs::create_dir_all(out_dir.join("open_loop"))?;

    let plant = cfg.build_plant()?;
    let dataset = generate_dataset(cfg, &plant)?;
    let mut warnings = dataset.warnings.clone();
    let mut files: Vec<PathBuf> = Vec::new();

    let dataset_path = out_dir.join("dataset.csv");
    std::fs::write(&dataset_path, trajectory_to_csv(&dataset.traj, true))?;
    files.push(dataset_path);

    let (train, val) = dataset.split(cfg.excitation.train_fraction);

    // the original plant is always a row; explicit config rows follow
    let mut model_cfgs: Vec<ModelConfig> = Vec::new();
    if !cfg.models.iter().any(|m| matches!(m, ModelConfig::Original { .. })) {
        model_cfgs.push(ModelConfig::Original {
            tag: "original".into(),
        });
    }
    model_cfgs.extend(cfg.models.iter().cloned());

    let mut fitted: Vec<FittedModel> = Vec::new();
    for mc in &model_cfgs {
        match fit_model(cfg, mc, &plant, &train) {
            Ok(f) => fitted.push(f),
            Err(e) => {
                warnings.push(format!("model '{}' failed to fit: {e}", mc.tag()));
            }
        }
    }

    // common comparison window: skip the largest history requirement
    let burn = fitted.iter().map(|f| f.burn_in).max().unwrap_or(0);
    let steady = steady_targets(cfg, &plant)?;

    let mut report = ExperimentReport::new(steady.y_s.clone(), steady.u_s.clone());
    report.warnings.append(&mut warnings);

    let count = val.len();
    let reference: Vec<DVector<f64>> = (0..count).map(|k| val.y_io.column(k).into_owned()).collect();
    for f in &fitted {
        let row = match open_loop_outputs(f, &plant, &val, cfg.dt_hours(), cfg.plant.substeps) {
            Ok(pred) => {
                let score = nrmse(&pred[burn..], &reference[burn..], &steady.y_s)?;
                let ol_path = out_dir.join("open_loop").join(format!("{}.csv", f.tag));
                let traj = outputs_as_trajectory(&val, &pred, cfg.dt_hours());
                std::fs::write(&ol_path, trajectory_to_csv(&traj, false))?;
                files.push(ol_path);
                OpenLoopRow {
                    model: f.tag.clone(),
                    dimension: f.backend.dim(),
                    nrmse: Some(score),
                    failed: false,
                }
            }
            Err(e) => {
                report
                    .warnings
                    .push(format!("open-loop run of '{}' failed: {e}", f.tag));
                OpenLoopRow {
                    model: f.tag.clone(),
                    dimension: f.backend.dim(),
                    nrmse: None,
                    failed: true,
                }
            }
        };
        report.open_loop.push(row);

        if let Some(json) = f.artifact.to_json()? {
            let path = out_dir.join("models").join(format!("{}.json", f.tag));
            std::fs::write(&path, json)?;
            files.push(path);
        }
    }

    for mode in &cfg.run.modes {
        let problem = build_problem(cfg, &plant, mode, &steady)?;
        for f in &fitted {
            match run_closed_loop(
                &plant,
                &problem,
                f.backend.as_ref(),
                cfg.run.closed_loop_steps,
                cfg.plant.substeps,
                None,
            ) {
                Ok(result) => {
                    let run_path = out_dir
                        .join("runs")
                        .join(format!("{mode}_{}.csv", f.tag));
                    std::fs::write(&run_path, report::simulation_csv(&result, &problem))?;
                    files.push(run_path.clone());
                    report.closed_loop.push(ClosedLoopRow {
                        mode: mode.clone(),
                        model: f.tag.clone(),
                        dimension: f.backend.dim(),
                        objective: Some(result.accumulated_objective),
                        mean_solve_time_s: result.mean_solve_time_s,
                        max_solve_time_s: result.max_solve_time_s,
                        run_file: run_path.file_name().unwrap().to_string_lossy().into_owned(),
                        failed: false,
                    });
                }
                Err(e) => {
                    report
                        .warnings
                        .push(format!("closed loop {mode}/'{}' failed: {e}", f.tag));
                    report.closed_loop.push(ClosedLoopRow {
                        mode: mode.clone(),
                        model: f.tag.clone(),
                        dimension: f.backend.dim(),
                        objective: None,
                        mean_solve_time_s: 0.0,
                        max_solve_time_s: 0.0,
                        run_file: String::new(),
                        failed: true,
                    });
                }
            }
        }
    }

    report.files = files
        .iter()
        .map(|p| p.strip_prefix(out_dir).unwrap_or(p).to_string_lossy().into_owned())
        .collect();

    std::fs::write(out_dir.join("report.csv"), report.to_csv())?;
    std::fs::write(out_dir.join("report.txt"), report.to_table())?;
    Ok(report)
}

/// Wrap predicted outputs of a validation window into a trajectory.
fn outputs_as_trajectory(val: &Dataset, outputs: &[DVector<f64>], dt: f64) -> Trajectory {
    let count = outputs.len();
    Trajectory {
        t: (0..count).map(|k| k as f64 * dt).collect(),
        u_seq: (0..count).map(|k| val.u_io.column(k).into_owned()).collect(),
        x_seq: vec![DVector::zeros(0); count],
        y_seq: outputs.to_vec(),
    }
}

/// Long-format plot data: `series,t,value` rows for the selected channels of
/// labeled trajectories.
pub fn emit_plot_data(series: &[(String, Trajectory)], channels: &[String]) -> Result<String> {
    use std::fmt::Write as _;
    if series.is_empty() {
        return Err(Error::Config("no trajectories given".into()));
    }
    let available = |traj: &Trajectory| -> Vec<String> {
        let r = traj.u_seq.first().map_or(0, |u| u.len());
        let l = traj.y_seq.first().map_or(0, |y| y.len());
        let n = traj.x_seq.first().map_or(0, |x| x.len());
        let mut names = Vec::new();
        for i in 1..=r {
            names.push(format!("u_{i}"));
        }
        for i in 1..=l {
            names.push(format!("y_{i}"));
        }
        for i in 1..=n {
            names.push(format!("x_{i}"));
        }
        names
    };
    if channels.is_empty() {
        return Err(Error::UnknownChannel {
            name: "<empty selection>".into(),
            available: available(&series[0].1).join(","),
        });
    }
    let mut out = String::from("series,t,value\n");
    for (label, traj) in series {
        let names = available(traj);
        for ch in channels {
            let Some(pos) = names.iter().position(|n| n == ch) else {
                return Err(Error::UnknownChannel {
                    name: ch.clone(),
                    available: names.join(","),
                });
            };
            let r = traj.u_seq.first().map_or(0, |u| u.len());
            let l = traj.y_seq.first().map_or(0, |y| y.len());
            for k in 0..traj.len() {
                let value = if pos < r {
                    traj.u_seq[k][pos]
                } else if pos < r + l {
                    traj.y_seq[k][pos - r]
                } else {
                    traj.x_seq[k][pos - r - l]
                };
                let _ = writeln!(out, "{label}/{ch},{:.16e},{value:.16e}", traj.t[k]);
            }
        }
    }
    Ok(out)
}
