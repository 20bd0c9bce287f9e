//! Experiment configuration: one TOML file fully determines an experiment.
//!
//! Keys carry their units (`dt_minutes`, `*_kj_per_h`); every random choice
//! takes an explicit seed, so reruns are bit-reproducible.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::plant::{PlantModel, TwoCstrParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub excitation: ExcitationConfig,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    pub control: ControlConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    /// Currently the shipped benchmark: "two_cstr".
    pub kind: String,
    pub dt_minutes: f64,
    /// RK4 substeps per sample interval.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Named parameter overrides, units in the key names.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Refine x0 to the steady state at the nominal input before running.
    #[serde(default = "default_true")]
    pub settle_initial_state: bool,
}

fn default_substeps() -> usize {
    10
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationConfig {
    /// "multilevel" or "prbs_plus_steps".
    pub kind: String,
    pub steps: usize,
    pub seed: u64,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
    #[serde(default = "default_levels")]
    pub levels: usize,
    pub hold_min: usize,
    pub hold_max: usize,
    /// Relative magnitude of the added small steps (prbs_plus_steps only).
    #[serde(default = "default_extra_fraction")]
    pub extra_fraction: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_levels() -> usize {
    5
}

fn default_extra_fraction() -> f64 {
    0.1
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    /// The original plant as its own prediction model.
    Original { tag: String },
    Tpwl {
        tag: String,
        points: usize,
    },
    PodTpwl {
        tag: String,
        points: usize,
        /// Explicit retained order; overrides the energy threshold.
        #[serde(default)]
        pod_order: Option<usize>,
        #[serde(default)]
        pod_energy: Option<f64>,
        #[serde(default)]
        mean_center: bool,
    },
    Subspace {
        tag: String,
        #[serde(default = "default_block_rows")]
        block_rows: usize,
        #[serde(default)]
        order: Option<usize>,
        #[serde(default)]
        sv_cutoff: Option<f64>,
    },
    Nn {
        tag: String,
        n_past: usize,
        hidden: Vec<usize>,
        activations: Vec<String>,
        learning_rate: f64,
        batch_size: usize,
        epochs: usize,
        seed: u64,
        #[serde(default = "default_patience")]
        patience: usize,
    },
}

fn default_block_rows() -> usize {
    10
}

fn default_patience() -> usize {
    50
}

impl ModelConfig {
    pub fn tag(&self) -> &str {
        match self {
            ModelConfig::Original { tag }
            | ModelConfig::Tpwl { tag, .. }
            | ModelConfig::PodTpwl { tag, .. }
            | ModelConfig::Subspace { tag, .. }
            | ModelConfig::Nn { tag, .. } => tag,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub horizon: usize,
    /// Diagonal output weight (tracking).
    #[serde(default = "default_one")]
    pub q: f64,
    /// Diagonal input-move weight (tracking).
    #[serde(default)]
    pub r_weight: f64,
    /// Terminal output weight (tracking).
    #[serde(default = "default_pf")]
    pub p_f: f64,
    /// Economic throughput weight.
    pub alpha: f64,
    /// Economic energy weight.
    pub beta: f64,
    /// Output lower bound, penalty-enforced; defaults to 0.
    #[serde(default = "default_y_min")]
    pub y_min: Option<f64>,
    #[serde(default = "default_penalty")]
    pub penalty_weight: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Seed and start count for the steady-state multi-start optimizer.
    pub steady_seed: u64,
    #[serde(default = "default_steady_starts")]
    pub steady_starts: usize,
    /// Prediction substeps for continuous-time backends.
    #[serde(default = "default_prediction_substeps")]
    pub prediction_substeps: usize,
}

fn default_one() -> f64 {
    1.0
}

fn default_pf() -> f64 {
    10.0
}

fn default_y_min() -> Option<f64> {
    Some(0.0)
}

fn default_penalty() -> f64 {
    1e4
}

fn default_tolerance() -> f64 {
    1e-6
}

fn default_max_iterations() -> usize {
    200
}

fn default_steady_starts() -> usize {
    4
}

fn default_prediction_substeps() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub closed_loop_steps: usize,
    /// Controller modes to run: "mpc", "empc".
    pub modes: Vec<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.plant.kind != "two_cstr" {
            return Err(Error::Config(format!(
                "unknown plant kind '{}' (available: two_cstr)",
                self.plant.kind
            )));
        }
        if self.plant.dt_minutes <= 0.0 {
            return Err(Error::Config("dt_minutes must be positive".into()));
        }
        let mut tags = std::collections::BTreeSet::new();
        for m in &self.models {
            if !tags.insert(m.tag().to_string()) {
                return Err(Error::Config(format!(
                    "model tag '{}' appears more than once",
                    m.tag()
                )));
            }
        }
        for mode in &self.run.modes {
            if mode != "mpc" && mode != "empc" {
                return Err(Error::Config(format!(
                    "unknown controller mode '{mode}' (available: mpc, empc)"
                )));
            }
        }
        if !(self.excitation.kind == "multilevel" || self.excitation.kind == "prbs_plus_steps") {
            return Err(Error::Config(format!(
                "unknown excitation kind '{}' (available: multilevel, prbs_plus_steps)",
                self.excitation.kind
            )));
        }
        if !(0.0 < self.excitation.train_fraction && self.excitation.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        for m in &self.models {
            if let ModelConfig::Nn {
                hidden,
                activations,
                ..
            } = m
            {
                if hidden.len() != activations.len() {
                    return Err(Error::Config(format!(
                        "model '{}': hidden and activations must have equal length",
                        m.tag()
                    )));
                }
                for a in activations {
                    parse_activation(a)?;
                }
            }
        }
        Ok(())
    }

    /// Sample interval in the plant's time unit (hours).
    pub fn dt_hours(&self) -> f64 {
        self.plant.dt_minutes / 60.0
    }

    /// Build the configured plant, applying parameter overrides.
    pub fn build_plant(&self) -> Result<PlantModel> {
        let mut p = TwoCstrParams::default();
        for (key, value) in &self.plant.params {
            match key.as_str() {
                "flow_m3_per_h" => p.flow_m3_per_h = *value,
                "volume1_m3" => p.volume1_m3 = *value,
                "volume2_m3" => p.volume2_m3 = *value,
                "feed_temp_k" => p.feed_temp_k = *value,
                "k0_per_h" => p.k0_per_h = *value,
                "activation_energy_kj_per_kmol" => p.activation_energy_kj_per_kmol = *value,
                "gas_constant_kj_per_kmol_k" => p.gas_constant_kj_per_kmol_k = *value,
                "reaction_heat_kj_per_kmol" => p.reaction_heat_kj_per_kmol = *value,
                "rho_cp_kj_per_m3_k" => p.rho_cp_kj_per_m3_k = *value,
                "q1_nominal_kj_per_h" => p.u0[0] = *value,
                "q2_nominal_kj_per_h" => p.u0[1] = *value,
                "feed_conc_nominal_kmol_per_m3" => p.u0[2] = *value,
                other => {
                    return Err(Error::Config(format!(
                        "unknown plant parameter '{other}'"
                    )))
                }
            }
        }
        let mut model = PlantModel::two_cstr(p);
        if self.plant.settle_initial_state {
            let x = crate::plant::find_steady_state(&model, &model.u0, &model.x0)?;
            model.x0 = x;
        }
        Ok(model)
    }

    pub fn u_lower(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.excitation.u_lower)
    }

    pub fn u_upper(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.excitation.u_upper)
    }
}

pub fn parse_activation(name: &str) -> Result<Activation> {
    match name {
        "sigmoid" => Ok(Activation::Sigmoid),
        "swish" => Ok(Activation::Swish),
        "linear" => Ok(Activation::Linear),
        other => Err(Error::Config(format!(
            "unknown activation '{other}' (available: sigmoid, swish, linear)"
        ))),
    }
}
