//! Report assembly: per-model open-loop and closed-loop rows, rendered as a
//! machine-readable CSV (timing columns last) and a human-readable table.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{ControlProblem, SimulationResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenLoopRow {
    pub model: String,
    pub dimension: Option<usize>,
    pub nrmse: Option<f64>,
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedLoopRow {
    pub mode: String,
    pub model: String,
    pub dimension: Option<usize>,
    pub objective: Option<f64>,
    pub mean_solve_time_s: f64,
    pub max_solve_time_s: f64,
    pub run_file: String,
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub y_steady: Vec<f64>,
    pub u_steady: Vec<f64>,
    pub open_loop: Vec<OpenLoopRow>,
    pub closed_loop: Vec<ClosedLoopRow>,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

fn dim_label(d: Option<usize>) -> String {
    match d {
        Some(v) => v.to_string(),
        None => "n/a".into(),
    }
}

fn opt_f64(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.16e}"),
        None => "failed".into(),
    }
}

impl ExperimentReport {
    pub fn new(y_s: DVector<f64>, u_s: DVector<f64>) -> Self {
        ExperimentReport {
            y_steady: y_s.as_slice().to_vec(),
            u_steady: u_s.as_slice().to_vec(),
            open_loop: Vec::new(),
            closed_loop: Vec::new(),
            files: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Machine-readable report. Timing columns sit last so determinism
    /// checks can strip them.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "section,mode,model,dimension,nrmse,objective,run_file,mean_solve_time_s,max_solve_time_s\n",
        );
        for row in &self.open_loop {
            let _ = writeln!(
                s,
                "open_loop,,{},{},{},,,,",
                row.model,
                dim_label(row.dimension),
                opt_f64(row.nrmse),
            );
        }
        for row in &self.closed_loop {
            let _ = writeln!(
                s,
                "closed_loop,{},{},{},,{},{},{:.6e},{:.6e}",
                row.mode,
                row.model,
                dim_label(row.dimension),
                opt_f64(row.objective),
                row.run_file,
                row.mean_solve_time_s,
                row.max_solve_time_s,
            );
        }
        s
    }

    /// Human-readable tables mirroring the comparison protocol.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "steady targets: y_s = {:?}, u_s = {:?}", self.y_steady, self.u_steady);
        let _ = writeln!(s);
        let _ = writeln!(s, "open-loop prediction (validation split)");
        let _ = writeln!(s, "{:<16} {:>10} {:>14}", "model", "dimension", "NRMSE");
        for row in &self.open_loop {
            let _ = writeln!(
                s,
                "{:<16} {:>10} {:>14}",
                row.model,
                dim_label(row.dimension),
                row.nrmse.map_or("failed".into(), |v| format!("{v:.6}")),
            );
        }
        for mode in ["mpc", "empc"] {
            let rows: Vec<&ClosedLoopRow> =
                self.closed_loop.iter().filter(|r| r.mode == mode).collect();
            if rows.is_empty() {
                continue;
            }
            let _ = writeln!(s);
            let _ = writeln!(s, "closed loop: {}", mode.to_uppercase());
            let _ = writeln!(
                s,
                "{:<16} {:>10} {:>16} {:>16} {:>18}",
                "model", "dimension", "time mean (s)", "time max (s)", "objective"
            );
            for row in rows {
                let _ = writeln!(
                    s,
                    "{:<16} {:>10} {:>16.6} {:>16.6} {:>18}",
                    row.model,
                    dim_label(row.dimension),
                    row.mean_solve_time_s,
                    row.max_solve_time_s,
                    row.objective
                        .map_or("failed".into(), |v| format!("{v:.4}")),
                );
            }
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "warnings:");
            for w in &self.warnings {
                let _ = writeln!(s, "  - {w}");
            }
        }
        s
    }
}

/// Per-step CSV of a closed-loop run: trajectory columns plus stage cost and
/// solver diagnostics; the last row is the terminal sample.
pub fn simulation_csv(result: &SimulationResult, problem: &ControlProblem) -> String {
    let mut s = String::from("t");
    let r = result.steps.first().map_or(0, |rec| rec.u.len());
    let l = result.steps.first().map_or(0, |rec| rec.y.len());
    let n = result.steps.first().map_or(0, |rec| rec.x.len());
    for i in 1..=r {
        let _ = write!(s, ",u_{i}");
    }
    for i in 1..=l {
        let _ = write!(s, ",y_{i}");
    }
    for i in 1..=n {
        let _ = write!(s, ",x_{i}");
    }
    s.push_str(",stage_cost,solve_time_s,iterations,converged\n");
    let fmt = |v: f64| format!("{v:.16e}");
    for rec in &result.steps {
        let _ = write!(s, "{}", fmt(rec.t));
        for v in rec.u.iter() {
            let _ = write!(s, ",{}", fmt(*v));
        }
        for v in rec.y.iter() {
            let _ = write!(s, ",{}", fmt(*v));
        }
        for v in rec.x.iter() {
            let _ = write!(s, ",{}", fmt(*v));
        }
        let _ = writeln!(
            s,
            ",{},{},{},{}",
            fmt(rec.stage_cost),
            fmt(rec.solve_time_s),
            rec.iterations,
            u8::from(rec.converged),
        );
    }
    if let Some(last) = result.steps.last() {
        let _ = write!(s, "{}", fmt(last.t + problem.dt));
        for v in last.u.iter() {
            let _ = write!(s, ",{}", fmt(*v));
        }
        for v in result.final_y.iter() {
            let _ = write!(s, ",{}", fmt(*v));
        }
        for v in result.final_x.iter() {
            let _ = write!(s, ",{}", fmt(*v));
        }
        let _ = writeln!(s, ",{},{},0,1", fmt(0.0), fmt(0.0));
    }
    s
}
