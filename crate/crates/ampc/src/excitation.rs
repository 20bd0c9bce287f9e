//! Persistently exciting input signals and identification datasets.
//!
//! Two signal families are provided: multi-level signals whose channels
//! independently hold values drawn from an equally spaced level set, and PRBS
//! signals with small additional steps superimposed for mildly nonlinear
//! excitation. Generation is driven by a portable counter-based RNG
//! (ChaCha8), one stream per channel, so a seed fully determines a signal on
//! every platform.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::plant::{integrate, PlantModel, Trajectory};

/// Multi-level excitation: each channel holds a value drawn uniformly from an
/// equally spaced level set for a uniformly drawn number of steps.
#[derive(Debug, Clone)]
pub struct MultiLevelSpec {
    /// Cardinality of the level set per channel, at least 2.
    pub levels_per_channel: usize,
    /// Inclusive bounds on the hold duration in sample steps.
    pub hold_min: usize,
    pub hold_max: usize,
    pub u_lower: DVector<f64>,
    pub u_upper: DVector<f64>,
    pub seed: u64,
}

/// PRBS with small additional steps: a two-level PRBS per channel plus an
/// independent two-level PRBS of relative magnitude `extra_fraction`, summed
/// and clipped to the channel bounds.
#[derive(Debug, Clone)]
pub struct PrbsPlusStepsSpec {
    /// Low/high base magnitude per channel.
    pub base_low: DVector<f64>,
    pub base_high: DVector<f64>,
    /// Relative magnitude of the additional steps, in [0, 1).
    pub extra_fraction: f64,
    pub hold_min: usize,
    pub hold_max: usize,
    /// Clipping bounds for the summed signal.
    pub u_lower: DVector<f64>,
    pub u_upper: DVector<f64>,
    pub seed: u64,
}

impl MultiLevelSpec {
    fn validate(&self, steps: usize) -> Result<()> {
        if self.levels_per_channel < 2 {
            return Err(Error::Config(format!(
                "levels_per_channel must be >= 2, got {}",
                self.levels_per_channel
            )));
        }
        if self.hold_min < 1 || self.hold_min > self.hold_max {
            return Err(Error::Config(format!(
                "hold bounds must satisfy 1 <= hold_min <= hold_max, got [{}, {}]",
                self.hold_min, self.hold_max
            )));
        }
        if steps == 0 {
            return Err(Error::Config("signal length must be >= 1".into()));
        }
        if self.u_lower.len() != self.u_upper.len() {
            return Err(Error::Dimension {
                context: "excitation bounds",
                expected: self.u_lower.len(),
                got: self.u_upper.len(),
            });
        }
        for (lo, hi) in self.u_lower.iter().zip(self.u_upper.iter()) {
            if lo >= hi {
                return Err(Error::Config(format!(
                    "u_lower must be < u_upper componentwise, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// The equally spaced level set of one channel.
    pub fn level_set(&self, channel: usize) -> Vec<f64> {
        let lo = self.u_lower[channel];
        let hi = self.u_upper[channel];
        let m = self.levels_per_channel;
        (0..m)
            .map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64)
            .collect()
    }
}

/// One independent hold-and-redraw lane over an arbitrary level set.
struct HoldLane {
    rng: ChaCha8Rng,
    levels: Vec<f64>,
    hold_min: usize,
    hold_max: usize,
    current: f64,
    remaining: usize,
}

impl HoldLane {
    fn new(seed: u64, stream: u64, levels: Vec<f64>, hold_min: usize, hold_max: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        HoldLane {
            rng,
            levels,
            hold_min,
            hold_max,
            current: 0.0,
            remaining: 0,
        }
    }

    fn next_value(&mut self) -> f64 {
        if self.remaining == 0 {
            let idx = self.rng.gen_range(0..self.levels.len());
            self.current = self.levels[idx];
            self.remaining = self.rng.gen_range(self.hold_min..=self.hold_max);
        }
        self.remaining -= 1;
        self.current
    }
}

/// Generate a multi-level excitation signal of the given length.
pub fn multilevel_signal(spec: &MultiLevelSpec, steps: usize) -> Result<Vec<DVector<f64>>> {
    spec.validate(steps)?;
    let r = spec.u_lower.len();
    let mut lanes: Vec<HoldLane> = (0..r)
        .map(|c| {
            HoldLane::new(
                spec.seed,
                c as u64,
                spec.level_set(c),
                spec.hold_min,
                spec.hold_max,
            )
        })
        .collect();
    let mut signal = Vec::with_capacity(steps);
    for _ in 0..steps {
        let u = DVector::from_fn(r, |c, _| lanes[c].next_value());
        signal.push(u);
    }
    Ok(signal)
}

/// Generate a PRBS-plus-small-steps signal of the given length.
pub fn prbs_plus_steps(spec: &PrbsPlusStepsSpec, steps: usize) -> Result<Vec<DVector<f64>>> {
    if !(0.0..1.0).contains(&spec.extra_fraction) {
        return Err(Error::Config(format!(
            "extra_fraction must lie in [0, 1), got {}",
            spec.extra_fraction
        )));
    }
    if steps == 0 {
        return Err(Error::Config("signal length must be >= 1".into()));
    }
    let r = spec.base_low.len();
    // Streams 2c for the base PRBS, 2c+1 for the additional steps.
    let mut base: Vec<HoldLane> = (0..r)
        .map(|c| {
            HoldLane::new(
                spec.seed,
                2 * c as u64,
                vec![spec.base_low[c], spec.base_high[c]],
                spec.hold_min,
                spec.hold_max,
            )
        })
        .collect();
    let mut extra: Vec<HoldLane> = (0..r)
        .map(|c| {
            let step = spec.extra_fraction * (spec.base_high[c] - spec.base_low[c]);
            HoldLane::new(
                spec.seed,
                2 * c as u64 + 1,
                vec![0.0, step],
                spec.hold_min,
                spec.hold_max,
            )
        })
        .collect();
    let mut signal = Vec::with_capacity(steps);
    for _ in 0..steps {
        let u = DVector::from_fn(r, |c, _| {
            let v = base[c].next_value() + extra[c].next_value();
            v.clamp(spec.u_lower[c], spec.u_upper[c])
        });
        signal.push(u);
    }
    Ok(signal)
}

/// Time-stamped input/output/state records used for fitting and validation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub traj: Trajectory,
    pub dt: f64,
    /// Snapshot matrix X = [x(t_1) ... x(t_N)], n x N.
    pub snapshot: DMatrix<f64>,
    /// Inputs applied over each sample interval, r x N.
    pub u_io: DMatrix<f64>,
    /// Outputs at the start of each sample interval, l x N.
    pub y_io: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl Dataset {
    /// Number of data points.
    pub fn len(&self) -> usize {
        self.u_io.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Split into leading/trailing parts, e.g. 0.8 for an 80/20
    /// train/validation split.
    pub fn split(&self, train_fraction: f64) -> (Dataset, Dataset) {
        let n_total = self.len();
        let n_train = ((n_total as f64) * train_fraction).round() as usize;
        let n_train = n_train.clamp(1, (n_total - 1).max(1));
        (
            self.slice(0, n_train),
            self.slice(n_train, n_total - n_train),
        )
    }

    fn slice(&self, start: usize, count: usize) -> Dataset {
        let traj = Trajectory {
            t: self.traj.t[start..start + count + 1].to_vec(),
            u_seq: self.traj.u_seq[start..start + count + 1].to_vec(),
            x_seq: self.traj.x_seq[start..start + count + 1].to_vec(),
            y_seq: self.traj.y_seq[start..start + count + 1].to_vec(),
        };
        Dataset {
            traj,
            dt: self.dt,
            snapshot: self.snapshot.columns(start, count).into_owned(),
            u_io: self.u_io.columns(start, count).into_owned(),
            y_io: self.y_io.columns(start, count).into_owned(),
            warnings: Vec::new(),
        }
    }
}

/// Simulate the plant under the given input sequence and assemble the
/// identification dataset.
pub fn collect_dataset(
    model: &PlantModel,
    u_seq: &[DVector<f64>],
    dt: f64,
    substeps: usize,
) -> Result<Dataset> {
    if u_seq.is_empty() {
        return Err(Error::Config("input sequence must be non-empty".into()));
    }
    let traj = integrate(model, &model.x0, u_seq, dt, substeps)?;
    let n = model.n;
    let big_n = u_seq.len();
    let mut snapshot = DMatrix::zeros(n, big_n);
    let mut u_io = DMatrix::zeros(model.r, big_n);
    let mut y_io = DMatrix::zeros(model.l, big_n);
    for k in 0..big_n {
        snapshot.set_column(k, &traj.x_seq[k + 1]);
        u_io.set_column(k, &traj.u_seq[k]);
        y_io.set_column(k, &traj.y_seq[k]);
    }
    let mut warnings = Vec::new();
    if big_n < 10 * n {
        warnings.push(format!(
            "snapshot has N = {big_n} columns for n = {n} states; N >= {} recommended",
            10 * n
        ));
    }
    Ok(Dataset {
        traj,
        dt,
        snapshot,
        u_io,
        y_io,
        warnings,
    })
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serialize a trajectory to CSV: `t,u_1..u_r,y_1..y_l[,x_1..x_n]`,
/// 17 significant digits.
pub fn trajectory_to_csv(traj: &Trajectory, include_states: bool) -> String {
    let r = traj.u_seq.first().map_or(0, |u| u.len());
    let l = traj.y_seq.first().map_or(0, |y| y.len());
    let n = traj.x_seq.first().map_or(0, |x| x.len());
    let mut s = String::from("t");
    for i in 1..=r {
        let _ = write!(s, ",u_{i}");
    }
    for i in 1..=l {
        let _ = write!(s, ",y_{i}");
    }
    if include_states {
        for i in 1..=n {
            let _ = write!(s, ",x_{i}");
        }
    }
    s.push('\n');
    for k in 0..traj.len() {
        let _ = write!(s, "{}", fmt17(traj.t[k]));
        for v in traj.u_seq[k].iter() {
            let _ = write!(s, ",{}", fmt17(*v));
        }
        for v in traj.y_seq[k].iter() {
            let _ = write!(s, ",{}", fmt17(*v));
        }
        if include_states {
            for v in traj.x_seq[k].iter() {
                let _ = write!(s, ",{}", fmt17(*v));
            }
        }
        s.push('\n');
    }
    s
}

pub fn write_trajectory_csv(traj: &Trajectory, include_states: bool, path: &Path) -> Result<()> {
    std::fs::write(path, trajectory_to_csv(traj, include_states))?;
    Ok(())
}

/// Parse a trajectory CSV produced by [`trajectory_to_csv`] (or a run CSV
/// carrying extra diagnostic columns; those are ignored). Columns are mapped
/// by header name.
pub fn trajectory_from_csv(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty trajectory CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t") {
        return Err(Error::Config(format!(
            "trajectory CSV must start with a 't' column, got '{header}'"
        )));
    }
    let pick = |prefix: &str| -> Vec<usize> {
        let mut idx: Vec<(usize, usize)> = cols
            .iter()
            .enumerate()
            .filter_map(|(pos, c)| {
                c.strip_prefix(prefix)
                    .and_then(|tail| tail.parse::<usize>().ok())
                    .map(|ch| (ch, pos))
            })
            .collect();
        idx.sort_unstable();
        idx.into_iter().map(|(_, pos)| pos).collect()
    };
    let u_pos = pick("u_");
    let y_pos = pick("y_");
    let x_pos = pick("x_");
    let mut traj = Trajectory {
        t: Vec::new(),
        u_seq: Vec::new(),
        x_seq: Vec::new(),
        y_seq: Vec::new(),
    };
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Config(format!(
                "CSV line {}: expected {} fields, got {}",
                idx + 2,
                cols.len(),
                fields.len()
            )));
        }
        let parse = |pos: usize| -> Result<f64> {
            fields[pos]
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("CSV line {}: {e}", idx + 2)))
        };
        traj.t.push(parse(0)?);
        traj.u_seq.push(DVector::from_iterator(
            u_pos.len(),
            u_pos.iter().map(|&p| parse(p)).collect::<Result<Vec<_>>>()?,
        ));
        traj.y_seq.push(DVector::from_iterator(
            y_pos.len(),
            y_pos.iter().map(|&p| parse(p)).collect::<Result<Vec<_>>>()?,
        ));
        traj.x_seq.push(DVector::from_iterator(
            x_pos.len(),
            x_pos.iter().map(|&p| parse(p)).collect::<Result<Vec<_>>>()?,
        ));
    }
    Ok(traj)
}
