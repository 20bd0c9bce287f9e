//! Fully connected multi-step-ahead neural predictors.
//!
//! One forward pass maps a window of past inputs/outputs plus the future
//! input moves to the whole future output window, so an optimizer needs a
//! single call per objective evaluation instead of recursive one-step
//! predictions. Training is mini-batch gradient descent with Adam-style
//! moment estimates on the mean squared error of scaled targets; everything
//! is seeded and single-threaded, so a seed reproduces weights bit for bit.
//!
//! Input layout per sample, all values scaled channel-wise to [-1, 1]:
//! `N_past` blocks of `(u_k, y_k)` ending at the current step, then
//! `N_future - 1` blocks of future inputs. The target stacks `N_future`
//! output vectors starting at the step after the history window.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::Dataset;
use crate::linalg::MatrixRepr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Swish,
    Linear,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(v),
            Activation::Swish => v * sigmoid(v),
            Activation::Linear => v,
        }
    }

    fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s)
            }
            Activation::Swish => {
                let s = sigmoid(v);
                s + v * s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// out x in weight matrix.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub activation: Activation,
}

/// Per-channel affine map between raw units and [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    pub fn scale(&self, v: f64) -> f64 {
        2.0 * (v - self.min) / (self.max - self.min) - 1.0
    }

    pub fn unscale(&self, v: f64) -> f64 {
        self.min + 0.5 * (v + 1.0) * (self.max - self.min)
    }
}

/// Trained multi-step predictor with its window geometry and scaling table.
#[derive(Debug, Clone)]
pub struct NNPredictor {
    pub layers: Vec<Layer>,
    pub n_past: usize,
    pub n_future: usize,
    /// Input channels.
    pub r: usize,
    /// Output channels.
    pub l: usize,
    pub u_range: Vec<ChannelRange>,
    pub y_range: Vec<ChannelRange>,
}

/// Scaled training data plus everything needed to assemble the predictor.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    /// in_dim x samples, scaled.
    pub inputs: DMatrix<f64>,
    /// out_dim x samples, scaled.
    pub targets: DMatrix<f64>,
    pub n_past: usize,
    pub n_future: usize,
    pub r: usize,
    pub l: usize,
    pub u_range: Vec<ChannelRange>,
    pub y_range: Vec<ChannelRange>,
}

pub fn input_dim(n_past: usize, n_future: usize, r: usize, l: usize) -> usize {
    n_past * (r + l) + (n_future - 1) * r
}

pub fn output_dim(n_future: usize, l: usize) -> usize {
    n_future * l
}

fn channel_ranges(data: &DMatrix<f64>) -> std::result::Result<Vec<ChannelRange>, usize> {
    let mut out = Vec::with_capacity(data.nrows());
    for ch in 0..data.nrows() {
        let row = data.row(ch);
        let min = row.min();
        let max = row.max();
        if min == max {
            return Err(ch);
        }
        out.push(ChannelRange { min, max });
    }
    Ok(out)
}

/// Sliding-window reconstruction of the dataset into scaled input/target
/// matrices. Each sample is anchored at a "current" step T: the history
/// covers steps T-N_past+1..=T, the future inputs cover T+1..=T+N_future-1,
/// and the targets cover T+1..=T+N_future.
pub fn build_training_set(
    dataset: &Dataset,
    n_past: usize,
    n_future: usize,
) -> Result<TrainingSet> {
    if n_past == 0 || n_future == 0 {
        return Err(Error::Config("window lengths must be >= 1".into()));
    }
    let n_data = dataset.len();
    if n_data < n_past + n_future {
        return Err(Error::Config(format!(
            "dataset of length {n_data} too short for N_past + N_future = {}",
            n_past + n_future
        )));
    }
    let r = dataset.u_io.nrows();
    let l = dataset.y_io.nrows();
    let u_range = channel_ranges(&dataset.u_io).map_err(|ch| Error::ScalingDegenerate {
        channel: ch,
        value: dataset.u_io[(ch, 0)],
    })?;
    let y_range = channel_ranges(&dataset.y_io).map_err(|ch| Error::ScalingDegenerate {
        channel: ch,
        value: dataset.y_io[(ch, 0)],
    })?;

    let in_dim = input_dim(n_past, n_future, r, l);
    let out_dim = output_dim(n_future, l);
    let samples = n_data - n_past - n_future + 1;
    let mut inputs = DMatrix::zeros(in_dim, samples);
    let mut targets = DMatrix::zeros(out_dim, samples);

    for (col, anchor) in (n_past - 1..n_data - n_future).enumerate() {
        let mut row = 0;
        for k in (anchor + 1 - n_past)..=anchor {
            for ch in 0..r {
                inputs[(row, col)] = u_range[ch].scale(dataset.u_io[(ch, k)]);
                row += 1;
            }
            for ch in 0..l {
                inputs[(row, col)] = y_range[ch].scale(dataset.y_io[(ch, k)]);
                row += 1;
            }
        }
        for k in (anchor + 1)..(anchor + n_future) {
            for ch in 0..r {
                inputs[(row, col)] = u_range[ch].scale(dataset.u_io[(ch, k)]);
                row += 1;
            }
        }
        debug_assert_eq!(row, in_dim);
        let mut trow = 0;
        for k in (anchor + 1)..=(anchor + n_future) {
            for ch in 0..l {
                targets[(trow, col)] = y_range[ch].scale(dataset.y_io[(ch, k)]);
                trow += 1;
            }
        }
        debug_assert_eq!(trow, out_dim);
    }

    Ok(TrainingSet {
        inputs,
        targets,
        n_past,
        n_future,
        r,
        l,
        u_range,
        y_range,
    })
}

/// Batch forward pass on scaled data; returns pre-activations and
/// activations per layer (activations[0] is the input).
fn forward_pass(layers: &[Layer], x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let cols = x.ncols();
    let ones = RowDVector::<f64>::from_element(cols, 1.0);
    let mut pre = Vec::with_capacity(layers.len());
    let mut act = Vec::with_capacity(layers.len() + 1);
    act.push(x.clone());
    for layer in layers {
        let z = &layer.w * act.last().unwrap() + &layer.b * &ones;
        let a = z.map(|v| layer.activation.apply(v));
        pre.push(z);
        act.push(a);
    }
    (pre, act)
}

/// Mean squared error over all entries of the scaled prediction.
pub fn mse_loss(layers: &[Layer], x: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let (_, act) = forward_pass(layers, x);
    let diff = act.last().unwrap() - t;
    diff.norm_squared() / (diff.nrows() * diff.ncols()) as f64
}

/// Backpropagation: gradients of [`mse_loss`] with respect to every weight
/// and bias, plus the loss itself.
pub fn loss_gradients(
    layers: &[Layer],
    x: &DMatrix<f64>,
    t: &DMatrix<f64>,
) -> (f64, Vec<(DMatrix<f64>, DVector<f64>)>) {
    let (pre, act) = forward_pass(layers, x);
    let count = (t.nrows() * t.ncols()) as f64;
    let diff = act.last().unwrap() - t;
    let loss = diff.norm_squared() / count;

    let mut grads = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); layers.len()];
    let mut d_act = diff * (2.0 / count);
    for idx in (0..layers.len()).rev() {
        let d_pre = d_act.zip_map(&pre[idx], |g, z| g * layers[idx].activation.derivative(z));
        let dw = &d_pre * act[idx].transpose();
        let db = DVector::from_fn(d_pre.nrows(), |i, _| d_pre.row(i).sum());
        if idx > 0 {
            d_act = layers[idx].w.transpose() * &d_pre;
        }
        grads[idx] = (dw, db);
    }
    (loss, grads)
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hidden: Vec<(usize, Activation)>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Trailing fraction of samples held out for early stopping.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![(16, Activation::Swish), (8, Activation::Swish)],
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 1000,
            seed: 0,
            validation_fraction: 0.2,
            patience: 50,
        }
    }
}

/// Loss bookkeeping from a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_train_mse: f64,
    pub best_validation_mse: f64,
    pub epochs_run: usize,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct AdamState {
    m: Vec<(DMatrix<f64>, DVector<f64>)>,
    v: Vec<(DMatrix<f64>, DVector<f64>)>,
    t: usize,
}

impl AdamState {
    fn new(layers: &[Layer]) -> Self {
        let zeros = |l: &Layer| {
            (
                DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                DVector::zeros(l.b.len()),
            )
        };
        AdamState {
            m: layers.iter().map(zeros).collect(),
            v: layers.iter().map(zeros).collect(),
            t: 0,
        }
    }

    fn update(&mut self, layers: &mut [Layer], grads: &[(DMatrix<f64>, DVector<f64>)], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (idx, layer) in layers.iter_mut().enumerate() {
            let (gw, gb) = &grads[idx];
            let (mw, mb) = &mut self.m[idx];
            let (vw, vb) = &mut self.v[idx];
            *mw = &*mw * ADAM_BETA1 + gw * (1.0 - ADAM_BETA1);
            *vw = &*vw * ADAM_BETA2 + gw.component_mul(gw) * (1.0 - ADAM_BETA2);
            *mb = &*mb * ADAM_BETA1 + gb * (1.0 - ADAM_BETA1);
            *vb = &*vb * ADAM_BETA2 + gb.component_mul(gb) * (1.0 - ADAM_BETA2);
            for i in 0..layer.w.nrows() {
                for j in 0..layer.w.ncols() {
                    let mhat = mw[(i, j)] / bc1;
                    let vhat = vw[(i, j)] / bc2;
                    layer.w[(i, j)] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
                let mhat = mb[i] / bc1;
                let vhat = vb[i] / bc2;
                layer.b[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn init_layers(dims: &[usize], activations: &[Activation], seed: u64) -> Vec<Layer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for k in 0..dims.len() - 1 {
        let fan_in = dims[k];
        let fan_out = dims[k + 1];
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound));
        layers.push(Layer {
            w,
            b: DVector::zeros(fan_out),
            activation: activations[k],
        });
    }
    layers
}

/// Train a predictor on the given training set.
pub fn train(set: &TrainingSet, cfg: &TrainConfig) -> Result<(NNPredictor, TrainReport)> {
    let samples = set.inputs.ncols();
    if samples == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    let in_dim = set.inputs.nrows();
    let out_dim = set.targets.nrows();

    let mut dims = vec![in_dim];
    let mut acts = Vec::new();
    for (nodes, act) in &cfg.hidden {
        dims.push(*nodes);
        acts.push(*act);
    }
    dims.push(out_dim);
    // output layer is linear: scaled targets live in [-1, 1] around zero
    acts.push(Activation::Linear);

    let mut layers = init_layers(&dims, &acts, cfg.seed);
    let mut adam = AdamState::new(&layers);

    // trailing validation split
    let n_val = ((samples as f64) * cfg.validation_fraction).round() as usize;
    let n_val = n_val.min(samples - 1);
    let n_train = samples - n_val;
    let x_train = set.inputs.columns(0, n_train).into_owned();
    let t_train = set.targets.columns(0, n_train).into_owned();
    let (x_val, t_val) = if n_val > 0 {
        (
            Some(set.inputs.columns(n_train, n_val).into_owned()),
            Some(set.targets.columns(n_train, n_val).into_owned()),
        )
    } else {
        (None, None)
    };

    let mut order: Vec<usize> = (0..n_train).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let batch = cfg.batch_size.max(1).min(n_train);

    let mut best_val = f64::INFINITY;
    let mut best_layers = layers.clone();
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        // Fisher-Yates with the seeded generator
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut start = 0;
        while start < n_train {
            let count = batch.min(n_train - start);
            let mut xb = DMatrix::zeros(in_dim, count);
            let mut tb = DMatrix::zeros(out_dim, count);
            for (c, &idx) in order[start..start + count].iter().enumerate() {
                xb.set_column(c, &x_train.column(idx));
                tb.set_column(c, &t_train.column(idx));
            }
            let (loss, grads) = loss_gradients(&layers, &xb, &tb);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.update(&mut layers, &grads, cfg.learning_rate);
            start += count;
        }

        let monitored = match (&x_val, &t_val) {
            (Some(xv), Some(tv)) => mse_loss(&layers, xv, tv),
            _ => mse_loss(&layers, &x_train, &t_train),
        };
        if !monitored.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        if monitored < best_val {
            best_val = monitored;
            best_layers = layers.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let final_train_mse = mse_loss(&best_layers, &x_train, &t_train);
    let predictor = NNPredictor {
        layers: best_layers,
        n_past: set.n_past,
        n_future: set.n_future,
        r: set.r,
        l: set.l,
        u_range: set.u_range.clone(),
        y_range: set.y_range.clone(),
    };
    Ok((
        predictor,
        TrainReport {
            final_train_mse,
            best_validation_mse: best_val,
            epochs_run,
        },
    ))
}

impl NNPredictor {
    pub fn in_dim(&self) -> usize {
        input_dim(self.n_past, self.n_future, self.r, self.l)
    }

    pub fn out_dim(&self) -> usize {
        output_dim(self.n_future, self.l)
    }

    /// Scale a raw input window into the network's input vector.
    pub fn scale_input(
        &self,
        past_u: &[DVector<f64>],
        past_y: &[DVector<f64>],
        future_u: &[DVector<f64>],
    ) -> Result<DVector<f64>> {
        if past_u.len() != self.n_past || past_y.len() != self.n_past {
            return Err(Error::Dimension {
                context: "nn history window",
                expected: self.n_past,
                got: past_u.len().min(past_y.len()),
            });
        }
        if future_u.len() != self.n_future - 1 {
            return Err(Error::Dimension {
                context: "nn future inputs",
                expected: self.n_future - 1,
                got: future_u.len(),
            });
        }
        let mut v = DVector::zeros(self.in_dim());
        let mut row = 0;
        for k in 0..self.n_past {
            for ch in 0..self.r {
                v[row] = self.u_range[ch].scale(past_u[k][ch]);
                row += 1;
            }
            for ch in 0..self.l {
                v[row] = self.y_range[ch].scale(past_y[k][ch]);
                row += 1;
            }
        }
        for u in future_u {
            for ch in 0..self.r {
                v[row] = self.u_range[ch].scale(u[ch]);
                row += 1;
            }
        }
        Ok(v)
    }

    /// One forward call on a scaled input vector; returns the raw-unit
    /// prediction for all future steps.
    pub fn forward_scaled(&self, input: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        if input.len() != self.in_dim() {
            return Err(Error::Dimension {
                context: "nn input",
                expected: self.in_dim(),
                got: input.len(),
            });
        }
        let x = DMatrix::from_column_slice(input.len(), 1, input.as_slice());
        let (_, act) = forward_pass(&self.layers, &x);
        let out = act.last().unwrap();
        let mut result = Vec::with_capacity(self.n_future);
        for step in 0..self.n_future {
            let mut y = DVector::zeros(self.l);
            for ch in 0..self.l {
                y[ch] = self.y_range[ch].unscale(out[(step * self.l + ch, 0)]);
            }
            result.push(y);
        }
        Ok(result)
    }

    /// Scale a raw window and run one forward call for all future steps.
    pub fn predict(
        &self,
        past_u: &[DVector<f64>],
        past_y: &[DVector<f64>],
        future_u: &[DVector<f64>],
    ) -> Result<Vec<DVector<f64>>> {
        let input = self.scale_input(past_u, past_y, future_u)?;
        self.forward_scaled(&input)
    }
}

/// Serialized predictor (weights row-major).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NnModelFile {
    pub layers: Vec<NnLayerFile>,
    pub n_past: usize,
    pub n_future: usize,
    pub r: usize,
    pub l: usize,
    pub u_range: Vec<ChannelRange>,
    pub y_range: Vec<ChannelRange>,
    pub report: Option<TrainReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NnLayerFile {
    pub w: MatrixRepr,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl NnModelFile {
    pub fn from_model(m: &NNPredictor, report: Option<TrainReport>) -> Self {
        NnModelFile {
            layers: m
                .layers
                .iter()
                .map(|layer| NnLayerFile {
                    w: MatrixRepr::from_matrix(&layer.w),
                    b: layer.b.as_slice().to_vec(),
                    activation: layer.activation,
                })
                .collect(),
            n_past: m.n_past,
            n_future: m.n_future,
            r: m.r,
            l: m.l,
            u_range: m.u_range.clone(),
            y_range: m.y_range.clone(),
            report,
        }
    }

    pub fn to_model(&self) -> Result<NNPredictor> {
        Ok(NNPredictor {
            layers: self
                .layers
                .iter()
                .map(|layer| {
                    Ok(Layer {
                        w: layer.w.to_matrix()?,
                        b: DVector::from_row_slice(&layer.b),
                        activation: layer.activation,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            n_past: self.n_past,
            n_future: self.n_future,
            r: self.r,
            l: self.l,
            u_range: self.u_range.clone(),
            y_range: self.y_range.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::dataset_from_io;

    fn toy_dataset(n: usize, r: usize, l: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = DMatrix::from_fn(r, n, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(l, n, |ch, c| {
            // outputs depend on inputs so channels are never constant
            u[(ch % r, c)] * 0.5 + rng.gen_range(-0.2..0.2) + ch as f64 * 0.1
        });
        dataset_from_io(u, y, 1.0).unwrap()
    }

    #[test]
    fn input_dimension_formula() {
        // a wide MISO window
        assert_eq!(input_dim(30, 15, 7, 1), 30 * 8 + 14 * 7);
        assert_eq!(input_dim(30, 15, 7, 1), 338);
        // a narrow-input wide-output window
        assert_eq!(input_dim(20, 10, 2, 41), 20 * 43 + 9 * 2);
        assert_eq!(input_dim(20, 10, 2, 41), 878);
        assert_eq!(output_dim(10, 41), 410);
    }

    #[test]
    fn boundary_dataset_gives_exactly_one_row() {
        let ds = toy_dataset(7, 2, 1, 1);
        let set = build_training_set(&ds, 4, 3).unwrap();
        assert_eq!(set.inputs.ncols(), 1);
        assert_eq!(set.inputs.nrows(), input_dim(4, 3, 2, 1));
        assert_eq!(set.targets.nrows(), output_dim(3, 1));
    }

    #[test]
    fn constant_channel_is_rejected_by_name() {
        let n = 20;
        let mut u = DMatrix::from_fn(2, n, |_, c| c as f64);
        for c in 0..n {
            u[(1, c)] = 3.25; // constant channel 1
        }
        let y = DMatrix::from_fn(1, n, |_, c| (c as f64).sin());
        let ds = dataset_from_io(u, y, 1.0).unwrap();
        match build_training_set(&ds, 2, 2) {
            Err(Error::ScalingDegenerate { channel: 1, value }) => {
                assert_eq!(value, 3.25);
            }
            other => panic!("expected scaling error, got {other:?}"),
        }
    }

    #[test]
    fn scaling_round_trips() {
        let range = ChannelRange { min: -3.0, max: 7.0 };
        for v in [-3.0, -1.5, 0.0, 3.3, 7.0] {
            assert!((range.unscale(range.scale(v)) - v).abs() < 1e-12);
        }
        assert_eq!(range.scale(-3.0), -1.0);
        assert_eq!(range.scale(7.0), 1.0);
    }

    #[test]
    fn activation_values_at_zero() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Swish.apply(0.0), 0.0);
        assert_eq!(Activation::Linear.apply(0.0), 0.0);
    }

    #[test]
    fn zero_weights_predict_channel_midpoints() {
        let in_dim = input_dim(2, 2, 1, 1); // 5
        let model = NNPredictor {
            layers: vec![Layer {
                w: DMatrix::zeros(2, in_dim),
                b: DVector::zeros(2),
                activation: Activation::Linear,
            }],
            n_past: 2,
            n_future: 2,
            r: 1,
            l: 1,
            u_range: vec![ChannelRange { min: 0.0, max: 4.0 }],
            y_range: vec![ChannelRange { min: -2.0, max: 6.0 }],
        };
        let input = DVector::zeros(model.in_dim());
        let pred = model.forward_scaled(&input).unwrap();
        for y in pred {
            assert_eq!(y[0], 2.0); // midpoint of [-2, 6]
        }
    }

    #[test]
    fn identity_slot_layer_reproduces_input_channel() {
        // single linear layer wired to copy the last history y slot into
        // every prediction slot
        let n_past = 3;
        let n_future = 2;
        let r = 1;
        let l = 1;
        let in_dim = input_dim(n_past, n_future, r, l);
        // y slot of history step k sits at k*(r+l) + r
        let last_y_slot = (n_past - 1) * (r + l) + r;
        let mut w = DMatrix::zeros(n_future * l, in_dim);
        w[(0, last_y_slot)] = 1.0;
        w[(1, last_y_slot)] = 1.0;
        let model = NNPredictor {
            layers: vec![Layer {
                w,
                b: DVector::zeros(2),
                activation: Activation::Linear,
            }],
            n_past,
            n_future,
            r,
            l,
            u_range: vec![ChannelRange { min: -1.0, max: 1.0 }],
            y_range: vec![ChannelRange { min: -1.0, max: 1.0 }],
        };
        let past_u = vec![DVector::from_row_slice(&[0.3]); n_past];
        let past_y = vec![
            DVector::from_row_slice(&[0.1]),
            DVector::from_row_slice(&[0.2]),
            DVector::from_row_slice(&[0.77]),
        ];
        let future_u = vec![DVector::from_row_slice(&[0.0]); n_future - 1];
        let pred = model.predict(&past_u, &past_y, &future_u).unwrap();
        assert!((pred[0][0] - 0.77).abs() < 1e-12);
        assert!((pred[1][0] - 0.77).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_central_differences_on_all_layer_types() {
        let ds = toy_dataset(60, 2, 2, 5);
        let set = build_training_set(&ds, 3, 2).unwrap();
        let dims = [set.inputs.nrows(), 6, 5, set.targets.nrows()];
        let acts = [Activation::Sigmoid, Activation::Swish, Activation::Linear];
        let mut layers = init_layers(&dims, &acts, 42);

        let x = set.inputs.columns(0, 20).into_owned();
        let t = set.targets.columns(0, 20).into_owned();
        let (_, grads) = loss_gradients(&layers, &x, &t);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 20 {
            let li = rng.gen_range(0..layers.len());
            let i = rng.gen_range(0..layers[li].w.nrows());
            let j = rng.gen_range(0..layers[li].w.ncols());
            let h = 1e-6;
            let orig = layers[li].w[(i, j)];
            layers[li].w[(i, j)] = orig + h;
            let lp = mse_loss(&layers, &x, &t);
            layers[li].w[(i, j)] = orig - h;
            let lm = mse_loss(&layers, &x, &t);
            layers[li].w[(i, j)] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads[li].0[(i, j)];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                (fd - an).abs() / denom < 1e-5,
                "layer {li} w({i},{j}): fd {fd} vs analytic {an}"
            );
            checked += 1;
        }
        // a bias entry per layer as well
        for li in 0..layers.len() {
            let i = 0;
            let h = 1e-6;
            let orig = layers[li].b[i];
            layers[li].b[i] = orig + h;
            let lp = mse_loss(&layers, &x, &t);
            layers[li].b[i] = orig - h;
            let lm = mse_loss(&layers, &x, &t);
            layers[li].b[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads[li].1[i];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!((fd - an).abs() / denom < 1e-5);
        }
    }

    #[test]
    fn representable_target_is_learned_quickly() {
        // target equals one input feature: exactly representable
        let ds = toy_dataset(400, 2, 1, 9);
        let mut set = build_training_set(&ds, 2, 1).unwrap();
        // overwrite targets with a copy of input row 0
        let row0: Vec<f64> = (0..set.inputs.ncols())
            .map(|c| set.inputs[(0, c)])
            .collect();
        for (c, v) in row0.iter().enumerate() {
            set.targets[(0, c)] = *v;
        }
        let cfg = TrainConfig {
            hidden: vec![(8, Activation::Swish)],
            learning_rate: 5e-3,
            batch_size: 32,
            epochs: 500,
            seed: 3,
            validation_fraction: 0.25,
            patience: 500,
        };
        let (_, report) = train(&set, &cfg).unwrap();
        assert!(
            report.best_validation_mse <= 1e-3,
            "validation MSE {}",
            report.best_validation_mse
        );
    }

    #[test]
    fn training_is_bit_reproducible() {
        let ds = toy_dataset(150, 2, 1, 13);
        let set = build_training_set(&ds, 2, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let (m1, _) = train(&set, &cfg).unwrap();
        let (m2, _) = train(&set, &cfg).unwrap();
        for (l1, l2) in m1.layers.iter().zip(m2.layers.iter()) {
            for (a, b) in l1.w.iter().zip(l2.w.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in l1.b.iter().zip(l2.b.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn model_file_round_trip_is_exact() {
        let ds = toy_dataset(100, 1, 1, 17);
        let set = build_training_set(&ds, 2, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let (model, report) = train(&set, &cfg).unwrap();
        let file = NnModelFile::from_model(&model, Some(report));
        let json = serde_json::to_string_pretty(&file).unwrap();
        let back: NnModelFile = serde_json::from_str(&json).unwrap();
        let restored = back.to_model().unwrap();
        for (l1, l2) in model.layers.iter().zip(restored.layers.iter()) {
            assert_eq!(l1.w, l2.w);
            assert_eq!(l1.b, l2.b);
            assert_eq!(l1.activation, l2.activation);
        }
    }
}
