//! The gain estimator: three stacked GRU layers and a sigmoid output layer,
//! mapping one normalized feature frame to one per-bin gain frame.
//!
//! The cell follows the convention
//!
//! ```text
//! z = sigmoid(W_z x + U_z h + b_z)
//! r = sigmoid(W_r x + U_r h + b_r)
//! h~ = tanh(W_h x + U_h (r * h) + b_h)
//! h' = (1 - z) * h + z * h~
//! ```
//!
//! so the update gate weights the candidate (two sign conventions exist in
//! the wild; every test and the backward pass in [`crate::training`] assume
//! this one). Inference is strictly frame-in/frame-out: the only memory
//! between frames is [`GruState`].

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weights of one GRU layer. `W_*` map the layer input, `U_*` the previous
/// hidden state; rows index hidden units.
#[derive(Clone, Debug)]
pub struct GruLayerParams {
    pub w_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_z: Array1<f64>,
    pub b_r: Array1<f64>,
    pub b_h: Array1<f64>,
}

impl GruLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Array2::zeros((hidden, input)),
            w_r: Array2::zeros((hidden, input)),
            w_h: Array2::zeros((hidden, input)),
            u_z: Array2::zeros((hidden, hidden)),
            u_r: Array2::zeros((hidden, hidden)),
            u_h: Array2::zeros((hidden, hidden)),
            b_z: Array1::zeros(hidden),
            b_r: Array1::zeros(hidden),
            b_h: Array1::zeros(hidden),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_z.nrows()
    }

    pub fn input_size(&self) -> usize {
        self.w_z.ncols()
    }

    fn validate(&self) -> Result<()> {
        let (h, d) = (self.hidden_size(), self.input_size());
        let w_ok = [&self.w_z, &self.w_r, &self.w_h].iter().all(|m| m.dim() == (h, d));
        let u_ok = [&self.u_z, &self.u_r, &self.u_h].iter().all(|m| m.dim() == (h, h));
        let b_ok = [&self.b_z, &self.b_r, &self.b_h].iter().all(|v| v.len() == h);
        if !(w_ok && u_ok && b_ok) {
            return Err(Error::DimensionMismatch("inconsistent GRU layer shapes".into()));
        }
        let finite = [&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && [&self.b_z, &self.b_r, &self.b_h].iter().all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::Numeric("non-finite GRU parameter".into()));
        }
        Ok(())
    }
}

/// Intermediate gate values of one [`gru_step`], kept around for backprop.
#[derive(Clone, Debug)]
pub struct GruStepCache {
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    pub h_tilde: Array1<f64>,
}

/// One GRU time step; returns the new hidden state and the gate activations.
pub fn gru_step(
    layer: &GruLayerParams,
    h_prev: &Array1<f64>,
    x: &Array1<f64>,
) -> Result<(Array1<f64>, GruStepCache)> {
    if h_prev.len() != layer.hidden_size() {
        return Err(Error::DimensionMismatch(format!(
            "hidden state has {} units, layer expects {}",
            h_prev.len(),
            layer.hidden_size()
        )));
    }
    if x.len() != layer.input_size() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} values, layer expects {}",
            x.len(),
            layer.input_size()
        )));
    }
    let z = (layer.w_z.dot(x) + layer.u_z.dot(h_prev) + &layer.b_z).mapv(sigmoid);
    let r = (layer.w_r.dot(x) + layer.u_r.dot(h_prev) + &layer.b_r).mapv(sigmoid);
    let rh = &r * h_prev;
    let h_tilde = (layer.w_h.dot(x) + layer.u_h.dot(&rh) + &layer.b_h).mapv(f64::tanh);
    let h_new = (1.0 - &z) * h_prev + &z * &h_tilde;
    Ok((h_new, GruStepCache { z, r, h_tilde }))
}

pub const MODEL_VERSION: u32 = 1;

/// All trainable parameters: the GRU stack plus the fully-connected sigmoid
/// output layer. Immutable during inference and shareable across streams.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub layers: Vec<GruLayerParams>,
    pub fc_weight: Array2<f64>,
    pub fc_bias: Array1<f64>,
    pub version: u32,
}

impl ModelParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_dim(&self) -> usize {
        self.fc_bias.len()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden_size()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::DimensionMismatch("model needs at least one GRU layer".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if i > 0 && layer.input_size() != self.layers[i - 1].hidden_size() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} input {} does not chain from layer {} hidden {}",
                    layer.input_size(),
                    i - 1,
                    self.layers[i - 1].hidden_size()
                )));
            }
        }
        let last_hidden = self.layers.last().unwrap().hidden_size();
        if self.fc_weight.dim() != (self.fc_bias.len(), last_hidden) {
            return Err(Error::DimensionMismatch(format!(
                "output layer is {:?}, expected ({}, {last_hidden})",
                self.fc_weight.dim(),
                self.fc_bias.len()
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let gru: usize = self
            .layers
            .iter()
            .map(|l| {
                3 * (l.w_z.len() + l.u_z.len() + l.b_z.len())
            })
            .sum();
        gru + self.fc_weight.len() + self.fc_bias.len()
    }
}

/// Per-stream recurrent memory: one hidden vector per layer.
#[derive(Clone, Debug)]
pub struct GruState {
    pub h: Vec<Array1<f64>>,
}

impl GruState {
    pub fn new(params: &ModelParams) -> Self {
        Self { h: params.layers.iter().map(|l| Array1::zeros(l.hidden_size())).collect() }
    }

    pub fn reset(&mut self) {
        for h in &mut self.h {
            h.fill(0.0);
        }
    }
}

/// Runs one feature frame through the GRU stack and the sigmoid output
/// layer. Strictly causal: the result depends only on `features` and `state`.
pub fn forward_frame(
    params: &ModelParams,
    state: &mut GruState,
    features: &[f64],
) -> Result<Vec<f64>> {
    if features.len() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature frame has {} bins, model expects {}",
            features.len(),
            params.input_dim()
        )));
    }
    if state.h.len() != params.layers.len() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} layers, model has {}",
            state.h.len(),
            params.layers.len()
        )));
    }
    let mut x = Array1::from_iter(features.iter().copied());
    for (layer, h) in params.layers.iter().zip(&mut state.h) {
        let (h_new, _) = gru_step(layer, h, &x)?;
        *h = h_new;
        x = h.clone();
    }
    let gain = (params.fc_weight.dot(&x) + &params.fc_bias).mapv(sigmoid);
    Ok(gain.to_vec())
}

/// Glorot-style uniform initialization: weights drawn from
/// `U(-sqrt(6/(fan_in+fan_out)), +...)`, biases zero, reproducible from the
/// seed. Layer widths are `input_dim -> hidden -> hidden -> hidden`, output
/// back to `input_dim` bins.
pub fn init_params(seed: u64, hidden: usize, input_dim: usize) -> Result<ModelParams> {
    if hidden == 0 || input_dim == 0 {
        return Err(Error::InvalidConfig("hidden and input dims must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut glorot = |rows: usize, cols: usize| -> Array2<f64> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
    };
    let mut layer = |input: usize| GruLayerParams {
        w_z: glorot(hidden, input),
        w_r: glorot(hidden, input),
        w_h: glorot(hidden, input),
        u_z: glorot(hidden, hidden),
        u_r: glorot(hidden, hidden),
        u_h: glorot(hidden, hidden),
        b_z: Array1::zeros(hidden),
        b_r: Array1::zeros(hidden),
        b_h: Array1::zeros(hidden),
    };
    let layers = vec![layer(input_dim), layer(hidden), layer(hidden)];
    let fc_weight = glorot(input_dim, hidden);
    let params = ModelParams { layers, fc_weight, fc_bias: Array1::zeros(input_dim), version: MODEL_VERSION };
    params.validate()?;
    Ok(params)
}
