//! Exact reverse-mode differentiation through the sigmoid output layer and
//! the GRU stack, unrolled over a whole sequence (no truncation: the
//! sequence length itself is the truncation knob).

use ndarray::{linalg::general_mat_mul, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::{gru_step, GruLayerParams, ModelParams};

/// Gradient (or moment) buffers shaped exactly like [`ModelParams`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<GruLayerParams>,
    pub fc_weight: Array2<f64>,
    pub fc_bias: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| GruLayerParams::zeros(l.input_size(), l.hidden_size()))
                .collect(),
            fc_weight: Array2::zeros(params.fc_weight.dim()),
            fc_bias: Array1::zeros(params.fc_bias.len()),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|&v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// All tensors as flat slices, in the canonical order shared with
    /// [`crate::checkpoint`] and the optimizer: per layer
    /// `W_z W_r W_h U_z U_r U_h b_z b_r b_h`, then the output layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w_z.as_slice().unwrap());
            out.push(l.w_r.as_slice().unwrap());
            out.push(l.w_h.as_slice().unwrap());
            out.push(l.u_z.as_slice().unwrap());
            out.push(l.u_r.as_slice().unwrap());
            out.push(l.u_h.as_slice().unwrap());
            out.push(l.b_z.as_slice().unwrap());
            out.push(l.b_r.as_slice().unwrap());
            out.push(l.b_h.as_slice().unwrap());
        }
        out.push(self.fc_weight.as_slice().unwrap());
        out.push(self.fc_bias.as_slice().unwrap());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.w_z.as_slice_mut().unwrap());
            out.push(l.w_r.as_slice_mut().unwrap());
            out.push(l.w_h.as_slice_mut().unwrap());
            out.push(l.u_z.as_slice_mut().unwrap());
            out.push(l.u_r.as_slice_mut().unwrap());
            out.push(l.u_h.as_slice_mut().unwrap());
            out.push(l.b_z.as_slice_mut().unwrap());
            out.push(l.b_r.as_slice_mut().unwrap());
            out.push(l.b_h.as_slice_mut().unwrap());
        }
        out.push(self.fc_weight.as_slice_mut().unwrap());
        out.push(self.fc_bias.as_slice_mut().unwrap());
        out
    }
}

impl ModelParams {
    /// Parameter tensors in the same canonical order as
    /// [`Gradients::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w_z.as_slice().unwrap());
            out.push(l.w_r.as_slice().unwrap());
            out.push(l.w_h.as_slice().unwrap());
            out.push(l.u_z.as_slice().unwrap());
            out.push(l.u_r.as_slice().unwrap());
            out.push(l.u_h.as_slice().unwrap());
            out.push(l.b_z.as_slice().unwrap());
            out.push(l.b_r.as_slice().unwrap());
            out.push(l.b_h.as_slice().unwrap());
        }
        out.push(self.fc_weight.as_slice().unwrap());
        out.push(self.fc_bias.as_slice().unwrap());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.w_z.as_slice_mut().unwrap());
            out.push(l.w_r.as_slice_mut().unwrap());
            out.push(l.w_h.as_slice_mut().unwrap());
            out.push(l.u_z.as_slice_mut().unwrap());
            out.push(l.u_r.as_slice_mut().unwrap());
            out.push(l.u_h.as_slice_mut().unwrap());
            out.push(l.b_z.as_slice_mut().unwrap());
            out.push(l.b_r.as_slice_mut().unwrap());
            out.push(l.b_h.as_slice_mut().unwrap());
        }
        out.push(self.fc_weight.as_slice_mut().unwrap());
        out.push(self.fc_bias.as_slice_mut().unwrap());
        out
    }
}

/// Everything the backward pass needs from the forward pass of one layer:
/// the hidden trajectory and the gate activations, frames along rows.
struct LayerTrace {
    hs: Array2<f64>,
    zs: Array2<f64>,
    rs: Array2<f64>,
    hts: Array2<f64>,
}

/// Forward activations of one sequence.
pub struct ForwardTrace {
    layers: Vec<LayerTrace>,
    /// Sigmoid outputs, frames x bins.
    pub gains: Array2<f64>,
}

/// Runs a whole feature sequence (frames x input_dim) through the model from
/// a zero initial state, recording every intermediate the backward pass
/// needs.
pub fn forward_sequence(params: &ModelParams, features: &Array2<f64>) -> Result<ForwardTrace> {
    let frames = features.nrows();
    if features.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "features have {} bins, model expects {}",
            features.ncols(),
            params.input_dim()
        )));
    }
    let mut layers: Vec<LayerTrace> = params
        .layers
        .iter()
        .map(|l| LayerTrace {
            hs: Array2::zeros((frames, l.hidden_size())),
            zs: Array2::zeros((frames, l.hidden_size())),
            rs: Array2::zeros((frames, l.hidden_size())),
            hts: Array2::zeros((frames, l.hidden_size())),
        })
        .collect();
    let mut gains = Array2::zeros((frames, params.output_dim()));

    let mut h: Vec<Array1<f64>> =
        params.layers.iter().map(|l| Array1::zeros(l.hidden_size())).collect();
    for t in 0..frames {
        let mut x = features.row(t).to_owned();
        for (li, layer) in params.layers.iter().enumerate() {
            let (h_new, cache) = gru_step(layer, &h[li], &x)?;
            layers[li].hs.row_mut(t).assign(&h_new);
            layers[li].zs.row_mut(t).assign(&cache.z);
            layers[li].rs.row_mut(t).assign(&cache.r);
            layers[li].hts.row_mut(t).assign(&cache.h_tilde);
            h[li] = h_new;
            x = h[li].clone();
        }
        let g = (params.fc_weight.dot(&x) + &params.fc_bias).mapv(crate::model::sigmoid);
        gains.row_mut(t).assign(&g);
    }
    Ok(ForwardTrace { layers, gains })
}

/// Accumulates `dst += da * x^T` (rank-1 update).
fn outer_acc(dst: &mut Array2<f64>, da: &Array1<f64>, x: &Array1<f64>) {
    let col = da.view().insert_axis(Axis(1));
    let row = x.view().insert_axis(Axis(0));
    general_mat_mul(1.0, &col, &row, 1.0, dst);
}

/// Backpropagates `dgain` (gradient of the loss w.r.t. every sigmoid output)
/// through the output layer and the unrolled GRU stack, returning gradients
/// for every parameter. `features` must be the tensor `trace` was computed
/// from.
pub fn backward_sequence(
    params: &ModelParams,
    features: &Array2<f64>,
    trace: &ForwardTrace,
    dgain: &Array2<f64>,
) -> Result<Gradients> {
    let frames = features.nrows();
    if dgain.dim() != trace.gains.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dgain is {:?}, gains are {:?}",
            dgain.dim(),
            trace.gains.dim()
        )));
    }
    let mut grads = Gradients::zeros_like(params);
    let top = params.layers.len() - 1;

    // output layer: gain = sigmoid(fc h + b)
    let mut dh_from_above = Array2::zeros(trace.layers[top].hs.dim());
    for t in 0..frames {
        let g = trace.gains.row(t);
        let da: Array1<f64> =
            dgain.row(t).iter().zip(g).map(|(&dg, &gv)| dg * gv * (1.0 - gv)).collect();
        let h_top = trace.layers[top].hs.row(t).to_owned();
        outer_acc(&mut grads.fc_weight, &da, &h_top);
        grads.fc_bias += &da;
        dh_from_above.row_mut(t).assign(&params.fc_weight.t().dot(&da));
    }

    // GRU layers, top to bottom; within a layer, time runs backwards and
    // dh_carry holds the recurrent gradient flowing into the previous frame
    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let tr = &trace.layers[li];
        let hidden = layer.hidden_size();
        let mut dx_below = Array2::zeros((frames, layer.input_size()));
        let mut dh_carry: Array1<f64> = Array1::zeros(hidden);
        let g = &mut grads.layers[li];

        for t in (0..frames).rev() {
            let dh: Array1<f64> = &dh_from_above.row(t) + &dh_carry;
            let z = tr.zs.row(t);
            let r = tr.rs.row(t);
            let ht = tr.hts.row(t);
            let h_prev: Array1<f64> = if t == 0 {
                Array1::zeros(hidden)
            } else {
                tr.hs.row(t - 1).to_owned()
            };
            let x: Array1<f64> = if li == 0 {
                features.row(t).to_owned()
            } else {
                trace.layers[li - 1].hs.row(t).to_owned()
            };

            // h' = (1-z) h + z h~
            let dz: Array1<f64> =
                dh.iter().zip(ht.iter().zip(&h_prev)).map(|(&d, (&c, &hp))| d * (c - hp)).collect();
            let dht: Array1<f64> = (&dh * &z).to_owned();
            let mut dh_prev: Array1<f64> = dh.iter().zip(&z).map(|(&d, &zv)| d * (1.0 - zv)).collect();

            // candidate: h~ = tanh(W_h x + U_h (r h) + b_h)
            let da_h: Array1<f64> = dht.iter().zip(&ht).map(|(&d, &c)| d * (1.0 - c * c)).collect();
            let drh = layer.u_h.t().dot(&da_h);
            let dr: Array1<f64> = (&drh * &h_prev).to_owned();
            dh_prev += &(&drh * &r);

            // gates
            let da_z: Array1<f64> = dz.iter().zip(&z).map(|(&d, &v)| d * v * (1.0 - v)).collect();
            let da_r: Array1<f64> = dr.iter().zip(&r).map(|(&d, &v)| d * v * (1.0 - v)).collect();
            dh_prev += &layer.u_z.t().dot(&da_z);
            dh_prev += &layer.u_r.t().dot(&da_r);

            let dx = layer.w_z.t().dot(&da_z) + layer.w_r.t().dot(&da_r) + layer.w_h.t().dot(&da_h);
            dx_below.row_mut(t).assign(&dx);

            let rh: Array1<f64> = (&r * &h_prev).to_owned();
            outer_acc(&mut g.w_z, &da_z, &x);
            outer_acc(&mut g.w_r, &da_r, &x);
            outer_acc(&mut g.w_h, &da_h, &x);
            outer_acc(&mut g.u_z, &da_z, &h_prev);
            outer_acc(&mut g.u_r, &da_r, &h_prev);
            outer_acc(&mut g.u_h, &da_h, &rh);
            g.b_z += &da_z;
            g.b_r += &da_r;
            g.b_h += &da_h;

            dh_carry = dh_prev;
        }
        dh_from_above = dx_below;
    }
    Ok(grads)
}
