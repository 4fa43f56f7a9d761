//! Batched forward and backward propagation over a [`ModelParams`] layout.
//!
//! Activations are stored row-major as `[batch, len, channels]`, so a 1-D
//! convolution becomes an im2col gather followed by one gemm, and flatten is
//! free.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::model::{LayerDesc, LayerKind, ModelParams};
use crate::linalg::{matmul_ab, matmul_abt, matmul_atb};
use crate::{Error, Result};

/// Dropout is active only in `Train`.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

enum Saved {
    None,
    Cols(Vec<f64>),
    Argmax(Vec<u32>),
    Mask(Vec<f64>),
}

/// Output of a forward pass plus the activations backpropagation needs.
pub struct ForwardResult {
    pub batch: usize,
    /// `batch × d` outputs of φ.
    pub embeddings: Vec<f64>,
    /// `batch × K` outputs of c∘φ; empty when only φ was evaluated.
    pub log_probs: Vec<f64>,
    inputs: Vec<Vec<f64>>,
    saved: Vec<Saved>,
}

impl ForwardResult {
    pub fn embedding(&self, row: usize) -> &[f64] {
        let d = self.embeddings.len() / self.batch.max(1);
        &self.embeddings[row * d..(row + 1) * d]
    }

    pub fn log_prob_row(&self, row: usize) -> &[f64] {
        let k = self.log_probs.len() / self.batch.max(1);
        &self.log_probs[row * k..(row + 1) * k]
    }

    /// Dropout masks, one per dropout layer, as the applied scale factors.
    pub fn dropout_masks(&self) -> impl Iterator<Item = &[f64]> {
        self.saved.iter().filter_map(|s| match s {
            Saved::Mask(m) => Some(m.as_slice()),
            _ => None,
        })
    }
}

/// Runs c∘φ on a row-major `batch × input_dim` feature matrix.
pub fn forward(model: &ModelParams, features: &[f64], mode: Mode<'_>) -> Result<ForwardResult> {
    run_forward(model, features, mode, true)
}

/// Runs only φ.
pub fn forward_embedding(model: &ModelParams, features: &[f64], mode: Mode<'_>) -> Result<ForwardResult> {
    run_forward(model, features, mode, false)
}

fn run_forward(model: &ModelParams, features: &[f64], mut mode: Mode<'_>, with_head: bool) -> Result<ForwardResult> {
    let width = model.input_dim;
    if features.is_empty() || features.len() % width != 0 {
        return Err(Error::dims("feature matrix width", width, features.len() % width.max(1)));
    }
    let batch = features.len() / width;
    let layers = if with_head { &model.layout[..] } else { model.embedding_layout() };

    let mut inputs = Vec::with_capacity(layers.len());
    let mut saved = Vec::with_capacity(layers.len());
    let mut x = features.to_vec();
    let mut embeddings = Vec::new();
    for (index, layer) in layers.iter().enumerate() {
        let params = &model.weights[layer.param_offset..layer.param_offset + layer.param_len];
        let (out, keep) = layer_forward(layer, params, &x, batch, &mut mode);
        inputs.push(core::mem::replace(&mut x, out));
        saved.push(keep);
        if index + 1 == model.embedding_layers {
            embeddings = x.clone();
        }
    }
    let log_probs = if with_head { x } else { Vec::new() };
    Ok(ForwardResult {
        batch,
        embeddings,
        log_probs,
        inputs,
        saved,
    })
}

fn layer_forward(layer: &LayerDesc, params: &[f64], x: &[f64], batch: usize, mode: &mut Mode<'_>) -> (Vec<f64>, Saved) {
    match layer.kind {
        LayerKind::Conv1d { kernel } => {
            let len = layer.input.len;
            let cin = layer.input.channels;
            let cout = layer.output.channels;
            let row = kernel * cin;
            let cols = im2col(x, batch, len, cin, kernel);
            let (w, b) = params.split_at(layer.weight_len());
            let mut out = bias_rows(b, batch * len);
            matmul_abt(batch * len, row, cout, &cols, w, 1.0, &mut out);
            (out, Saved::Cols(cols))
        }
        LayerKind::Dense => {
            let fan_in = layer.input.width();
            let units = layer.output.width();
            let (w, b) = params.split_at(layer.weight_len());
            let mut out = bias_rows(b, batch);
            matmul_abt(batch, fan_in, units, x, w, 1.0, &mut out);
            (out, Saved::None)
        }
        LayerKind::Relu => (x.iter().map(|v| v.max(0.0)).collect(), Saved::None),
        LayerKind::MaxPool => {
            let (len_in, ch) = (layer.input.len, layer.input.channels);
            let len_out = layer.output.len;
            let mut out = vec![0.0; batch * len_out * ch];
            let mut arg = vec![0u32; out.len()];
            for b in 0..batch {
                for t in 0..len_out {
                    let base_out = (b * len_out + t) * ch;
                    let first = (b * len_in + 2 * t) * ch;
                    let second = first + ch;
                    for c in 0..ch {
                        let (i, j) = (first + c, second + c);
                        // ties go to the first element of the window
                        let pick = if x[j] > x[i] { j } else { i };
                        out[base_out + c] = x[pick];
                        arg[base_out + c] = pick as u32;
                    }
                }
            }
            (out, Saved::Argmax(arg))
        }
        LayerKind::Dropout { rate } => match mode {
            Mode::Train(rng) if rate > 0.0 => {
                let scale = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
                    .collect();
                let out = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
                (out, Saved::Mask(mask))
            }
            _ => (x.to_vec(), Saved::None),
        },
        LayerKind::Flatten => (x.to_vec(), Saved::None),
        LayerKind::LogSoftmax => {
            let k = layer.input.width();
            let mut out = x.to_vec();
            for row in out.chunks_mut(k) {
                log_softmax_in_place(row);
            }
            (out, Saved::None)
        }
    }
}

fn bias_rows(bias: &[f64], rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(bias.len() * rows);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    out
}

/// Numerically stable in-place log-softmax.
pub fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| libm::exp(v - max)).sum();
    let lse = max + libm::log(sum);
    for v in row.iter_mut() {
        *v -= lse;
    }
}

fn im2col(x: &[f64], batch: usize, len: usize, cin: usize, kernel: usize) -> Vec<f64> {
    let pad = kernel / 2;
    let row = kernel * cin;
    let mut cols = vec![0.0; batch * len * row];
    for b in 0..batch {
        for t in 0..len {
            let dst = &mut cols[(b * len + t) * row..(b * len + t + 1) * row];
            for k in 0..kernel {
                let src_t = t + k;
                if src_t < pad || src_t - pad >= len {
                    continue;
                }
                let src = (b * len + src_t - pad) * cin;
                dst[k * cin..(k + 1) * cin].copy_from_slice(&x[src..src + cin]);
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], batch: usize, len: usize, cin: usize, kernel: usize) -> Vec<f64> {
    let pad = kernel / 2;
    let row = kernel * cin;
    let mut x = vec![0.0; batch * len * cin];
    for b in 0..batch {
        for t in 0..len {
            let src = &cols[(b * len + t) * row..(b * len + t + 1) * row];
            for k in 0..kernel {
                let dst_t = t + k;
                if dst_t < pad || dst_t - pad >= len {
                    continue;
                }
                let dst = (b * len + dst_t - pad) * cin;
                for (d, s) in x[dst..dst + cin].iter_mut().zip(&src[k * cin..(k + 1) * cin]) {
                    *d += s;
                }
            }
        }
    }
    x
}

/// Backpropagates from the given output gradients.
///
/// `grad_log_probs` (batch × K) requires a forward pass that included the
/// head; `grad_embeddings` (batch × d) is injected at the output of φ.
/// Parameter gradients are accumulated into `param_grad` (length m) when
/// given. Returns the gradient with respect to the input features if
/// `want_input_grad` is set.
pub fn backward(
    model: &ModelParams,
    fwd: &ForwardResult,
    grad_log_probs: Option<&[f64]>,
    grad_embeddings: Option<&[f64]>,
    mut param_grad: Option<&mut [f64]>,
    want_input_grad: bool,
) -> Result<Option<Vec<f64>>> {
    let batch = fwd.batch;
    let depth = fwd.inputs.len();
    let with_head = depth == model.layout.len();
    if let Some(pg) = param_grad.as_deref() {
        if pg.len() != model.len() {
            return Err(Error::dims("parameter gradient", model.len(), pg.len()));
        }
    }

    let d = model.embedding_dim();
    let mut grad = match (grad_log_probs, with_head) {
        (Some(g), true) => {
            if g.len() != batch * model.num_classes {
                return Err(Error::dims("log-prob gradient", batch * model.num_classes, g.len()));
            }
            g.to_vec()
        }
        (Some(_), false) => return Err(Error::invalid("grad_log_probs", "forward pass did not evaluate the head")),
        (None, true) => vec![0.0; batch * model.num_classes],
        (None, false) => vec![0.0; batch * d],
    };
    if grad_log_probs.is_none() && with_head {
        // nothing flows through the head; start directly at φ's output
        return backward_from_embedding(model, fwd, grad_embeddings, param_grad, want_input_grad, vec![0.0; batch * d]);
    }

    for index in (model.embedding_layers..depth).rev() {
        let layer = &model.layout[index];
        let params = &model.weights[layer.param_offset..layer.param_offset + layer.param_len];
        let pg = param_grad.as_deref_mut().map(|g| &mut g[layer.param_offset..layer.param_offset + layer.param_len]);
        let out = if index + 1 == depth { Some(fwd.log_probs.as_slice()) } else { None };
        grad = layer_backward(layer, params, &fwd.inputs[index], out, &fwd.saved[index], &grad, batch, pg, true);
    }
    if !with_head {
        grad.iter_mut().for_each(|g| *g = 0.0);
    }
    backward_from_embedding(model, fwd, grad_embeddings, param_grad, want_input_grad, grad)
}

fn backward_from_embedding(
    model: &ModelParams,
    fwd: &ForwardResult,
    grad_embeddings: Option<&[f64]>,
    mut param_grad: Option<&mut [f64]>,
    want_input_grad: bool,
    mut grad: Vec<f64>,
) -> Result<Option<Vec<f64>>> {
    let batch = fwd.batch;
    if let Some(ge) = grad_embeddings {
        if ge.len() != grad.len() {
            return Err(Error::dims("embedding gradient", grad.len(), ge.len()));
        }
        for (g, e) in grad.iter_mut().zip(ge) {
            *g += e;
        }
    }
    for index in (0..model.embedding_layers).rev() {
        let layer = &model.layout[index];
        let params = &model.weights[layer.param_offset..layer.param_offset + layer.param_len];
        let pg = param_grad.as_deref_mut().map(|g| &mut g[layer.param_offset..layer.param_offset + layer.param_len]);
        let need_input = index > 0 || want_input_grad;
        grad = layer_backward(layer, params, &fwd.inputs[index], None, &fwd.saved[index], &grad, batch, pg, need_input);
    }
    Ok(want_input_grad.then_some(grad))
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    layer: &LayerDesc,
    params: &[f64],
    input: &[f64],
    output: Option<&[f64]>,
    saved: &Saved,
    grad_out: &[f64],
    batch: usize,
    param_grad: Option<&mut [f64]>,
    need_input: bool,
) -> Vec<f64> {
    match layer.kind {
        LayerKind::Conv1d { kernel } => {
            let len = layer.input.len;
            let cin = layer.input.channels;
            let cout = layer.output.channels;
            let row = kernel * cin;
            let Saved::Cols(cols) = saved else { unreachable!("conv layer saves its columns") };
            let wl = layer.weight_len();
            if let Some(pg) = param_grad {
                let (gw, gb) = pg.split_at_mut(wl);
                matmul_atb(cout, batch * len, row, grad_out, cols, 1.0, gw);
                accumulate_bias(gb, grad_out);
            }
            if !need_input {
                return Vec::new();
            }
            let mut dcols = vec![0.0; batch * len * row];
            matmul_ab(batch * len, cout, row, grad_out, &params[..wl], 0.0, &mut dcols);
            col2im(&dcols, batch, len, cin, kernel)
        }
        LayerKind::Dense => {
            let fan_in = layer.input.width();
            let units = layer.output.width();
            let wl = layer.weight_len();
            if let Some(pg) = param_grad {
                let (gw, gb) = pg.split_at_mut(wl);
                matmul_atb(units, batch, fan_in, grad_out, input, 1.0, gw);
                accumulate_bias(gb, grad_out);
            }
            if !need_input {
                return Vec::new();
            }
            let mut dx = vec![0.0; batch * fan_in];
            matmul_ab(batch, units, fan_in, grad_out, &params[..wl], 0.0, &mut dx);
            dx
        }
        LayerKind::Relu => grad_out.iter().zip(input).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect(),
        LayerKind::MaxPool => {
            let Saved::Argmax(arg) = saved else { unreachable!("pool layer saves its argmax") };
            let mut dx = vec![0.0; input.len()];
            for (g, &i) in grad_out.iter().zip(arg) {
                dx[i as usize] += g;
            }
            dx
        }
        LayerKind::Dropout { .. } => match saved {
            Saved::Mask(mask) => grad_out.iter().zip(mask).map(|(g, m)| g * m).collect(),
            _ => grad_out.to_vec(),
        },
        LayerKind::Flatten => grad_out.to_vec(),
        LayerKind::LogSoftmax => {
            let k = layer.input.width();
            let out = output.expect("log-softmax is the last layer");
            let mut dz = vec![0.0; grad_out.len()];
            for ((dzr, gr), or) in dz.chunks_mut(k).zip(grad_out.chunks(k)).zip(out.chunks(k)) {
                let total: f64 = gr.iter().sum();
                for ((d, g), o) in dzr.iter_mut().zip(gr).zip(or) {
                    *d = g - libm::exp(*o) * total;
                }
            }
            dz
        }
    }
}

fn accumulate_bias(gb: &mut [f64], grad_out: &[f64]) {
    for row in grad_out.chunks(gb.len()) {
        for (b, g) in gb.iter_mut().zip(row) {
            *b += g;
        }
    }
}
