//! Parameterized layers with forward and backward kernels.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::lstm::{Lstm, LstmTrace};
use super::spec::Activation;
use crate::features::PAD_INDEX;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// `vocab × dim`; row [`PAD_INDEX`] stays zero.
    Embedding { table: Tensor },
    /// `weights` is `in × out`, `bias` is `1 × out`.
    Dense {
        weights: Tensor,
        bias: Tensor,
        activation: Activation,
    },
    /// Weight row `j·D + d` holds kernel tap `j` of input channel `d`;
    /// columns are filters. Inputs are zero-padded to keep the length.
    Conv1D {
        weights: Tensor,
        bias: Tensor,
        width: usize,
        activation: Activation,
    },
    MaxPool1D { size: usize },
    Recurrent { cell: Lstm, return_sequences: bool },
    BiRecurrent {
        forward: Lstm,
        backward: Lstm,
        return_sequences: bool,
    },
    Dropout { rate: f64 },
    GaussianNoise { std: f64 },
    Flatten,
    Softmax,
}

/// Layer-specific values recorded by a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Aux {
    None,
    /// Flat input index selected for each pooled output element.
    Argmax(Vec<usize>),
    /// Dropout multipliers (0 or `1/(1−rate)`).
    Mask(Vec<f64>),
    Recurrent(LstmTrace),
    BiRecurrent(LstmTrace, LstmTrace),
}

/// Activations of one layer: its input `z_i`, the weighted sums `z_j` for
/// layers that have them, and the output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub input: Tensor,
    pub pre: Option<Tensor>,
    pub output: Tensor,
    pub aux: Aux,
}

/// First padded-input offset of a same-padded convolution.
pub fn conv_left_pad(width: usize) -> usize {
    (width - 1) / 2
}

/// Input position read by kernel tap `j` at output position `t`.
pub fn conv_source(t: usize, j: usize, width: usize, len: usize) -> Option<usize> {
    let s = (t + j).checked_sub(conv_left_pad(width))?;
    (s < len).then_some(s)
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn affine(x: &[f64], weights: &Tensor, bias: &Tensor) -> Vec<f64> {
    let mut z = bias.as_slice().to_vec();
    for (i, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            for (zj, wj) in z.iter_mut().zip(weights.row(i)) {
                *zj += xv * wj;
            }
        }
    }
    z
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Embedding { .. } => "Embedding",
            Layer::Dense { .. } => "Dense",
            Layer::Conv1D { .. } => "Conv1D",
            Layer::MaxPool1D { .. } => "MaxPool1D",
            Layer::Recurrent { .. } => "Recurrent",
            Layer::BiRecurrent { .. } => "BiRecurrent",
            Layer::Dropout { .. } => "Dropout",
            Layer::GaussianNoise { .. } => "GaussianNoise",
            Layer::Flatten => "Flatten",
            Layer::Softmax => "Softmax",
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Embedding { table } => vec![table],
            Layer::Dense { weights, bias, .. } | Layer::Conv1D { weights, bias, .. } => {
                vec![weights, bias]
            }
            Layer::Recurrent { cell, .. } => vec![&cell.w, &cell.u, &cell.b],
            Layer::BiRecurrent {
                forward, backward, ..
            } => vec![
                &forward.w,
                &forward.u,
                &forward.b,
                &backward.w,
                &backward.u,
                &backward.b,
            ],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Embedding { table } => vec![table],
            Layer::Dense { weights, bias, .. } | Layer::Conv1D { weights, bias, .. } => {
                vec![weights, bias]
            }
            Layer::Recurrent { cell, .. } => vec![&mut cell.w, &mut cell.u, &mut cell.b],
            Layer::BiRecurrent {
                forward, backward, ..
            } => vec![
                &mut forward.w,
                &mut forward.u,
                &mut forward.b,
                &mut backward.w,
                &mut backward.u,
                &mut backward.b,
            ],
            _ => Vec::new(),
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Layer::Embedding { .. } => &["table"],
            Layer::Dense { .. } | Layer::Conv1D { .. } => &["weights", "bias"],
            Layer::Recurrent { .. } => &["w", "u", "b"],
            Layer::BiRecurrent { .. } => &[
                "forward.w",
                "forward.u",
                "forward.b",
                "backward.w",
                "backward.u",
                "backward.b",
            ],
            _ => &[],
        }
    }

    /// Weight matrices (biases and embeddings excluded).
    pub fn weight_matrices(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { weights, .. } | Layer::Conv1D { weights, .. } => vec![weights],
            Layer::Recurrent { cell, .. } => vec![&cell.w, &cell.u],
            Layer::BiRecurrent {
                forward, backward, ..
            } => vec![&forward.w, &forward.u, &backward.w, &backward.u],
            _ => Vec::new(),
        }
    }

    /// Runs the layer. `rng` is `Some` only in training mode, where it drives
    /// dropout masks and Gaussian noise.
    pub fn forward(&self, input: &Tensor, rng: Option<&mut Rng>) -> LayerTrace {
        let plain = |output: Tensor| LayerTrace {
            input: input.clone(),
            pre: None,
            output,
            aux: Aux::None,
        };
        match self {
            Layer::Embedding { table } => {
                let dim = table.cols();
                let mut out = Tensor::zeros(input.cols(), dim);
                for (t, &id) in input.as_slice().iter().enumerate() {
                    out.row_mut(t).copy_from_slice(table.row(id as usize));
                }
                plain(out)
            }
            Layer::Dense {
                weights,
                bias,
                activation,
            } => {
                let z = affine(input.as_slice(), weights, bias);
                let y: Vec<f64> = z.iter().map(|&v| activation.apply(v)).collect();
                LayerTrace {
                    input: input.clone(),
                    pre: Some(Tensor::vector(z)),
                    output: Tensor::vector(y),
                    aux: Aux::None,
                }
            }
            Layer::Conv1D {
                weights,
                bias,
                width,
                activation,
            } => {
                let (len, dim) = input.shape();
                let filters = bias.cols();
                let mut pre = Tensor::zeros(len, filters);
                for t in 0..len {
                    let row = pre.row_mut(t);
                    row.copy_from_slice(bias.as_slice());
                    for j in 0..*width {
                        let Some(s) = conv_source(t, j, *width, len) else {
                            continue;
                        };
                        for (d, &xv) in input.row(s).iter().enumerate() {
                            if xv != 0.0 {
                                for (zf, wf) in row.iter_mut().zip(weights.row(j * dim + d)) {
                                    *zf += xv * wf;
                                }
                            }
                        }
                    }
                }
                let out: Vec<f64> = pre.as_slice().iter().map(|&v| activation.apply(v)).collect();
                LayerTrace {
                    input: input.clone(),
                    output: Tensor::from_vec(len, filters, out),
                    pre: Some(pre),
                    aux: Aux::None,
                }
            }
            Layer::MaxPool1D { size } => {
                let (len, dim) = input.shape();
                let out_len = len / size;
                let mut out = Tensor::zeros(out_len, dim);
                let mut argmax = Vec::with_capacity(out_len * dim);
                for t in 0..out_len {
                    for d in 0..dim {
                        let mut best = t * size;
                        for s in t * size + 1..(t + 1) * size {
                            if input.get(s, d) > input.get(best, d) {
                                best = s;
                            }
                        }
                        out.set(t, d, input.get(best, d));
                        argmax.push(best * dim + d);
                    }
                }
                LayerTrace {
                    input: input.clone(),
                    pre: None,
                    output: out,
                    aux: Aux::Argmax(argmax),
                }
            }
            Layer::Recurrent {
                cell,
                return_sequences,
            } => {
                let tr = cell.run(input, false);
                let output = if *return_sequences {
                    tr.h.clone()
                } else {
                    Tensor::vector(tr.h.row(tr.last()).to_vec())
                };
                LayerTrace {
                    input: input.clone(),
                    pre: Some(tr.z.clone()),
                    output,
                    aux: Aux::Recurrent(tr),
                }
            }
            Layer::BiRecurrent {
                forward,
                backward,
                return_sequences,
            } => {
                let tf = forward.run(input, false);
                let tb = backward.run(input, true);
                let h = forward.units();
                let output = if *return_sequences {
                    let mut out = Tensor::zeros(input.rows(), 2 * h);
                    for t in 0..input.rows() {
                        out.row_mut(t)[..h].copy_from_slice(tf.h.row(t));
                        out.row_mut(t)[h..].copy_from_slice(tb.h.row(t));
                    }
                    out
                } else {
                    let mut v = tf.h.row(tf.last()).to_vec();
                    v.extend_from_slice(tb.h.row(tb.last()));
                    Tensor::vector(v)
                };
                LayerTrace {
                    input: input.clone(),
                    pre: None,
                    output,
                    aux: Aux::BiRecurrent(tf, tb),
                }
            }
            Layer::Dropout { rate } => match rng {
                Some(rng) if *rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..input.len())
                        .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
                        .collect();
                    let data = input.as_slice().iter().zip(&mask).map(|(x, m)| x * m).collect();
                    LayerTrace {
                        input: input.clone(),
                        pre: None,
                        output: Tensor::from_vec(input.rows(), input.cols(), data),
                        aux: Aux::Mask(mask),
                    }
                }
                _ => plain(input.clone()),
            },
            Layer::GaussianNoise { std } => match rng {
                Some(rng) if *std > 0.0 => {
                    let data = input
                        .as_slice()
                        .iter()
                        .map(|x| x + std * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    plain(Tensor::from_vec(input.rows(), input.cols(), data))
                }
                _ => plain(input.clone()),
            },
            Layer::Flatten => plain(input.clone().reshaped(1, input.len())),
            Layer::Softmax => LayerTrace {
                input: input.clone(),
                pre: Some(input.clone()),
                output: Tensor::vector(softmax(input.as_slice())),
                aux: Aux::None,
            },
        }
    }

    /// Gradient w.r.t. the layer input given the gradient w.r.t. its output.
    /// Parameter gradients are added into `grads` (ordered as [`Layer::params`]).
    /// The embedding and softmax layers are handled by the graph.
    pub fn backward(&self, trace: &LayerTrace, grad_out: &Tensor, grads: Option<&mut [Tensor]>) -> Tensor {
        let input = &trace.input;
        match self {
            Layer::Dense {
                weights,
                activation,
                ..
            } => {
                let pre = trace.pre.as_ref().expect("dense trace has sums");
                let dz: Vec<f64> = pre
                    .as_slice()
                    .iter()
                    .zip(trace.output.as_slice())
                    .zip(grad_out.as_slice())
                    .map(|((&z, &y), &g)| g * activation.derivative(z, y))
                    .collect();
                if let Some(gs) = grads {
                    let (gw, gb) = gs.split_at_mut(1);
                    for (i, &xv) in input.as_slice().iter().enumerate() {
                        if xv != 0.0 {
                            for (g, d) in gw[0].row_mut(i).iter_mut().zip(&dz) {
                                *g += xv * d;
                            }
                        }
                    }
                    for (g, d) in gb[0].as_mut_slice().iter_mut().zip(&dz) {
                        *g += d;
                    }
                }
                let dx = (0..weights.rows())
                    .map(|i| weights.row(i).iter().zip(&dz).map(|(w, d)| w * d).sum())
                    .collect();
                Tensor::from_vec(input.rows(), input.cols(), dx)
            }
            Layer::Conv1D {
                weights,
                width,
                activation,
                ..
            } => {
                let pre = trace.pre.as_ref().expect("conv trace has sums");
                let (len, dim) = input.shape();
                let filters = pre.cols();
                let dz: Vec<f64> = pre
                    .as_slice()
                    .iter()
                    .zip(trace.output.as_slice())
                    .zip(grad_out.as_slice())
                    .map(|((&z, &y), &g)| g * activation.derivative(z, y))
                    .collect();
                let mut dx = Tensor::zeros(len, dim);
                let mut grads = grads;
                for t in 0..len {
                    let dzt = &dz[t * filters..(t + 1) * filters];
                    if let Some(gs) = grads.as_deref_mut() {
                        for (g, d) in gs[1].as_mut_slice().iter_mut().zip(dzt) {
                            *g += d;
                        }
                    }
                    for j in 0..*width {
                        let Some(s) = conv_source(t, j, *width, len) else {
                            continue;
                        };
                        for d in 0..dim {
                            let wrow = weights.row(j * dim + d);
                            let v: f64 = wrow.iter().zip(dzt).map(|(w, z)| w * z).sum();
                            dx.row_mut(s)[d] += v;
                            if let Some(gs) = grads.as_deref_mut() {
                                let xv = input.get(s, d);
                                if xv != 0.0 {
                                    for (g, z) in gs[0].row_mut(j * dim + d).iter_mut().zip(dzt) {
                                        *g += xv * z;
                                    }
                                }
                            }
                        }
                    }
                }
                dx
            }
            Layer::MaxPool1D { .. } => {
                let Aux::Argmax(argmax) = &trace.aux else {
                    unreachable!("pool trace records argmax")
                };
                let mut dx = Tensor::zeros(input.rows(), input.cols());
                for (&src, &g) in argmax.iter().zip(grad_out.as_slice()) {
                    dx.as_mut_slice()[src] += g;
                }
                dx
            }
            Layer::Recurrent {
                cell,
                return_sequences,
            } => {
                let Aux::Recurrent(tr) = &trace.aux else {
                    unreachable!("recurrent trace")
                };
                let dh = spread_hidden(grad_out, tr, 0, cell.units(), *return_sequences);
                cell.backward(input, tr, &dh, grads)
            }
            Layer::BiRecurrent {
                forward,
                backward,
                return_sequences,
            } => {
                let Aux::BiRecurrent(tf, tb) = &trace.aux else {
                    unreachable!("bidirectional trace")
                };
                let h = forward.units();
                let dhf = spread_hidden(grad_out, tf, 0, h, *return_sequences);
                let dhb = spread_hidden(grad_out, tb, h, h, *return_sequences);
                let (gf, gb) = match grads {
                    Some(gs) => {
                        let (a, b) = gs.split_at_mut(3);
                        (Some(a), Some(b))
                    }
                    None => (None, None),
                };
                let mut dx = forward.backward(input, tf, &dhf, gf);
                dx.add_assign(&backward.backward(input, tb, &dhb, gb));
                dx
            }
            Layer::Dropout { .. } => match &trace.aux {
                Aux::Mask(mask) => {
                    let data = grad_out.as_slice().iter().zip(mask).map(|(g, m)| g * m).collect();
                    Tensor::from_vec(input.rows(), input.cols(), data)
                }
                _ => grad_out.clone(),
            },
            Layer::GaussianNoise { .. } | Layer::Flatten => grad_out.clone().reshaped(input.rows(), input.cols()),
            Layer::Embedding { .. } | Layer::Softmax => {
                unreachable!("embedding and softmax are differentiated by the graph")
            }
        }
    }
}

/// Gradient w.r.t. every position's hidden state of one direction, taken
/// from columns `offset..offset + units` of the layer-output gradient.
fn spread_hidden(grad_out: &Tensor, tr: &LstmTrace, offset: usize, units: usize, sequences: bool) -> Tensor {
    let len = tr.h.rows();
    let mut dh = Tensor::zeros(len, units);
    if sequences {
        for t in 0..len {
            dh.row_mut(t).copy_from_slice(&grad_out.row(t)[offset..offset + units]);
        }
    } else {
        dh.row_mut(tr.last())
            .copy_from_slice(&grad_out.as_slice()[offset..offset + units]);
    }
    dh
}

/// Adds an embedding-output gradient into the table gradient. The pad row
/// receives nothing.
pub fn embedding_backward(ids: &Tensor, grad_out: &Tensor, grad_table: &mut Tensor) {
    for (t, &id) in ids.as_slice().iter().enumerate() {
        let id = id as usize;
        if id == PAD_INDEX {
            continue;
        }
        for (g, d) in grad_table.row_mut(id).iter_mut().zip(grad_out.row(t)) {
            *g += d;
        }
    }
}
