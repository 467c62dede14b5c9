//! Layer-wise relevance propagation with the epsilon rule.
//!
//! A neuron `j` with weighted sum `z_j = Σ_i z_i w_ij + b_j` and relevance
//! `R_j` hands its lower neuron `i`
//!
//! `R_{i←j} = (z_i w_ij + (ε·sign(z_j) + δ·b_j)/N) / (z_j + ε·sign(z_j)) · R_j`
//!
//! where `N` counts the lower neurons connected to `j` and `sign(0) = +1`.
//! With `δ = 1` the numerators sum to the denominator, so each weighted
//! layer conserves relevance. Element-wise activations pass relevance on
//! unchanged; pooling gives everything to the selected input; LSTM gates are
//! treated as constants so relevance follows the signal operand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{conv_source, Aux, ForwardTrace, Layer, Lstm, LstmTrace, ModelGraph};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrpConfig {
    /// Stabilizer `ε ≥ 0`.
    pub epsilon: f64,
    /// Bias factor `δ ∈ {0, 1}`.
    pub delta: f64,
}

impl Default for LrpConfig {
    fn default() -> Self {
        LrpConfig {
            epsilon: 0.01,
            delta: 1.0,
        }
    }
}

impl LrpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter(format!(
                "epsilon {} must be finite and non-negative",
                self.epsilon
            )));
        }
        if self.delta != 0.0 && self.delta != 1.0 {
            return Err(Error::Parameter(format!("delta {} must be 0 or 1", self.delta)));
        }
        Ok(())
    }
}

/// `+1` for `z ≥ 0`, `−1` otherwise.
pub fn sign(z: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Relevance received by each input of one neuron under the epsilon rule.
/// A zero denominator (`z_j = 0` with `ε = 0`) passes nothing down.
pub fn redistribute(inputs: &[f64], weights: &[f64], bias: f64, relevance: f64, cfg: &LrpConfig) -> Vec<f64> {
    let z: f64 = bias + inputs.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>();
    let mut out = vec![0.0; inputs.len()];
    neuron(inputs.iter().zip(weights).map(|(x, w)| x * w), z, bias, relevance, cfg, |i, r| {
        out[i] += r
    });
    out
}

/// Core rule: `contributions` yields `z_i·w_ij` per connected input, `z` is
/// the recorded `z_j`. `sink(i, R_{i←j})` receives the shares.
fn neuron(
    contributions: impl ExactSizeIterator<Item = f64>,
    z: f64,
    bias: f64,
    relevance: f64,
    cfg: &LrpConfig,
    mut sink: impl FnMut(usize, f64),
) {
    if relevance == 0.0 {
        return;
    }
    let s = sign(z);
    let den = z + cfg.epsilon * s;
    if den == 0.0 {
        return;
    }
    let n = contributions.len() as f64;
    let share = (cfg.epsilon * s + cfg.delta * bias) / n;
    for (i, zw) in contributions.enumerate() {
        sink(i, (zw + share) / den * relevance);
    }
}

/// Relevance at the input of every layer from the first layer after the
/// embedding up to the softmax. `inputs[i]` is `None` for the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LrpTrace {
    pub inputs: Vec<Option<Tensor>>,
}

impl LrpTrace {
    /// Relevance on the embedded input (`len × D`) or the feature row.
    pub fn input_relevance(&self) -> &Tensor {
        self.inputs
            .iter()
            .flatten()
            .next()
            .expect("at least the softmax input")
    }
}

/// Propagates `f_c(x)` from the class-`c` output down to the embedded input.
pub fn propagate(model: &ModelGraph, trace: &ForwardTrace, c: usize, cfg: &LrpConfig) -> Result<LrpTrace> {
    cfg.validate()?;
    let k = model.num_classes();
    if c >= k {
        return Err(Error::Parameter(format!("class {c} outside {k} classes")));
    }
    let n = model.layers().len();
    let start = model.body_start();
    let mut inputs: Vec<Option<Tensor>> = vec![None; n];
    let mut seed = Tensor::zeros(1, k);
    seed.set(0, c, trace.prediction.scores[c]);
    inputs[n - 1] = Some(seed);
    for i in (start..n - 1).rev() {
        let r_out = inputs[i + 1].as_ref().expect("filled above");
        let tr = &trace.layers[i];
        let r_in = layer_relevance(i, &model.layers()[i], tr, r_out, cfg)?;
        inputs[i] = Some(r_in);
    }
    Ok(LrpTrace { inputs })
}

fn layer_relevance(
    index: usize,
    layer: &Layer,
    tr: &crate::network::LayerTrace,
    r_out: &Tensor,
    cfg: &LrpConfig,
) -> Result<Tensor> {
    let x = &tr.input;
    Ok(match layer {
        Layer::Dense { weights, bias, .. } => {
            let pre = tr.pre.as_ref().expect("dense trace has sums");
            let mut r_in = Tensor::zeros(x.rows(), x.cols());
            let xs = x.as_slice();
            let cols = weights.cols();
            for j in 0..cols {
                let contributions = xs.iter().enumerate().map(|(i, xv)| xv * weights.get(i, j));
                neuron(
                    contributions,
                    pre.as_slice()[j],
                    bias.as_slice()[j],
                    r_out.as_slice()[j],
                    cfg,
                    |i, r| r_in.as_mut_slice()[i] += r,
                );
            }
            r_in
        }
        Layer::Conv1D {
            weights, bias, width, ..
        } => {
            let pre = tr.pre.as_ref().expect("conv trace has sums");
            let (len, dim) = x.shape();
            let mut r_in = Tensor::zeros(len, dim);
            for t in 0..len {
                let taps: Vec<(usize, usize)> = (0..*width)
                    .filter_map(|j| conv_source(t, j, *width, len).map(|s| (j, s)))
                    .collect();
                for f in 0..pre.cols() {
                    let contributions = taps
                        .iter()
                        .flat_map(|&(j, s)| (0..dim).map(move |d| (j, s, d)))
                        .map(|(j, s, d)| x.get(s, d) * weights.get(j * dim + d, f));
                    let coords: Vec<(usize, usize)> = taps
                        .iter()
                        .flat_map(|&(_, s)| (0..dim).map(move |d| (s, d)))
                        .collect();
                    neuron(
                        contributions.collect::<Vec<_>>().into_iter(),
                        pre.get(t, f),
                        bias.as_slice()[f],
                        r_out.get(t, f),
                        cfg,
                        |i, r| {
                            let (s, d) = coords[i];
                            r_in.row_mut(s)[d] += r;
                        },
                    );
                }
            }
            r_in
        }
        Layer::MaxPool1D { .. } => {
            let Aux::Argmax(argmax) = &tr.aux else {
                unreachable!("pool trace records argmax")
            };
            let mut r_in = Tensor::zeros(x.rows(), x.cols());
            for (&src, &r) in argmax.iter().zip(r_out.as_slice()) {
                r_in.as_mut_slice()[src] += r;
            }
            r_in
        }
        Layer::Recurrent {
            cell,
            return_sequences,
        } => {
            let Aux::Recurrent(lt) = &tr.aux else {
                unreachable!("recurrent trace")
            };
            let rh = hidden_relevance(r_out, lt, 0, cell.units(), *return_sequences);
            lstm_relevance(cell, x, lt, &rh, cfg)
        }
        Layer::BiRecurrent {
            forward,
            backward,
            return_sequences,
        } => {
            let Aux::BiRecurrent(tf, tb) = &tr.aux else {
                unreachable!("bidirectional trace")
            };
            let h = forward.units();
            let rf = hidden_relevance(r_out, tf, 0, h, *return_sequences);
            let rb = hidden_relevance(r_out, tb, h, h, *return_sequences);
            let mut r_in = lstm_relevance(forward, x, tf, &rf, cfg);
            r_in.add_assign(&lstm_relevance(backward, x, tb, &rb, cfg));
            r_in
        }
        Layer::Dropout { .. } | Layer::GaussianNoise { .. } | Layer::Flatten => {
            r_out.clone().reshaped(x.rows(), x.cols())
        }
        Layer::Embedding { .. } | Layer::Softmax => {
            return Err(Error::Capability {
                layer: index,
                kind: layer.kind().into(),
                method: "relevance propagation below the first layer".into(),
            })
        }
    })
}

fn hidden_relevance(r_out: &Tensor, tr: &LstmTrace, offset: usize, units: usize, sequences: bool) -> Tensor {
    let len = tr.h.rows();
    let mut rh = Tensor::zeros(len, units);
    if sequences {
        for t in 0..len {
            rh.row_mut(t).copy_from_slice(&r_out.row(t)[offset..offset + units]);
        }
    } else {
        rh.row_mut(tr.last())
            .copy_from_slice(&r_out.as_slice()[offset..offset + units]);
    }
    rh
}

/// Signal-takes-all through one LSTM direction. `h = o⊙tanh(c)` hands all
/// of `R_h` to `c`; `c = f⊙c_prev + i⊙g` splits between its two products
/// (epsilon rule, `N = 2`, no bias); the products pass their share to
/// `c_prev` and to `z_g`, which is redistributed over `[x_t, h_prev]`.
fn lstm_relevance(cell: &Lstm, x: &Tensor, tr: &LstmTrace, r_h_out: &Tensor, cfg: &LrpConfig) -> Tensor {
    let h_units = cell.units();
    let dim = cell.input_dim();
    let len = x.rows();
    let mut r_h = r_h_out.clone();
    let mut r_c = Tensor::zeros(len, h_units);
    let mut r_x = Tensor::zeros(len, dim);
    let mut order = tr.order();
    order.reverse();
    let product_cfg = LrpConfig {
        epsilon: cfg.epsilon,
        delta: 0.0,
    };
    for t in order {
        let prev = tr.prev(t);
        let gates = tr.gates.row(t);
        for k in 0..h_units {
            let rc = r_c.get(t, k) + r_h.get(t, k);
            let c_prev = prev.map_or(0.0, |p| tr.c.get(p, k));
            let a = gates[h_units + k] * c_prev;
            let b = gates[k] * gates[2 * h_units + k];
            let mut r_b = 0.0;
            neuron([a, b].into_iter(), tr.c.get(t, k), 0.0, rc, &product_cfg, |i, r| {
                if i == 0 {
                    if let Some(p) = prev {
                        r_c.row_mut(p)[k] += r;
                    }
                } else {
                    r_b = r;
                }
            });
            let col = 2 * h_units + k;
            let xs = x.row(t);
            let hs: Vec<f64> = match prev {
                Some(p) => tr.h.row(p).to_vec(),
                None => vec![0.0; h_units],
            };
            let contributions = xs
                .iter()
                .enumerate()
                .map(|(d, xv)| xv * cell.w.get(d, col))
                .chain(hs.iter().enumerate().map(|(m, hv)| hv * cell.u.get(m, col)))
                .collect::<Vec<_>>();
            neuron(
                contributions.into_iter(),
                tr.z.get(t, col),
                cell.b.as_slice()[col],
                r_b,
                cfg,
                |i, r| {
                    if i < dim {
                        r_x.row_mut(t)[i] += r;
                    } else if let Some(p) = prev {
                        r_h.row_mut(p)[i - dim] += r;
                    }
                },
            );
        }
    }
    r_x
}
