//! LSTM cell with full backpropagation through time.
//!
//! Gate pre-activations are laid out as `[i, f, g, o]` blocks of `H` columns:
//! `i, f, o` are logistic, `g` is `tanh`, `c_t = f⊙c_{t−1} + i⊙g` and
//! `h_t = o⊙tanh(c_t)`. The initial state is zero.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    /// Input weights, `in_dim × 4H`.
    pub w: Tensor,
    /// Recurrent weights, `H × 4H`.
    pub u: Tensor,
    /// `1 × 4H`.
    pub b: Tensor,
}

/// Per-position values of one LSTM run. Rows are indexed by sequence
/// position, also when the cell reads the sequence backwards.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmTrace {
    /// Gate pre-activations `x_t W + h_prev U + b`, `L × 4H`.
    pub z: Tensor,
    /// Gate activations, `L × 4H`.
    pub gates: Tensor,
    pub c: Tensor,
    pub h: Tensor,
    pub reverse: bool,
}

impl LstmTrace {
    /// Position whose state feeds position `t`, if any.
    pub fn prev(&self, t: usize) -> Option<usize> {
        let len = self.h.rows();
        if self.reverse {
            (t + 1 < len).then_some(t + 1)
        } else {
            t.checked_sub(1)
        }
    }

    /// Processing order of positions.
    pub fn order(&self) -> Vec<usize> {
        let len = self.h.rows();
        if self.reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        }
    }

    /// Position processed last (its `h` is the final state).
    pub fn last(&self) -> usize {
        if self.reverse {
            0
        } else {
            self.h.rows() - 1
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Lstm {
    pub fn units(&self) -> usize {
        self.u.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn run(&self, x: &Tensor, reverse: bool) -> LstmTrace {
        let len = x.rows();
        let h_units = self.units();
        let mut trace = LstmTrace {
            z: Tensor::zeros(len, 4 * h_units),
            gates: Tensor::zeros(len, 4 * h_units),
            c: Tensor::zeros(len, h_units),
            h: Tensor::zeros(len, h_units),
            reverse,
        };
        for t in trace.order() {
            let mut z = self.b.as_slice().to_vec();
            for (d, &xv) in x.row(t).iter().enumerate() {
                if xv != 0.0 {
                    for (zk, wk) in z.iter_mut().zip(self.w.row(d)) {
                        *zk += xv * wk;
                    }
                }
            }
            let prev = trace.prev(t);
            if let Some(p) = prev {
                for k in 0..h_units {
                    let hv = trace.h.get(p, k);
                    for (zk, uk) in z.iter_mut().zip(self.u.row(k)) {
                        *zk += hv * uk;
                    }
                }
            }
            let mut a = vec![0.0; 4 * h_units];
            for k in 0..h_units {
                a[k] = sigmoid(z[k]);
                a[h_units + k] = sigmoid(z[h_units + k]);
                a[2 * h_units + k] = z[2 * h_units + k].tanh();
                a[3 * h_units + k] = sigmoid(z[3 * h_units + k]);
            }
            for k in 0..h_units {
                let c_prev = prev.map_or(0.0, |p| trace.c.get(p, k));
                let c = a[h_units + k] * c_prev + a[k] * a[2 * h_units + k];
                trace.c.set(t, k, c);
                trace.h.set(t, k, a[3 * h_units + k] * c.tanh());
            }
            trace.z.row_mut(t).copy_from_slice(&z);
            trace.gates.row_mut(t).copy_from_slice(&a);
        }
        trace
    }

    /// Backpropagates `dh` (gradient w.r.t. every position's `h`) through
    /// time. Returns the input gradient and, when `grads` is given, adds the
    /// parameter gradients `[dW, dU, db]` into it.
    pub fn backward(
        &self,
        x: &Tensor,
        trace: &LstmTrace,
        dh: &Tensor,
        grads: Option<&mut [Tensor]>,
    ) -> Tensor {
        let h_units = self.units();
        let in_dim = self.input_dim();
        let mut dx = Tensor::zeros(x.rows(), in_dim);
        let mut dh_next = vec![0.0; h_units];
        let mut dc_next = vec![0.0; h_units];
        let mut grads = grads;
        let mut order = trace.order();
        order.reverse();
        let mut dz = vec![0.0; 4 * h_units];
        for t in order {
            let prev = trace.prev(t);
            let a = trace.gates.row(t);
            for k in 0..h_units {
                let (i, f, g, o) = (a[k], a[h_units + k], a[2 * h_units + k], a[3 * h_units + k]);
                let c = trace.c.get(t, k);
                let tc = c.tanh();
                let dh_k = dh.get(t, k) + dh_next[k];
                let dc = dh_k * o * (1.0 - tc * tc) + dc_next[k];
                let c_prev = prev.map_or(0.0, |p| trace.c.get(p, k));
                dz[k] = dc * g * i * (1.0 - i);
                dz[h_units + k] = dc * c_prev * f * (1.0 - f);
                dz[2 * h_units + k] = dc * i * (1.0 - g * g);
                dz[3 * h_units + k] = dh_k * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            if let Some(gs) = grads.as_deref_mut() {
                let (dw, rest) = gs.split_at_mut(1);
                let (du, db) = rest.split_at_mut(1);
                for (d, &xv) in x.row(t).iter().enumerate() {
                    if xv != 0.0 {
                        for (gk, zk) in dw[0].row_mut(d).iter_mut().zip(&dz) {
                            *gk += xv * zk;
                        }
                    }
                }
                if let Some(p) = prev {
                    for k in 0..h_units {
                        let hv = trace.h.get(p, k);
                        for (gk, zk) in du[0].row_mut(k).iter_mut().zip(&dz) {
                            *gk += hv * zk;
                        }
                    }
                }
                for (gk, zk) in db[0].as_mut_slice().iter_mut().zip(&dz) {
                    *gk += zk;
                }
            }
            let dx_row = dx.row_mut(t);
            for (d, out) in dx_row.iter_mut().enumerate() {
                *out = self.w.row(d).iter().zip(&dz).map(|(w, z)| w * z).sum();
            }
            for (k, out) in dh_next.iter_mut().enumerate() {
                *out = if prev.is_some() {
                    self.u.row(k).iter().zip(&dz).map(|(u, z)| u * z).sum()
                } else {
                    0.0
                };
            }
        }
        dx
    }
}
