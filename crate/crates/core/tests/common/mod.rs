//! Random small models shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use hatelens::network::{Activation, InputSpec, LayerSpec, ModelGraph, ModelInput, ModelSpec};
use rand::seq::index::sample;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct RandomModel {
    pub model: ModelGraph,
    pub input: ModelInput,
    pub class: usize,
}

fn activation(rng: &mut ChaCha8Rng, smooth: bool) -> Activation {
    let choices: &[Activation] = if smooth {
        &[Activation::Linear, Activation::Tanh]
    } else {
        &[Activation::Linear, Activation::Tanh, Activation::Relu]
    };
    choices[rng.random_range(0..choices.len())]
}

/// A random token or feature model with 2 to 3 classes. `smooth` restricts
/// activations to differentiable ones.
pub fn random_model(seed: u64, smooth: bool) -> RandomModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=3);
    let mut layers = Vec::new();
    let (input, spec_input, vocab) = if rng.random_bool(0.8) {
        let max_len = rng.random_range(3..=6);
        let vocab = max_len + rng.random_range(2..=4);
        layers.push(LayerSpec::Embedding {
            dim: rng.random_range(2..=4),
        });
        if rng.random_bool(0.6) {
            layers.push(LayerSpec::Conv1D {
                filters: rng.random_range(2..=3),
                width: rng.random_range(1..=3),
                activation: activation(&mut rng, smooth),
            });
            if rng.random_bool(0.5) {
                layers.push(LayerSpec::MaxPool1D { size: 2 });
            }
        }
        layers.push(LayerSpec::Dropout { rate: 0.3 });
        match rng.random_range(0..4) {
            0 => layers.push(LayerSpec::Flatten),
            1 => layers.push(LayerSpec::Recurrent {
                units: rng.random_range(2..=3),
                return_sequences: false,
            }),
            2 => layers.push(LayerSpec::BiRecurrent {
                units: 2,
                return_sequences: false,
            }),
            _ => {
                layers.push(LayerSpec::Recurrent {
                    units: 2,
                    return_sequences: true,
                });
                layers.push(LayerSpec::Flatten);
            }
        }
        // Distinct ids: repeated tokens produce max-pool ties, where the
        // score is not differentiable.
        let ids = sample(&mut rng, vocab - 1, max_len).into_iter().map(|i| i + 1).collect();
        (ModelInput::Tokens(ids), InputSpec::Tokens { max_len }, vocab)
    } else {
        let dim = rng.random_range(2..=6);
        let x = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        (ModelInput::Dense(x), InputSpec::Features { dim }, 0)
    };
    layers.push(LayerSpec::GaussianNoise { std: 0.1 });
    if rng.random_bool(0.7) {
        layers.push(LayerSpec::Dense {
            units: rng.random_range(2..=4),
            activation: activation(&mut rng, smooth),
        });
    }
    layers.push(LayerSpec::Dense {
        units: k,
        activation: Activation::Linear,
    });
    layers.push(LayerSpec::Softmax { classes: k });
    let spec = ModelSpec {
        input: spec_input,
        layers,
    };
    let mut model = ModelGraph::build(&spec, vocab, k, rng.random()).expect("valid random spec");
    // Non-zero biases so that bias handling is exercised.
    for layer in model.layers_mut() {
        let names = layer.param_names();
        for (name, p) in names.iter().zip(layer.params_mut()) {
            if *name == "bias" || *name == "b" || name.ends_with(".b") {
                for v in p.as_mut_slice() {
                    *v = rng.random_range(-0.3..0.3);
                }
            }
        }
    }
    // Scaled-up embeddings keep activations out of the near-linear regime.
    if model.body_start() == 1 {
        for v in model.layers_mut()[0].params_mut()[0].as_mut_slice() {
            *v *= 10.0;
        }
    }
    RandomModel {
        model,
        input,
        class: rng.random_range(0..k),
    }
}

const H: f64 = 1e-4;

/// Largest `|a − n| / max(|a|, |n|, 1e-6)` between the analytic gradient
/// and central differences of `f_c` over the embedded input.
pub fn gradient_error(seed: u64, smooth: bool) -> f64 {
    let rm = random_model(seed, smooth);
    let analytic = rm.model.input_gradient(&rm.input, rm.class).unwrap();
    let x = rm.model.embed(&rm.input).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.as_mut_slice()[i] += H;
        let mut minus = x.clone();
        minus.as_mut_slice()[i] -= H;
        let numeric = (rm.model.scores_from_embedded(&plus).unwrap()[rm.class]
            - rm.model.scores_from_embedded(&minus).unwrap()[rm.class])
            / (2.0 * H);
        let a = analytic.as_slice()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

/// Random vote counts with `n ≤ 6` subjects, `2 ≤ m ≤ 4` raters and
/// `2 ≤ k ≤ 4` categories.
pub fn random_annotations(rng: &mut ChaCha8Rng) -> (Vec<Vec<u32>>, u32) {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(2..=4u32);
    let k = rng.random_range(2..=4);
    let counts = (0..n)
        .map(|_| {
            let mut row = vec![0u32; k];
            for _ in 0..m {
                row[rng.random_range(0..k)] += 1;
            }
            row
        })
        .collect();
    (counts, m)
}

/// Overall kappa computed term by term from the raw counts: category
/// proportions, per-category kappas, then their `p(1−p)`-weighted mean over
/// categories with `0 < p < 1`.
pub fn kappa_oracle(x: &[Vec<u32>], m: u32) -> Option<f64> {
    let n = x.len() as f64;
    let m = m as f64;
    let k = x[0].len();
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..k {
        let mut col = 0.0;
        for row in x {
            col += row[j] as f64;
        }
        let p = col / (n * m);
        if p == 0.0 || p == 1.0 {
            continue;
        }
        let mut s = 0.0;
        for row in x {
            let v = row[j] as f64;
            s += v * (m - v);
        }
        let kappa = 1.0 - s / (n * m * (m - 1.0) * p * (1.0 - p));
        num += p * (1.0 - p) * kappa;
        den += p * (1.0 - p);
    }
    (den > 0.0).then(|| num / den)
}

/// Classical two-class Matthews correlation; 0 when undefined.
pub fn binary_mcc(tp: f64, tn: f64, fp: f64, fn_: f64) -> f64 {
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den
    }
}
