//! Small differentiable text classifiers with traced forward passes, input
//! gradients, training and a naive Bayes baseline.

mod layers;
mod lstm;
mod naive_bayes;
mod spec;
mod train;

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use layers::{conv_left_pad, conv_source, softmax, Aux, Layer, LayerTrace};
pub use lstm::{Lstm, LstmTrace};
pub use naive_bayes::NaiveBayes;
pub use spec::{presets, Activation, InputSpec, LayerSpec, ModelSpec, Shape};
pub use train::{train, EpochStats, Optimizer, TrainConfig, TrainHistory};

use crate::error::{Error, Result};
use crate::features::{SparseVector, PAD_INDEX};
use crate::rng::{derive_seed, seeded, Rng};
use crate::tensor::Tensor;

/// Lower bound applied to `log10` of a vanishing squared norm.
pub const DEFAULT_LOG_NORM_FLOOR: f64 = -30.0;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// One model input: token ids for sequence models, a feature vector for
/// flat models.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Tokens(Vec<usize>),
    Dense(Vec<f64>),
    Sparse(SparseVector),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout and noise draw from a stream seeded with `seed`.
    Train { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// Pre-softmax class scores `f_c(x)`.
    pub scores: Vec<f64>,
}

impl Prediction {
    /// Highest-probability class, ties to the lower index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// One entry per layer, in order.
    pub layers: Vec<LayerTrace>,
    pub prediction: Prediction,
}

/// Parameter gradients, aligned with [`ModelGraph::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.as_slice())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.0 {
            for g in t.as_mut_slice() {
                *g *= factor;
            }
        }
    }
}

/// Serializes as a versioned checkpoint: the spec plus every parameter
/// tensor in declared row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CheckpointRepr", try_from = "CheckpointRepr")]
pub struct ModelGraph {
    spec: ModelSpec,
    vocab_size: usize,
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
}

fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::from_vec(fan_in, fan_out, data)
}

fn new_lstm(rng: &mut Rng, in_dim: usize, units: usize) -> Lstm {
    let mut b = Tensor::zeros(1, 4 * units);
    for k in units..2 * units {
        b.as_mut_slice()[k] = 1.0;
    }
    Lstm {
        w: glorot(rng, in_dim, 4 * units),
        u: glorot(rng, units, 4 * units),
        b,
    }
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRepr {
    format_version: u32,
    spec: ModelSpec,
    vocab_size: usize,
    parameters: Vec<ParamRecord>,
}

impl ModelGraph {
    /// Shape-checks `spec` and initializes parameters deterministically from
    /// `seed`: Glorot-uniform weights, zero biases (LSTM forget gates start
    /// at 1) and embeddings uniform in ±0.05 with a zero pad row.
    pub fn build(spec: &ModelSpec, vocab_size: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        if spec.num_classes() != Some(num_classes) {
            return Err(Error::Model(format!(
                "the softmax layer does not match {num_classes} classes"
            )));
        }
        if matches!(spec.input, InputSpec::Tokens { .. }) && vocab_size <= PAD_INDEX + 1 {
            return Err(Error::Model("vocabulary must hold more than the reserved tokens".into()));
        }
        let mut rng = seeded(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, ls) in spec.layers.iter().enumerate() {
            let (in_rows, in_cols) = shapes[i].dims();
            let layer = match *ls {
                LayerSpec::Embedding { dim } => {
                    let mut data: Vec<f64> = (0..vocab_size * dim)
                        .map(|_| rng.random_range(-0.05..0.05))
                        .collect();
                    data[PAD_INDEX * dim..(PAD_INDEX + 1) * dim].fill(0.0);
                    Layer::Embedding {
                        table: Tensor::from_vec(vocab_size, dim, data),
                    }
                }
                LayerSpec::Dense { units, activation } => Layer::Dense {
                    weights: glorot(&mut rng, in_rows * in_cols, units),
                    bias: Tensor::zeros(1, units),
                    activation,
                },
                LayerSpec::Conv1D {
                    filters,
                    width,
                    activation,
                } => Layer::Conv1D {
                    weights: glorot(&mut rng, width * in_cols, filters),
                    bias: Tensor::zeros(1, filters),
                    width,
                    activation,
                },
                LayerSpec::MaxPool1D { size } => Layer::MaxPool1D { size },
                LayerSpec::Recurrent {
                    units,
                    return_sequences,
                } => Layer::Recurrent {
                    cell: new_lstm(&mut rng, in_cols, units),
                    return_sequences,
                },
                LayerSpec::BiRecurrent {
                    units,
                    return_sequences,
                } => Layer::BiRecurrent {
                    forward: new_lstm(&mut rng, in_cols, units),
                    backward: new_lstm(&mut rng, in_cols, units),
                    return_sequences,
                },
                LayerSpec::Dropout { rate } => Layer::Dropout { rate },
                LayerSpec::GaussianNoise { std } => Layer::GaussianNoise { std },
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Softmax { .. } => Layer::Softmax,
            };
            layers.push(layer);
        }
        Ok(ModelGraph {
            spec: spec.clone(),
            vocab_size,
            layers,
            shapes,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Shape of the input of layer `i` (index `layers().len()` is the output).
    pub fn shape(&self, i: usize) -> Shape {
        self.shapes[i]
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes().expect("validated at build time")
    }

    /// Configured sequence length of token models.
    pub fn max_len(&self) -> Option<usize> {
        match self.spec.input {
            InputSpec::Tokens { max_len } => Some(max_len),
            InputSpec::Features { .. } => None,
        }
    }

    /// Index of the first layer after the embedding: the layer whose input is
    /// differentiated by [`ModelGraph::input_gradient`].
    pub fn body_start(&self) -> usize {
        usize::from(matches!(self.layers.first(), Some(Layer::Embedding { .. })))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients(
            self.params()
                .into_iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect(),
        )
    }

    /// Sets every bias (including LSTM gate biases) to zero.
    pub fn zero_biases(&mut self) {
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { bias, .. } | Layer::Conv1D { bias, .. } => bias.as_mut_slice().fill(0.0),
                Layer::Recurrent { cell, .. } => cell.b.as_mut_slice().fill(0.0),
                Layer::BiRecurrent {
                    forward, backward, ..
                } => {
                    forward.b.as_mut_slice().fill(0.0);
                    backward.b.as_mut_slice().fill(0.0);
                }
                _ => {}
            }
        }
    }

    /// Converts an input to the tensor fed to layer 0 (token ids are stored
    /// as `f64`).
    pub fn input_tensor(&self, input: &ModelInput) -> Result<Tensor> {
        match (self.spec.input, input) {
            (InputSpec::Tokens { max_len }, ModelInput::Tokens(ids)) => {
                if ids.len() != max_len {
                    return Err(Error::Input(format!(
                        "sequence of length {} but the model expects {max_len}",
                        ids.len()
                    )));
                }
                if let Some(id) = ids.iter().find(|&&id| id >= self.vocab_size) {
                    return Err(Error::Input(format!(
                        "token id {id} outside vocabulary of {}",
                        self.vocab_size
                    )));
                }
                Ok(Tensor::vector(ids.iter().map(|&id| id as f64).collect()))
            }
            (InputSpec::Features { dim }, ModelInput::Dense(x)) if x.len() == dim => {
                Ok(Tensor::vector(x.clone()))
            }
            (InputSpec::Features { dim }, ModelInput::Sparse(x)) if x.dim == dim => {
                Ok(Tensor::vector(x.to_dense()))
            }
            (InputSpec::Features { dim }, _) => Err(Error::Input(format!(
                "expected a feature vector of dimension {dim}"
            ))),
            (InputSpec::Tokens { .. }, _) => Err(Error::Input("expected token ids".into())),
        }
    }

    fn run(&self, start: usize, input: Tensor, rng: Option<&mut Rng>) -> Result<Vec<LayerTrace>> {
        let mut rng = rng;
        let mut traces: Vec<LayerTrace> = Vec::with_capacity(self.layers.len() - start);
        for (i, layer) in self.layers.iter().enumerate().skip(start) {
            let x = traces.last().map_or(&input, |t| &t.output);
            let tr = layer.forward(x, rng.as_deref_mut());
            if !tr.output.all_finite() || tr.pre.as_ref().is_some_and(|p| !p.all_finite()) {
                return Err(Error::Numeric {
                    layer: i,
                    kind: layer.kind().into(),
                });
            }
            traces.push(tr);
        }
        Ok(traces)
    }

    fn finish(traces: Vec<LayerTrace>) -> ForwardTrace {
        let last = traces.last().expect("softmax layer");
        let prediction = Prediction {
            probs: last.output.as_slice().to_vec(),
            scores: last.input.as_slice().to_vec(),
        };
        ForwardTrace {
            layers: traces,
            prediction,
        }
    }

    /// Full forward pass with every layer's activations recorded.
    pub fn forward(&self, input: &ModelInput, mode: Mode) -> Result<ForwardTrace> {
        let x = self.input_tensor(input)?;
        let traces = match mode {
            Mode::Eval => self.run(0, x, None)?,
            Mode::Train { seed } => self.run(0, x, Some(&mut seeded(seed)))?,
        };
        Ok(Self::finish(traces))
    }

    pub fn predict(&self, input: &ModelInput) -> Result<Prediction> {
        Ok(self.forward(input, Mode::Eval)?.prediction)
    }

    /// Re-runs layer `i` in evaluation mode on a recorded input.
    pub fn replay_layer(&self, i: usize, input: &Tensor) -> LayerTrace {
        self.layers[i].forward(input, None)
    }

    /// The tensor whose gradient [`ModelGraph::input_gradient`] returns:
    /// the embedded sequence (`len × D`) or the feature row.
    pub fn embed(&self, input: &ModelInput) -> Result<Tensor> {
        let x = self.input_tensor(input)?;
        Ok(if self.body_start() == 1 {
            self.layers[0].forward(&x, None).output
        } else {
            x
        })
    }

    /// Evaluation-mode class scores for an already embedded input.
    pub fn scores_from_embedded(&self, embedded: &Tensor) -> Result<Vec<f64>> {
        let traces = self.run(self.body_start(), embedded.clone(), None)?;
        Ok(Self::finish(traces).prediction.scores)
    }

    /// Backpropagates `dscores` (gradient w.r.t. the pre-softmax scores)
    /// through `trace`. Returns the gradient w.r.t. the embedded input and
    /// adds parameter gradients into `grads` when given.
    pub fn backward(&self, trace: &ForwardTrace, dscores: &[f64], grads: Option<&mut Gradients>) -> Tensor {
        let n = self.layers.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.params().len();
        }
        offsets.push(acc);
        let mut grads = grads;
        let mut g = Tensor::vector(dscores.to_vec());
        let start = self.body_start();
        for i in (start..n - 1).rev() {
            let slot = grads
                .as_deref_mut()
                .map(|gs| &mut gs.0[offsets[i]..offsets[i + 1]]);
            g = self.layers[i].backward(&trace.layers[i], &g, slot);
        }
        if start == 1 {
            if let Some(gs) = grads {
                layers::embedding_backward(&trace.layers[0].input, &g, &mut gs.0[offsets[0]]);
            }
        }
        g
    }

    /// `∂f_c/∂x` over the embedded input in evaluation mode, with `f_c` the
    /// pre-softmax score of class `c`.
    pub fn input_gradient(&self, input: &ModelInput, c: usize) -> Result<Tensor> {
        let k = self.num_classes();
        if c >= k {
            return Err(Error::Parameter(format!("class {c} outside {k} classes")));
        }
        let trace = self.forward(input, Mode::Eval)?;
        let mut seed = vec![0.0; k];
        seed[c] = 1.0;
        Ok(self.backward(&trace, &seed, None))
    }

    /// Mean over weight matrices of `log10(‖W‖_F²)`, each term clamped
    /// below at `floor`. Embeddings and biases are excluded.
    pub fn log_norm_with_floor(&self, floor: f64) -> f64 {
        let mats: Vec<&Tensor> = self.layers.iter().flat_map(Layer::weight_matrices).collect();
        if mats.is_empty() {
            return floor;
        }
        let total: f64 = mats
            .iter()
            .map(|w| {
                let sq: f64 = w.as_slice().iter().map(|v| v * v).sum();
                sq.log10().max(floor)
            })
            .sum();
        total / mats.len() as f64
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm_with_floor(DEFAULT_LOG_NORM_FLOOR)
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.all_finite())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl From<ModelGraph> for CheckpointRepr {
    fn from(model: ModelGraph) -> Self {
        let mut parameters = Vec::new();
        for (i, layer) in model.layers.iter().enumerate() {
            for (name, p) in layer.param_names().iter().zip(layer.params()) {
                parameters.push(ParamRecord {
                    name: format!("layer{i}.{name}"),
                    rows: p.rows(),
                    cols: p.cols(),
                    data: p.as_slice().to_vec(),
                });
            }
        }
        CheckpointRepr {
            format_version: CHECKPOINT_FORMAT_VERSION,
            spec: model.spec,
            vocab_size: model.vocab_size,
            parameters,
        }
    }
}

impl TryFrom<CheckpointRepr> for ModelGraph {
    type Error = Error;

    fn try_from(repr: CheckpointRepr) -> Result<Self> {
        if repr.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                repr.format_version
            )));
        }
        let k = repr
            .spec
            .num_classes()
            .ok_or_else(|| Error::Checkpoint("spec has no softmax layer".into()))?;
        let mut model = ModelGraph::build(&repr.spec, repr.vocab_size, k, 0)?;
        let expected = model.params().len();
        if expected != repr.parameters.len() {
            return Err(Error::Checkpoint(format!(
                "expected {expected} parameter tensors, found {}",
                repr.parameters.len()
            )));
        }
        for (slot, rec) in model.params_mut().into_iter().zip(repr.parameters) {
            if (slot.rows(), slot.cols()) != (rec.rows, rec.cols) || rec.data.len() != rec.rows * rec.cols {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {}×{} but the spec needs {}×{}",
                    rec.name,
                    rec.rows,
                    rec.cols,
                    slot.rows(),
                    slot.cols()
                )));
            }
            if rec.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("parameter {} is not finite", rec.name)));
            }
            *slot = Tensor::from_vec(rec.rows, rec.cols, rec.data);
        }
        Ok(model)
    }
}

/// Seed of the dropout/noise stream for one training step.
pub(crate) fn step_seed(root: u64, epoch: usize, step: usize) -> u64 {
    derive_seed(derive_seed(root, epoch as u64), step as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ModelSpec {
        ModelSpec {
            input: InputSpec::Tokens { max_len: 5 },
            layers: vec![
                LayerSpec::Embedding { dim: 16 },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 8,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 4,
                    activation: Activation::Linear,
                },
                LayerSpec::Softmax { classes: 4 },
            ],
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = ModelGraph::build(&small_spec(), 30, 4, 7).unwrap();
        let b = ModelGraph::build(&small_spec(), 30, 4, 7).unwrap();
        let c = ModelGraph::build(&small_spec(), 30, 4, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn outputs_are_distributions_even_for_padding() {
        let m = ModelGraph::build(&small_spec(), 30, 4, 1).unwrap();
        for ids in [vec![0; 5], vec![3, 4, 5, 0, 0], vec![29; 5]] {
            let p = m.predict(&ModelInput::Tokens(ids)).unwrap();
            assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.probs.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn eval_is_deterministic_and_train_mode_is_stochastic() {
        let h = presets::Hyper {
            dropout: 0.5,
            ..Default::default()
        };
        let m = ModelGraph::build(&presets::cnn(8, 3, &h), 20, 3, 2).unwrap();
        let x = ModelInput::Tokens(vec![2, 3, 4, 5, 6, 7, 0, 0]);
        assert_eq!(m.predict(&x).unwrap(), m.predict(&x).unwrap());
        let t1 = m.forward(&x, Mode::Train { seed: 1 }).unwrap().prediction;
        let t2 = m.forward(&x, Mode::Train { seed: 2 }).unwrap().prediction;
        assert_ne!(t1, t2);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let m = ModelGraph::build(&small_spec(), 30, 4, 1).unwrap();
        assert!(matches!(
            m.predict(&ModelInput::Tokens(vec![1, 2])),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let mut m = ModelGraph::build(&small_spec(), 30, 4, 1).unwrap();
        if let Layer::Dense { weights, .. } = &mut m.layers_mut()[2] {
            weights.as_mut_slice()[0] = f64::INFINITY;
        }
        let err = m.predict(&ModelInput::Tokens(vec![5; 5])).unwrap_err();
        assert!(matches!(err, Error::Numeric { layer: 2, .. }), "{err}");
    }

    #[test]
    fn log_norm_arithmetic() {
        let spec = ModelSpec {
            input: InputSpec::Features { dim: 1 },
            layers: vec![
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Linear,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 2,
                    activation: Activation::Linear,
                },
                LayerSpec::Softmax { classes: 2 },
            ],
        };
        let mut m = ModelGraph::build(&spec, 0, 2, 0).unwrap();
        // single 1×1 weight of 10
        let single = ModelSpec {
            input: InputSpec::Features { dim: 1 },
            layers: vec![
                LayerSpec::Dense {
                    units: 2,
                    activation: Activation::Linear,
                },
                LayerSpec::Softmax { classes: 2 },
            ],
        };
        let mut s = ModelGraph::build(&single, 0, 2, 0).unwrap();
        if let Layer::Dense { weights, .. } = &mut s.layers_mut()[0] {
            *weights = Tensor::from_vec(1, 2, vec![10.0, 0.0]);
        }
        assert!((s.log_norm() - 2.0).abs() < 1e-12);

        let before = m.log_norm();
        for p in m.params_mut() {
            for v in p.as_mut_slice() {
                *v *= 10.0;
            }
        }
        assert!((m.log_norm() - before - 2.0).abs() < 1e-12);

        for p in m.params_mut() {
            p.as_mut_slice().fill(0.0);
        }
        assert_eq!(m.log_norm(), DEFAULT_LOG_NORM_FLOOR);
        assert_eq!(m.log_norm_with_floor(-5.0), -5.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let h = presets::Hyper::default();
        let m = ModelGraph::build(&presets::conv_lstm(10, 4, &h), 25, 4, 11).unwrap();
        let back = ModelGraph::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let x = ModelInput::Tokens(vec![3, 9, 4, 24, 2, 0, 0, 0, 0, 0]);
        let (a, b) = (m.predict(&x).unwrap(), back.predict(&x).unwrap());
        for (u, v) in a.probs.iter().zip(&b.probs) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn checkpoint_rejects_other_versions() {
        let m = ModelGraph::build(&small_spec(), 30, 4, 1).unwrap();
        let text = m.to_json().unwrap().replace("\"format_version\":1", "\"format_version\":99");
        let err = ModelGraph::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("format version"), "{err}");
    }
}
