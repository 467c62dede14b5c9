//! Architecture descriptions and shape checking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Token ids → `len × dim` vectors.
    Embedding { dim: usize },
    /// Fully connected layer over a flat vector.
    Dense { units: usize, activation: Activation },
    /// Same-padded 1D convolution over the sequence axis.
    Conv1D {
        filters: usize,
        width: usize,
        activation: Activation,
    },
    /// Non-overlapping max pooling over the sequence axis.
    MaxPool1D { size: usize },
    /// LSTM; emits the last hidden state or the whole sequence.
    Recurrent { units: usize, return_sequences: bool },
    /// Forward and backward LSTMs with concatenated outputs.
    BiRecurrent { units: usize, return_sequences: bool },
    Dropout { rate: f64 },
    GaussianNoise { std: f64 },
    Flatten,
    /// Final normalization over `classes` scores.
    Softmax { classes: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Embedding { .. } => "Embedding",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Conv1D { .. } => "Conv1D",
            LayerSpec::MaxPool1D { .. } => "MaxPool1D",
            LayerSpec::Recurrent { .. } => "Recurrent",
            LayerSpec::BiRecurrent { .. } => "BiRecurrent",
            LayerSpec::Dropout { .. } => "Dropout",
            LayerSpec::GaussianNoise { .. } => "GaussianNoise",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Softmax { .. } => "Softmax",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    /// Fixed-length token id sequences; the first layer must be an embedding.
    Tokens { max_len: usize },
    /// Flat feature vectors (e.g. TF-IDF).
    Features { dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Tokens(usize),
    Seq { len: usize, dim: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(self) -> usize {
        match self {
            Shape::Tokens(n) | Shape::Flat(n) => n,
            Shape::Seq { len, dim } => len * dim,
        }
    }

    /// Rows and columns of the tensor holding this activation.
    pub fn dims(self) -> (usize, usize) {
        match self {
            Shape::Tokens(n) | Shape::Flat(n) => (1, n),
            Shape::Seq { len, dim } => (len, dim),
        }
    }
}

fn describe(index: Option<usize>, kind: &str) -> String {
    match index {
        Some(i) => format!("layer {i} ({kind})"),
        None => format!("input ({kind})"),
    }
}

impl ModelSpec {
    /// Shapes after each layer (index 0 is the input shape). Fails when
    /// adjacent layers do not chain or the last layer is not a softmax.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shape = match self.input {
            InputSpec::Tokens { max_len } if max_len > 0 => Shape::Tokens(max_len),
            InputSpec::Features { dim } if dim > 0 => Shape::Flat(dim),
            _ => return Err(Error::Model("input size must be positive".into())),
        };
        let input_kind = match self.input {
            InputSpec::Tokens { .. } => "tokens",
            InputSpec::Features { .. } => "features",
        };
        let mut shapes = vec![shape];
        for (i, layer) in self.layers.iter().enumerate() {
            let lower = if i == 0 {
                describe(None, input_kind)
            } else {
                describe(Some(i - 1), self.layers[i - 1].kind())
            };
            let fail = |message: String| Error::Build {
                lower: lower.clone(),
                upper: describe(Some(i), layer.kind()),
                message,
            };
            let positive = |v: usize, what: &str| {
                if v == 0 {
                    Err(fail(format!("{what} must be positive")))
                } else {
                    Ok(())
                }
            };
            shape = match (*layer).clone() {
                LayerSpec::Embedding { dim } => {
                    positive(dim, "embedding dimension")?;
                    match shape {
                        Shape::Tokens(len) => Shape::Seq { len, dim },
                        _ => return Err(fail("embedding needs token ids as input".into())),
                    }
                }
                LayerSpec::Dense { units, .. } => {
                    positive(units, "units")?;
                    match shape {
                        Shape::Flat(_) => Shape::Flat(units),
                        Shape::Tokens(_) => {
                            return Err(fail("dense layer cannot consume raw token ids".into()))
                        }
                        Shape::Seq { .. } => {
                            return Err(fail("dense layer needs a flat input; add Flatten".into()))
                        }
                    }
                }
                LayerSpec::Conv1D { filters, width, .. } => {
                    positive(filters, "filters")?;
                    positive(width, "kernel width")?;
                    match shape {
                        Shape::Seq { len, .. } => Shape::Seq { len, dim: filters },
                        _ => return Err(fail("convolution needs a sequence input".into())),
                    }
                }
                LayerSpec::MaxPool1D { size } => {
                    positive(size, "pool size")?;
                    match shape {
                        Shape::Seq { len, dim } if len >= size => Shape::Seq {
                            len: len / size,
                            dim,
                        },
                        Shape::Seq { len, .. } => {
                            return Err(fail(format!("pool size {size} exceeds sequence length {len}")))
                        }
                        _ => return Err(fail("pooling needs a sequence input".into())),
                    }
                }
                LayerSpec::Recurrent {
                    units,
                    return_sequences,
                }
                | LayerSpec::BiRecurrent {
                    units,
                    return_sequences,
                } => {
                    positive(units, "units")?;
                    let out = if matches!(layer, LayerSpec::BiRecurrent { .. }) {
                        2 * units
                    } else {
                        units
                    };
                    match shape {
                        Shape::Seq { len, .. } if return_sequences => Shape::Seq { len, dim: out },
                        Shape::Seq { .. } => Shape::Flat(out),
                        _ => return Err(fail("recurrent layer needs a sequence input".into())),
                    }
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(fail(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    if matches!(shape, Shape::Tokens(_)) {
                        return Err(fail("dropout cannot act on token ids".into()));
                    }
                    shape
                }
                LayerSpec::GaussianNoise { std } => {
                    if !(std >= 0.0 && std.is_finite()) {
                        return Err(fail(format!("noise std {std} must be finite and ≥ 0")));
                    }
                    if matches!(shape, Shape::Tokens(_)) {
                        return Err(fail("noise cannot act on token ids".into()));
                    }
                    shape
                }
                LayerSpec::Flatten => match shape {
                    Shape::Seq { len, dim } => Shape::Flat(len * dim),
                    Shape::Flat(n) => Shape::Flat(n),
                    Shape::Tokens(_) => return Err(fail("cannot flatten token ids".into())),
                },
                LayerSpec::Softmax { classes } => {
                    if i + 1 != self.layers.len() {
                        return Err(fail("softmax must be the last layer".into()));
                    }
                    match shape {
                        Shape::Flat(n) if n == classes && classes >= 2 => shape,
                        other => {
                            return Err(fail(format!(
                                "softmax over {classes} classes needs a flat input of that size, got {other:?}"
                            )))
                        }
                    }
                }
            };
            shapes.push(shape);
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Softmax { .. })) {
            return Err(Error::Model("the last layer must be Softmax(K)".into()));
        }
        Ok(shapes)
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.layers.last() {
            Some(LayerSpec::Softmax { classes }) => Some(*classes),
            _ => None,
        }
    }
}

/// Ready-made desk-scale architectures.
pub mod presets {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
    pub struct Hyper {
        pub embedding_dim: usize,
        pub conv_filters: usize,
        pub kernel_width: usize,
        pub pool_size: usize,
        pub recurrent_units: usize,
        pub dense_units: usize,
        pub dropout: f64,
        pub noise_std: f64,
    }

    impl Default for Hyper {
        fn default() -> Self {
            Hyper {
                embedding_dim: 16,
                conv_filters: 16,
                kernel_width: 3,
                pool_size: 2,
                recurrent_units: 16,
                dense_units: 16,
                dropout: 0.2,
                noise_std: 0.1,
            }
        }
    }

    /// Embedding → Conv1D → Dropout → MaxPool → LSTM → Noise → Dense → Softmax.
    pub fn conv_lstm(max_len: usize, classes: usize, h: &Hyper) -> ModelSpec {
        ModelSpec {
            input: InputSpec::Tokens { max_len },
            layers: vec![
                LayerSpec::Embedding { dim: h.embedding_dim },
                LayerSpec::Conv1D {
                    filters: h.conv_filters,
                    width: h.kernel_width,
                    activation: Activation::Relu,
                },
                LayerSpec::Dropout { rate: h.dropout },
                LayerSpec::MaxPool1D { size: h.pool_size },
                LayerSpec::Recurrent {
                    units: h.recurrent_units,
                    return_sequences: false,
                },
                LayerSpec::GaussianNoise { std: h.noise_std },
                LayerSpec::Dense {
                    units: classes,
                    activation: Activation::Linear,
                },
                LayerSpec::Softmax { classes },
            ],
        }
    }

    /// Embedding → Conv1D → MaxPool → Flatten → Dense → Dropout → Dense → Softmax.
    pub fn cnn(max_len: usize, classes: usize, h: &Hyper) -> ModelSpec {
        ModelSpec {
            input: InputSpec::Tokens { max_len },
            layers: vec![
                LayerSpec::Embedding { dim: h.embedding_dim },
                LayerSpec::GaussianNoise { std: h.noise_std },
                LayerSpec::Conv1D {
                    filters: h.conv_filters,
                    width: h.kernel_width,
                    activation: Activation::Relu,
                },
                LayerSpec::MaxPool1D { size: h.pool_size },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: h.dense_units,
                    activation: Activation::Relu,
                },
                LayerSpec::Dropout { rate: h.dropout },
                LayerSpec::Dense {
                    units: classes,
                    activation: Activation::Linear,
                },
                LayerSpec::Softmax { classes },
            ],
        }
    }

    /// Embedding → BiLSTM → Dropout → Dense → Softmax.
    pub fn bilstm(max_len: usize, classes: usize, h: &Hyper) -> ModelSpec {
        ModelSpec {
            input: InputSpec::Tokens { max_len },
            layers: vec![
                LayerSpec::Embedding { dim: h.embedding_dim },
                LayerSpec::BiRecurrent {
                    units: h.recurrent_units,
                    return_sequences: false,
                },
                LayerSpec::Dropout { rate: h.dropout },
                LayerSpec::Dense {
                    units: classes,
                    activation: Activation::Linear,
                },
                LayerSpec::Softmax { classes },
            ],
        }
    }

    /// One dense layer plus softmax over flat features (softmax regression).
    pub fn softmax_regression(dim: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            input: InputSpec::Features { dim },
            layers: vec![
                LayerSpec::Dense {
                    units: classes,
                    activation: Activation::Linear,
                },
                LayerSpec::Softmax { classes },
            ],
        }
    }
}
