//! End-to-end text classifiers: feature extraction plus a trained model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{fit_length, LabeledCorpus};
use crate::error::{Error, Result};
use crate::features::{EmbeddingTable, SparseVector, TfIdfConfig, TfIdfModel, Vocabulary, UNK_INDEX};
use crate::metrics::MetricsReport;
use crate::network::{
    argmax, presets, train, Layer, ModelGraph, ModelInput, NaiveBayes, TrainConfig, TrainHistory,
};

/// Anything that maps a token sequence to a class distribution.
pub trait TextClassifier {
    fn num_classes(&self) -> usize;

    fn predict_proba(&self, tokens: &[String]) -> Result<Vec<f64>>;

    fn predict(&self, tokens: &[String]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(tokens)?))
    }
}

/// Token ids through a vocabulary into a sequence model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceClassifier {
    pub vocab: Vocabulary,
    pub model: ModelGraph,
}

impl SequenceClassifier {
    pub fn new(vocab: Vocabulary, model: ModelGraph) -> Result<Self> {
        match model.max_len() {
            Some(_) if model.vocab_size() == vocab.len() => Ok(SequenceClassifier { vocab, model }),
            Some(_) => Err(Error::Model(format!(
                "model embeds {} tokens but the vocabulary has {}",
                model.vocab_size(),
                vocab.len()
            ))),
            None => Err(Error::Model("sequence classifier needs a token model".into())),
        }
    }

    pub fn max_len(&self) -> usize {
        self.model.max_len().expect("checked at construction")
    }

    pub fn encode(&self, tokens: &[String]) -> ModelInput {
        ModelInput::Tokens(self.vocab.encode_fitted(tokens, self.max_len()))
    }

    /// Positions of `tokens` that reach the model (the rest is truncated).
    pub fn visible_len(&self, tokens: &[String]) -> usize {
        fit_length(tokens, self.max_len()).real_len()
    }
}

impl TextClassifier for SequenceClassifier {
    fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    fn predict_proba(&self, tokens: &[String]) -> Result<Vec<f64>> {
        Ok(self.model.predict(&self.encode(tokens))?.probs)
    }
}

/// TF-IDF vectors into a flat model (softmax regression).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureClassifier {
    pub tfidf: TfIdfModel,
    pub model: ModelGraph,
}

impl FeatureClassifier {
    pub fn encode(&self, tokens: &[String]) -> ModelInput {
        ModelInput::Sparse(pad_dim(self.tfidf.transform_tokens(tokens)))
    }
}

impl TextClassifier for FeatureClassifier {
    fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    fn predict_proba(&self, tokens: &[String]) -> Result<Vec<f64>> {
        Ok(self.model.predict(&self.encode(tokens))?.probs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesClassifier {
    pub tfidf: TfIdfModel,
    pub nb: NaiveBayes,
}

impl TextClassifier for NaiveBayesClassifier {
    fn num_classes(&self) -> usize {
        self.nb.num_classes()
    }

    fn predict_proba(&self, tokens: &[String]) -> Result<Vec<f64>> {
        Ok(self.nb.predict_proba(&self.tfidf.transform_tokens(tokens)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    Sequence(SequenceClassifier),
    SoftmaxRegression(FeatureClassifier),
    NaiveBayes(NaiveBayesClassifier),
}

impl Classifier {
    pub fn as_sequence(&self) -> Option<&SequenceClassifier> {
        match self {
            Classifier::Sequence(s) => Some(s),
            _ => None,
        }
    }

    /// Trained network, if the classifier has one.
    pub fn model(&self) -> Option<&ModelGraph> {
        match self {
            Classifier::Sequence(s) => Some(&s.model),
            Classifier::SoftmaxRegression(f) => Some(&f.model),
            Classifier::NaiveBayes(_) => None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl TextClassifier for Classifier {
    fn num_classes(&self) -> usize {
        match self {
            Classifier::Sequence(c) => c.num_classes(),
            Classifier::SoftmaxRegression(c) => c.num_classes(),
            Classifier::NaiveBayes(c) => c.num_classes(),
        }
    }

    fn predict_proba(&self, tokens: &[String]) -> Result<Vec<f64>> {
        match self {
            Classifier::Sequence(c) => c.predict_proba(tokens),
            Classifier::SoftmaxRegression(c) => c.predict_proba(tokens),
            Classifier::NaiveBayes(c) => c.predict_proba(tokens),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    ConvLstm,
    Cnn,
    BiLstm,
    SoftmaxRegression,
    NaiveBayes,
}

impl Architecture {
    pub fn is_sequence(self) -> bool {
        matches!(self, Architecture::ConvLstm | Architecture::Cnn | Architecture::BiLstm)
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::ConvLstm => "conv_lstm",
            Architecture::Cnn => "cnn",
            Architecture::BiLstm => "bi_lstm",
            Architecture::SoftmaxRegression => "softmax_regression",
            Architecture::NaiveBayes => "naive_bayes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub architecture: Architecture,
    pub hyper: presets::Hyper,
    pub max_len: usize,
    /// Cap on vocabulary entries besides the specials.
    pub max_vocab: usize,
    pub tfidf: TfIdfConfig,
    pub train: TrainConfig,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            architecture: Architecture::ConvLstm,
            hyper: presets::Hyper::default(),
            max_len: 100,
            max_vocab: 20_000,
            tfidf: TfIdfConfig::default(),
            train: TrainConfig::default(),
            init_seed: 0,
        }
    }
}

/// Fits a classifier on `corpus`. Naive Bayes has no training history.
pub fn fit_classifier(corpus: &LabeledCorpus, config: &ClassifierConfig) -> Result<(Classifier, TrainHistory)> {
    fit_classifier_with(corpus, config, None)
}

/// [`fit_classifier`] with pretrained vectors for the embedding layer of a
/// sequence model. Vocabulary tokens missing from `embeddings` keep their
/// random initialization.
pub fn fit_classifier_with(
    corpus: &LabeledCorpus,
    config: &ClassifierConfig,
    embeddings: Option<&EmbeddingTable>,
) -> Result<(Classifier, TrainHistory)> {
    if embeddings.is_some() && !config.architecture.is_sequence() {
        return Err(Error::Parameter(format!(
            "pretrained embeddings need a sequence model, not {}",
            config.architecture.name()
        )));
    }
    if corpus.is_empty() {
        return Err(Error::NoDocuments);
    }
    let k = corpus.num_classes();
    let labels = corpus.labels();
    match config.architecture {
        Architecture::ConvLstm | Architecture::Cnn | Architecture::BiLstm => {
            let vocab = Vocabulary::build(corpus, config.max_vocab)?;
            let spec = match config.architecture {
                Architecture::ConvLstm => presets::conv_lstm(config.max_len, k, &config.hyper),
                Architecture::Cnn => presets::cnn(config.max_len, k, &config.hyper),
                _ => presets::bilstm(config.max_len, k, &config.hyper),
            };
            let mut model = ModelGraph::build(&spec, vocab.len(), k, config.init_seed)?;
            if let Some(table) = embeddings {
                load_embeddings(&mut model, &vocab, table)?;
            }
            let mut clf = SequenceClassifier::new(vocab, model)?;
            let inputs: Vec<ModelInput> = corpus.documents.iter().map(|d| clf.encode(&d.tokens)).collect();
            let history = train(&mut clf.model, &inputs, &labels, &config.train)?;
            Ok((Classifier::Sequence(clf), history))
        }
        Architecture::SoftmaxRegression => {
            let tfidf = TfIdfModel::fit(corpus, config.tfidf)?;
            let spec = presets::softmax_regression(tfidf.dim().max(1), k);
            let mut model = ModelGraph::build(&spec, 0, k, config.init_seed)?;
            let inputs: Vec<ModelInput> = corpus
                .documents
                .iter()
                .map(|d| ModelInput::Sparse(pad_dim(tfidf.transform(d))))
                .collect();
            let history = train(&mut model, &inputs, &labels, &config.train)?;
            Ok((Classifier::SoftmaxRegression(FeatureClassifier { tfidf, model }), history))
        }
        Architecture::NaiveBayes => {
            let tfidf = TfIdfModel::fit(corpus, config.tfidf)?;
            let xs: Vec<SparseVector> = corpus.documents.iter().map(|d| tfidf.transform(d)).collect();
            let nb = NaiveBayes::fit(&xs, &labels, k, 1.0)?;
            Ok((
                Classifier::NaiveBayes(NaiveBayesClassifier { tfidf, nb }),
                TrainHistory::default(),
            ))
        }
    }
}

fn load_embeddings(model: &mut ModelGraph, vocab: &Vocabulary, table: &EmbeddingTable) -> Result<()> {
    let Some(Layer::Embedding { table: weights }) = model.layers_mut().first_mut() else {
        return Err(Error::Parameter("model has no embedding layer".into()));
    };
    if weights.cols() != table.dim() {
        return Err(Error::Parameter(format!(
            "embedding file has dimension {}, the model expects {}",
            table.dim(),
            weights.cols()
        )));
    }
    for (i, tok) in vocab.tokens().iter().enumerate().skip(UNK_INDEX + 1) {
        if let Some(v) = table.get(tok) {
            weights.row_mut(i).copy_from_slice(v);
        }
    }
    Ok(())
}

fn pad_dim(mut v: SparseVector) -> SparseVector {
    v.dim = v.dim.max(1);
    v
}

/// Predicted labels and the metrics report of `classifier` on `corpus`.
pub fn evaluate(classifier: &dyn TextClassifier, corpus: &LabeledCorpus) -> Result<(Vec<usize>, MetricsReport)> {
    let predicted = corpus
        .documents
        .iter()
        .map(|d| classifier.predict(&d.tokens))
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport::from_labels(&corpus.labels(), &predicted, &corpus.class_names)?;
    Ok((predicted, report))
}
