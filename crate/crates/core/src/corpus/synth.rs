//! Planted-token corpora: every document carries at least one indicator
//! token of its class inside class-independent noise, and the indicator
//! positions are recorded as the gold rationale.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Document, HateClass, LabeledCorpus};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub class_names: Vec<String>,
    pub docs_per_class: usize,
    /// Indicator tokens per class; sets must be pairwise disjoint.
    pub planted: Vec<Vec<String>>,
    /// Size of the shared noise vocabulary.
    pub vocab_size: usize,
    /// Noise tokens per document.
    pub noise_len: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// `classes` classes named after [`HateClass`] when there are four,
    /// `class0..` otherwise, with planted tokens `<class><i>`.
    pub fn new(
        classes: usize,
        docs_per_class: usize,
        planted_per_class: usize,
        vocab_size: usize,
        noise_len: usize,
        seed: u64,
    ) -> Self {
        let class_names: Vec<String> = if classes == 4 {
            HateClass::names()
        } else {
            (0..classes).map(|c| format!("class{c}")).collect()
        };
        let planted = class_names
            .iter()
            .map(|name| (0..planted_per_class).map(|i| format!("{name}{i}")).collect())
            .collect();
        SynthSpec {
            class_names,
            docs_per_class,
            planted,
            vocab_size,
            noise_len,
            seed,
        }
    }

    pub fn noise_token(i: usize) -> String {
        format!("w{i:04}")
    }

    fn validate(&self) -> Result<()> {
        let k = self.class_names.len();
        if k < 2 {
            return Err(Error::SynthSpec(format!("need at least 2 classes, got {k}")));
        }
        if self.planted.len() != k {
            return Err(Error::SynthSpec(format!(
                "{} planted-token sets for {k} classes",
                self.planted.len()
            )));
        }
        if self.docs_per_class == 0 {
            return Err(Error::SynthSpec("docs_per_class must be positive".into()));
        }
        if self.noise_len > 0 && self.vocab_size == 0 {
            return Err(Error::SynthSpec("noise requires a non-empty vocabulary".into()));
        }
        let noise: HashSet<String> = (0..self.vocab_size).map(Self::noise_token).collect();
        let mut seen: HashSet<&str> = HashSet::new();
        for (c, set) in self.planted.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::SynthSpec(format!(
                    "class {} has no planted token",
                    self.class_names[c]
                )));
            }
            for tok in set {
                if !seen.insert(tok) {
                    return Err(Error::SynthSpec(format!(
                        "planted token {tok:?} is shared between classes"
                    )));
                }
                if noise.contains(tok) || super::tokenize(tok) != [tok.clone()] {
                    return Err(Error::SynthSpec(format!(
                        "planted token {tok:?} collides with noise or is not a single word"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generates a planted-token corpus. Identical specs yield identical corpora.
pub fn synth_corpus(spec: &SynthSpec) -> Result<LabeledCorpus> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let mut docs: Vec<(usize, Vec<String>, BTreeSet<usize>)> = Vec::new();
    for (class, planted) in spec.planted.iter().enumerate() {
        for _ in 0..spec.docs_per_class {
            let mut slots: Vec<(String, bool)> = (0..spec.noise_len)
                .map(|_| (SynthSpec::noise_token(rng.random_range(0..spec.vocab_size)), false))
                .collect();
            let m = rng.random_range(1..=planted.len());
            let chosen: Vec<&String> = planted.choose_multiple(&mut rng, m).collect();
            for tok in chosen {
                let at = rng.random_range(0..=slots.len());
                slots.insert(at, (tok.clone(), true));
            }
            let rationale = slots
                .iter()
                .enumerate()
                .filter(|(_, (_, p))| *p)
                .map(|(i, _)| i)
                .collect();
            docs.push((class, slots.into_iter().map(|(t, _)| t).collect(), rationale));
        }
    }
    docs.shuffle(&mut rng);
    let documents = docs
        .into_iter()
        .enumerate()
        .map(|(i, (label, tokens, rationale))| {
            let mut doc = Document::from_tokens(format!("syn{i:05}"), tokens, label);
            doc.gold_rationale = Some(rationale);
            doc
        })
        .collect();
    LabeledCorpus::new(
        documents,
        spec.class_names.clone(),
        format!(
            "synthetic K={} per_class={} noise_len={} vocab={} seed={}",
            spec.class_names.len(),
            spec.docs_per_class,
            spec.noise_len,
            spec.vocab_size,
            spec.seed
        ),
    )
}
