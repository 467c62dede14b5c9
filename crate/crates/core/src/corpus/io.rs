//! CSV corpus reading and writing.
//!
//! Required columns are `id`, `text` and `label`; an optional `rationale`
//! column holds semicolon-separated token positions (relative to
//! [`tokenize`](super::tokenize) of the text).

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Document, LabeledCorpus};
use crate::error::{Error, Result};

/// Column mapping for corpus CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSchema {
    pub id_column: String,
    pub text_column: String,
    pub label_column: String,
    pub rationale_column: String,
    /// Fixed class list. When `None`, classes are inferred from the labels:
    /// integer labels are used as indices, otherwise distinct names are
    /// sorted.
    pub classes: Option<Vec<String>>,
}

impl Default for CorpusSchema {
    fn default() -> Self {
        CorpusSchema {
            id_column: "id".into(),
            text_column: "text".into(),
            label_column: "label".into(),
            rationale_column: "rationale".into(),
            classes: None,
        }
    }
}

impl CorpusSchema {
    pub fn with_classes(classes: Vec<String>) -> Self {
        CorpusSchema {
            classes: Some(classes),
            ..Default::default()
        }
    }
}

struct Row {
    id: String,
    text: String,
    label: String,
    rationale: Option<String>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
}

fn resolve_classes(rows: &[Row], schema: &CorpusSchema) -> Result<(Vec<String>, HashMap<String, usize>)> {
    if let Some(classes) = &schema.classes {
        let index = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect::<HashMap<_, _>>();
        for row in rows {
            if !index.contains_key(&row.label) {
                return Err(Error::Label {
                    row_id: row.id.clone(),
                    label: row.label.clone(),
                });
            }
        }
        return Ok((classes.clone(), index));
    }
    let numeric: Option<Vec<usize>> = rows.iter().map(|r| r.label.parse().ok()).collect();
    if let Some(values) = numeric {
        let k = values.iter().max().map_or(0, |m| m + 1);
        let names: Vec<String> = (0..k).map(|i| i.to_string()).collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        return Ok((names, index));
    }
    let names: BTreeSet<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    let names: Vec<String> = names.into_iter().map(String::from).collect();
    let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    Ok((names, index))
}

fn parse_rationale(spec: &str, row_id: &str) -> Result<BTreeSet<usize>> {
    spec.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>().map_err(|_| {
                Error::Corpus(format!("row {row_id}: bad rationale position {s:?}"))
            })
        })
        .collect()
}

/// Reads a corpus from any CSV source. Documents keep input order.
pub fn read_corpus(reader: impl Read, schema: &CorpusSchema, provenance: &str) -> Result<LabeledCorpus> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, &schema.id_column)?;
    let text_col = column(&headers, &schema.text_column)?;
    let label_col = column(&headers, &schema.label_column)?;
    let rationale_col = headers
        .iter()
        .position(|h| h.trim() == schema.rationale_column);

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        rows.push(Row {
            id: field(id_col),
            text: field(text_col),
            label: field(label_col).trim().to_string(),
            rationale: rationale_col.map(field).filter(|s| !s.trim().is_empty()),
        });
    }
    if rows.is_empty() {
        return Err(Error::NoDocuments);
    }
    let (class_names, index) = resolve_classes(&rows, schema)?;
    let mut documents = Vec::with_capacity(rows.len());
    for row in rows {
        let mut doc = Document::new(row.id.clone(), row.text, index[&row.label]);
        if let Some(spec) = row.rationale {
            doc.gold_rationale = Some(parse_rationale(&spec, &row.id)?);
        }
        documents.push(doc);
    }
    LabeledCorpus::new(documents, class_names, provenance)
}

pub fn load_corpus(path: impl AsRef<Path>, schema: &CorpusSchema) -> Result<LabeledCorpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(file, schema, &path.display().to_string())
}

/// Writes `id,text,label,rationale` rows. The text column is the
/// space-joined token list so positions stay valid on reload.
pub fn write_corpus(corpus: &LabeledCorpus, writer: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["id", "text", "label", "rationale"])?;
    for doc in &corpus.documents {
        let rationale = doc
            .gold_rationale
            .as_ref()
            .map(|r| {
                r.iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(";")
            })
            .unwrap_or_default();
        wtr.write_record([
            doc.id.as_str(),
            &doc.tokens.join(" "),
            corpus.class_names[doc.label].as_str(),
            &rationale,
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
