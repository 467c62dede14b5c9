//! Self-contained HTML heat maps of token relevance.

use std::fmt::Write as _;
use std::path::Path;

use super::RelevanceMap;
use crate::corpus::Document;
use crate::error::{Error, Result};

const WARM: &str = "220, 38, 38";
const COOL: &str = "37, 99, 235";

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Renders `doc` with each scored token on a background of opacity
/// `|R| / max|R|`: warm for positive scores, cool for negative ones. When
/// every score is zero the text is left unhighlighted.
pub fn render_heatmap(doc: &Document, rel: &RelevanceMap) -> Result<String> {
    if rel.doc_id != doc.id {
        return Err(Error::Parameter(format!(
            "relevance map of {:?} does not belong to document {:?}",
            rel.doc_id, doc.id
        )));
    }
    let max = rel.tokens.iter().map(|t| t.score.abs()).fold(0.0, f64::max);
    let class = rel.class_name.clone().unwrap_or_else(|| rel.class.to_string());
    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    let _ = writeln!(html, "<title>{} · {}</title>", escape(&doc.id), rel.method.name());
    html.push_str(
        "<style>\nbody { font-family: sans-serif; line-height: 2; max-width: 48em; margin: 2em auto; }\n\
         .tok { padding: 0.1em 0.2em; border-radius: 0.2em; }\n\
         .legend { font-size: 0.9em; color: #444; margin-bottom: 1em; }\n</style>\n</head>\n<body>\n",
    );
    let _ = writeln!(
        html,
        "<div class=\"legend\">document <b>{}</b> · class <b>{}</b> · method <b>{}</b> · \
         <span class=\"tok\" style=\"background-color: rgba({WARM}, 1)\">positive</span> \
         <span class=\"tok\" style=\"background-color: rgba({COOL}, 1)\">negative</span> · \
         opacity = |R| / {}</div>",
        escape(&doc.id),
        escape(&class),
        rel.method.name(),
        max
    );
    html.push_str("<p>");
    for (pos, token) in doc.tokens.iter().enumerate() {
        if pos > 0 {
            html.push(' ');
        }
        let score = rel.tokens.iter().find(|t| t.pos == pos).map_or(0.0, |t| t.score);
        if max > 0.0 && score != 0.0 {
            let opacity = score.abs() / max;
            let hue = if score > 0.0 { WARM } else { COOL };
            let _ = write!(
                html,
                "<span class=\"tok\" data-score=\"{score}\" style=\"background-color: rgba({hue}, {opacity})\">{}</span>",
                escape(token)
            );
        } else {
            html.push_str(&escape(token));
        }
    }
    html.push_str("</p>\n</body>\n</html>\n");
    Ok(html)
}

pub fn write_heatmap(doc: &Document, rel: &RelevanceMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_heatmap(doc, rel)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{Method, TokenScore};

    fn doc() -> Document {
        Document::from_tokens("d<1>", vec!["a".into(), "b&c".into(), "d".into()], 0)
    }

    fn rel(scores: &[f64]) -> RelevanceMap {
        RelevanceMap {
            doc_id: "d<1>".into(),
            class: 2,
            class_name: Some("religious".into()),
            method: Method::Lrp,
            tokens: scores
                .iter()
                .enumerate()
                .map(|(pos, &score)| TokenScore {
                    pos,
                    token: doc().tokens[pos].clone(),
                    score,
                })
                .collect(),
            total: scores.iter().sum(),
        }
    }

    #[test]
    fn all_zero_scores_render_plain_text() {
        let html = render_heatmap(&doc(), &rel(&[0.0, 0.0, 0.0])).unwrap();
        assert!(html.starts_with("<!DOCTYPE html>"));
        assert!(html.contains("<p>a b&amp;c d</p>"));
        assert!(!html.contains("data-score"));
    }

    #[test]
    fn dominant_token_has_full_opacity() {
        let html = render_heatmap(&doc(), &rel(&[0.5, 4.0, 1.0])).unwrap();
        assert!(html.contains(&format!("rgba({WARM}, 1)\">b&amp;c")));
        assert!(html.contains(&format!("rgba({WARM}, 0.125)\">a")));
        assert!(html.contains("religious") && html.contains("lrp"));
    }

    #[test]
    fn mixed_signs_use_both_hues() {
        let html = render_heatmap(&doc(), &rel(&[2.0, -1.0, 0.0])).unwrap();
        assert!(html.contains(&format!("rgba({WARM}, 1)\">a")));
        assert!(html.contains(&format!("rgba({COOL}, 0.5)\">b&amp;c")));
    }

    #[test]
    fn foreign_map_is_rejected() {
        let mut r = rel(&[1.0, 0.0, 0.0]);
        r.doc_id = "other".into();
        assert!(render_heatmap(&doc(), &r).is_err());
    }
}
