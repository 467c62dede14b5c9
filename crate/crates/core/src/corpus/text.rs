//! Tokenization and token-level cleanup rules.

use std::fmt;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

/// A pluggable token transform applied after all other rules.
pub type Stemmer = Arc<dyn Fn(&str) -> String + Send + Sync>;

#[derive(Clone, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Strip the `#` marker from hashtags, keeping the tag text.
    pub normalize_hashtags: bool,
    /// Drop emojis and `@mentions`, and collapse consecutive duplicate tokens.
    pub strip_emojis_mentions_duplicates: bool,
    pub lowercase: bool,
    #[serde(skip)]
    pub stemmer: Option<Stemmer>,
    pub min_df: usize,
    pub max_len: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            normalize_hashtags: true,
            strip_emojis_mentions_duplicates: true,
            lowercase: false,
            stemmer: None,
            min_df: 5,
            max_len: 100,
        }
    }
}

impl fmt::Debug for PreprocessConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PreprocessConfig")
            .field("normalize_hashtags", &self.normalize_hashtags)
            .field(
                "strip_emojis_mentions_duplicates",
                &self.strip_emojis_mentions_duplicates,
            )
            .field("lowercase", &self.lowercase)
            .field("stemmer", &self.stemmer.as_ref().map(|_| "<fn>"))
            .field("min_df", &self.min_df)
            .field("max_len", &self.max_len)
            .finish()
    }
}

fn token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // Words are runs of letters, combining marks, digits and underscores
        // (optionally led by # or @). An emoji sequence is one token. Every
        // other character (whitespace, punctuation, symbols) separates.
        Regex::new(concat!(
            r"[#@]?[[\p{L}\p{M}\p{N}_]&&[^\x{FE0E}\x{FE0F}\x{200D}]]+",
            r"|\p{Extended_Pictographic}[\x{FE0F}\x{200D}\x{1F3FB}-\x{1F3FF}\p{Extended_Pictographic}]*",
        ))
        .expect("static regex")
    })
}

fn is_emoji(token: &str) -> bool {
    token.chars().next().is_some_and(|c| {
        !(c.is_alphanumeric() || c == '_' || c == '#' || c == '@')
    })
}

/// Splits on whitespace and unicode punctuation. Hashtag and mention
/// markers stay attached to their word.
pub fn tokenize(raw: &str) -> Vec<String> {
    token_regex()
        .find_iter(raw)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Applies the cleanup rules to already tokenized text. Each surviving token
/// is returned with its position in `tokens`.
pub fn preprocess_tokens(tokens: &[String], config: &PreprocessConfig) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::with_capacity(tokens.len());
    for (pos, tok) in tokens.iter().enumerate() {
        let mut tok = tok.as_str();
        if config.strip_emojis_mentions_duplicates && (tok.starts_with('@') || is_emoji(tok)) {
            continue;
        }
        if config.normalize_hashtags {
            tok = tok.trim_start_matches('#');
        }
        if tok.is_empty() {
            continue;
        }
        let tok = if config.lowercase {
            tok.to_lowercase()
        } else {
            tok.to_string()
        };
        if config.strip_emojis_mentions_duplicates
            && out.last().is_some_and(|(prev, _)| *prev == tok)
        {
            continue;
        }
        out.push((tok, pos));
    }
    if let Some(stem) = &config.stemmer {
        for (tok, _) in &mut out {
            *tok = stem(tok);
        }
    }
    out
}

/// Tokenizes `raw` and applies the cleanup rules.
pub fn preprocess(raw: &str, config: &PreprocessConfig) -> Vec<String> {
    preprocess_tokens(&tokenize(raw), config)
        .into_iter()
        .map(|(t, _)| t)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> PreprocessConfig {
        PreprocessConfig::default()
    }

    #[test]
    fn hashtags_mentions_duplicates() {
        assert_eq!(preprocess("#justice now now @user", &cfg()), vec!["justice", "now"]);
    }

    #[test]
    fn only_emojis_yields_nothing() {
        assert!(preprocess("😀 ❤️ 🙏🏽", &cfg()).is_empty());
    }

    #[test]
    fn lowercase_then_collapse() {
        let c = PreprocessConfig {
            lowercase: true,
            ..cfg()
        };
        assert_eq!(preprocess("He SAID said", &c), vec!["he", "said"]);
    }

    #[test]
    fn flags_off_keep_everything() {
        let c = PreprocessConfig {
            normalize_hashtags: false,
            strip_emojis_mentions_duplicates: false,
            ..cfg()
        };
        assert_eq!(
            preprocess("#tag x x @u 😀", &c),
            vec!["#tag", "x", "x", "@u", "😀"]
        );
    }

    #[test]
    fn stemmer_runs_last() {
        let c = PreprocessConfig {
            stemmer: Some(Arc::new(|t: &str| t.trim_end_matches('s').to_string())),
            ..cfg()
        };
        // Duplicates are compared before stemming.
        assert_eq!(preprocess("cats cat", &c), vec!["cat", "cat"]);
    }

    #[test]
    fn bengali_words_survive_with_marks() {
        let toks = tokenize("আমি বাংলায় গান গাই।");
        assert_eq!(toks.len(), 4);
        assert_eq!(toks[1], "বাংলায়");
    }

    #[test]
    fn origins_point_into_input() {
        let tokens = tokenize("@a x x #y");
        let kept = preprocess_tokens(&tokens, &cfg());
        assert_eq!(kept, vec![("x".to_string(), 1), ("y".to_string(), 3)]);
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(
            words in proptest::collection::vec(
                prop_oneof![
                    "[a-cA-C]{1,3}",
                    "#[a-c]{1,3}",
                    "@[a-c]{1,2}",
                    Just("😀".to_string()),
                    Just("!!".to_string()),
                    Just("বাংলা".to_string()),
                ],
                0..12,
            ),
            lowercase in any::<bool>(),
            hashtags in any::<bool>(),
            strip in any::<bool>(),
        ) {
            let c = PreprocessConfig {
                lowercase,
                normalize_hashtags: hashtags,
                strip_emojis_mentions_duplicates: strip,
                ..cfg()
            };
            let once = preprocess(&words.join(" "), &c);
            let twice = preprocess(&once.join(" "), &c);
            prop_assert_eq!(once, twice);
        }
    }
}
