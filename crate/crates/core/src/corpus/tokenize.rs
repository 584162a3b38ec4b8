//! Unicode-aware tokenization shared by the topic model and the captioner.
//!
//! Tokens are maximal runs of alphabetic characters. Lowercasing happens
//! before the stopword filter, so a lowercase stopword list covers every
//! surface form when `lowercase` is on.

use std::collections::BTreeSet;
use std::num::NonZeroUsize;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default English stopword list shipped with the crate.
pub const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub stopwords: BTreeSet<String>,
    pub min_token_len: NonZeroUsize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            stopwords: parse_stopwords(DEFAULT_STOPWORDS),
            min_token_len: NonZeroUsize::new(2).unwrap(),
        }
    }
}

impl TokenizerConfig {
    /// Replace the stopword list with one loaded from a UTF-8 file,
    /// one token per line.
    pub fn with_stopword_file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.stopwords = parse_stopwords(&text);
        Ok(self)
    }
}

fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Split `text` into alphabetic-run tokens, lowercased if configured,
/// with stopwords and short tokens removed. Deterministic; empty input
/// yields an empty list.
///
/// Lowercasing is applied to the whole text before splitting, so tokens
/// are always alphabetic runs of the emitted form (some characters
/// lowercase to sequences containing combining marks, which then act as
/// separators).
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    let min_len = config.min_token_len.get();
    let lowered;
    let text = if config.lowercase {
        lowered = text.to_lowercase();
        &lowered
    } else {
        text
    };
    text.split(|c: char| !c.is_alphabetic())
        .filter(|run| !run.is_empty())
        .filter(|token| token.chars().count() >= min_len)
        .filter(|token| !config.stopwords.contains(*token))
        .map(str::to_owned)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_stopwords_and_punctuation() {
        let config = TokenizerConfig::default();
        assert_eq!(
            tokenize("The Bellagio fountains!", &config),
            ["bellagio", "fountains"]
        );
    }

    #[test]
    fn empty_input_gives_empty_list() {
        assert_eq!(tokenize("", &TokenizerConfig::default()), Vec::<String>::new());
    }

    #[test]
    fn duplicates_are_retained() {
        let config = TokenizerConfig::default();
        assert_eq!(
            tokenize("French onion SOUP soup", &config),
            ["french", "onion", "soup", "soup"]
        );
    }

    #[test]
    fn numbers_split_tokens() {
        let config = TokenizerConfig::default();
        assert_eq!(tokenize("best24hours diner", &config), ["best", "hours", "diner"]);
    }

    #[test]
    fn min_token_len_filters_short_runs() {
        let mut config = TokenizerConfig::default();
        config.min_token_len = NonZeroUsize::new(5).unwrap();
        assert_eq!(tokenize("tiny enormous word", &config), ["enormous"]);
    }

    proptest! {
        // tokenize is idempotent on its own space-joined output when
        // lowercasing is on.
        #[test]
        fn idempotent_on_own_output(text in "\\PC{0,120}") {
            let config = TokenizerConfig::default();
            let once = tokenize(&text, &config);
            let twice = tokenize(&once.join(" "), &config);
            prop_assert_eq!(once, twice);
        }
    }
}
