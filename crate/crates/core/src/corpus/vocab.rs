//! Vocabulary construction with a reproducible term ordering.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered term dictionary with per-term document frequencies.
///
/// Terms are sorted by descending document frequency, ties broken
/// lexicographically, so indices are stable across runs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: Vec<String>,
    doc_freq: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build a vocabulary from tokenized documents, excluding terms that
    /// appear in fewer than `min_doc_count` documents. An empty corpus
    /// yields an empty vocabulary.
    pub fn build(documents: &[Vec<String>], min_doc_count: usize) -> Result<Vocabulary> {
        if min_doc_count < 1 {
            return Err(Error::invalid("min_doc_count must be >= 1"));
        }
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in documents {
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for term in seen {
                *df.entry(term).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = df
            .into_iter()
            .filter(|&(_, count)| count >= min_doc_count)
            .collect();
        entries.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut vocab = Vocabulary {
            terms: entries.iter().map(|(t, _)| (*t).to_owned()).collect(),
            doc_freq: entries.iter().map(|&(_, c)| c).collect(),
            index: HashMap::new(),
        };
        vocab.rebuild_index();
        Ok(vocab)
    }

    /// Rebuild the term -> index table; needed after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, index: usize) -> Option<&str> {
        self.terms.get(index).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn doc_frequency(&self, index: usize) -> Option<usize> {
        self.doc_freq.get(index).copied()
    }

    /// Convert a token list into sparse (term index, count) pairs sorted
    /// by term index. Out-of-vocabulary tokens are dropped.
    pub fn doc_to_bow(&self, tokens: &[String]) -> Vec<(usize, f64)> {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for token in tokens {
            if let Some(idx) = self.index_of(token) {
                *counts.entry(idx).or_insert(0.0) += 1.0;
            }
        }
        let mut bow: Vec<(usize, f64)> = counts.into_iter().collect();
        bow.sort_unstable_by_key(|&(idx, _)| idx);
        bow
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(raw: &[&[&str]]) -> Vec<Vec<String>> {
        raw.iter()
            .map(|d| d.iter().map(|s| s.to_string()).collect())
            .collect()
    }

    #[test]
    fn min_doc_count_excludes_rare_terms() {
        let d = docs(&[&["a", "b"], &["a", "c"]]);
        let vocab = Vocabulary::build(&d, 2).unwrap();
        assert_eq!(vocab.terms(), ["a"]);
    }

    #[test]
    fn ordering_is_frequency_then_lexicographic() {
        let d = docs(&[&["a", "b"], &["a", "c"]]);
        let vocab = Vocabulary::build(&d, 1).unwrap();
        assert_eq!(vocab.terms(), ["a", "b", "c"]);
        assert_eq!(vocab.index_of("c"), Some(2));
        assert_eq!(vocab.doc_frequency(0), Some(2));
    }

    #[test]
    fn empty_corpus_gives_empty_vocabulary() {
        let vocab = Vocabulary::build(&[], 1).unwrap();
        assert!(vocab.is_empty());
    }

    #[test]
    fn duplicate_tokens_in_one_doc_count_once() {
        let d = docs(&[&["x", "x", "x"], &["y"]]);
        let vocab = Vocabulary::build(&d, 2).unwrap();
        assert!(vocab.is_empty());
    }

    #[test]
    fn bow_counts_and_sorts_by_index() {
        let d = docs(&[&["a", "b"], &["a", "c"]]);
        let vocab = Vocabulary::build(&d, 1).unwrap();
        let tokens: Vec<String> = ["c", "a", "c", "zzz"].iter().map(|s| s.to_string()).collect();
        assert_eq!(vocab.doc_to_bow(&tokens), vec![(0, 1.0), (2, 2.0)]);
    }

    // Oracle: brute-force document-frequency counting over a planted
    // Zipf-like corpus must reproduce the vocabulary order exactly.
    #[test]
    fn order_matches_counting_oracle_on_planted_corpus() {
        let n_terms = 40;
        let mut documents: Vec<Vec<String>> = Vec::new();
        for doc_id in 0..100usize {
            let mut doc = Vec::new();
            for term_id in 0..n_terms {
                // term t appears in documents where doc_id % (t + 1) == 0,
                // giving a planted descending frequency profile.
                if doc_id % (term_id + 1) == 0 {
                    doc.push(format!("term{term_id:02}"));
                }
            }
            documents.push(doc);
        }
        let vocab = Vocabulary::build(&documents, 1).unwrap();

        // Independent count: for each term, scan every document.
        let mut expected: Vec<(String, usize)> = (0..n_terms)
            .map(|t| {
                let name = format!("term{t:02}");
                let df = documents.iter().filter(|d| d.contains(&name)).count();
                (name, df)
            })
            .collect();
        expected.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let got: Vec<(String, usize)> = vocab
            .terms()
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), vocab.doc_frequency(i).unwrap()))
            .collect();
        assert_eq!(got, expected);
    }
}
