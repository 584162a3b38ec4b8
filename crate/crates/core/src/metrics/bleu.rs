//! Corpus BLEU with modified n-gram precision and no brevity penalty,
//! plus the confidence-threshold curve over scored captions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::captioner::CaptionCandidate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    /// Highest n-gram order scored.
    pub max_n: usize,
    /// Per-order weights on the log precisions; must sum to 1.
    pub weights: Vec<f64>,
}

impl BleuConfig {
    /// Uniform 1/n weights over orders 1..=n.
    pub fn uniform(max_n: usize) -> BleuConfig {
        BleuConfig {
            max_n,
            weights: vec![1.0 / max_n as f64; max_n],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_n < 1 {
            return Err(Error::invalid("max_n must be >= 1"));
        }
        if self.weights.len() != self.max_n {
            return Err(Error::invalid(format!(
                "expected {} weights, got {}",
                self.max_n,
                self.weights.len()
            )));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("weights must sum to 1 (got {sum})")));
        }
        Ok(())
    }
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig::uniform(4)
    }
}

/// Corpus score plus the per-order modified precisions that produced it.
/// When any precision is zero the geometric mean is reported as 0; the
/// exposed precisions let callers fall back to a lower order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: Vec<f64>,
}

/// Pooled clipped / total candidate n-gram counts per order 1..=max_n.
/// Integer counts make the result exactly invariant under reordering of
/// the (candidate, references) pairs.
fn ngram_stats(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    max_n: usize,
) -> Vec<(u64, u64)> {
    let mut stats = vec![(0u64, 0u64); max_n];
    for (candidate, refs) in candidates.iter().zip(references) {
        for n in 1..=max_n {
            let cand_counts = count_ngrams(candidate, n);
            let total: u64 = cand_counts.values().sum();
            let mut clipped = 0u64;
            if total > 0 {
                // Clip each candidate n-gram by its max count over the
                // references for this candidate.
                let mut ref_max: HashMap<&[String], u64> = HashMap::new();
                for reference in refs {
                    for (gram, count) in count_ngrams(reference, n) {
                        let entry = ref_max.entry(gram).or_insert(0);
                        *entry = (*entry).max(count);
                    }
                }
                for (gram, count) in &cand_counts {
                    clipped += (*count).min(ref_max.get(gram).copied().unwrap_or(0));
                }
            }
            stats[n - 1].0 += clipped;
            stats[n - 1].1 += total;
        }
    }
    stats
}

fn count_ngrams(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn score_from_stats(stats: &[(u64, u64)], weights: &[f64]) -> BleuScore {
    let precisions: Vec<f64> = stats
        .iter()
        .map(|&(clipped, total)| {
            if total == 0 {
                0.0
            } else {
                clipped as f64 / total as f64
            }
        })
        .collect();
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        precisions
            .iter()
            .zip(weights)
            .map(|(p, w)| w * p.ln())
            .sum::<f64>()
            .exp()
    };
    BleuScore { score, precisions }
}

/// Corpus-level BLEU over tokenized candidates and their reference sets.
/// Modified n-gram precisions are pooled over the whole corpus; the
/// score is exp(sum_n w_n * ln p_n) with no brevity-penalty factor, so a
/// short candidate fully contained in its reference scores 1.0 at n=1.
pub fn corpus_bleu(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    config: &BleuConfig,
) -> Result<BleuScore> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(Error::EmptyInput("corpus_bleu needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} candidates vs {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if references.iter().any(Vec::is_empty) {
        return Err(Error::invalid("every candidate needs at least one reference"));
    }
    let stats = ngram_stats(candidates, references, config.max_n);
    Ok(score_from_stats(&stats, &config.weights))
}

/// A caption candidate with its confidence and optional reference, the
/// unit filtered by the confidence-threshold curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredCaption {
    pub candidate: CaptionCandidate,
    pub confidence: f64,
    pub reference: Option<Vec<String>>,
}

impl ScoredCaption {
    /// Score a candidate with the confidence metric and attach a
    /// reference for BLEU.
    pub fn score(candidate: CaptionCandidate, reference: Option<Vec<String>>) -> Result<ScoredCaption> {
        let confidence = super::caption_confidence(&candidate)?;
        Ok(ScoredCaption {
            candidate,
            confidence,
            reference,
        })
    }
}

/// One point of the confidence-threshold curve: BLEU-1..BLEU-max_n over
/// the captions whose confidence is at least `threshold`. `bleu` is None
/// when no caption survives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub count: usize,
    pub bleu: Option<Vec<f64>>,
}

/// Recompute corpus BLEU over the captions with confidence >= threshold,
/// for each threshold. The filter is inclusive so the threshold-0 point
/// always equals full-corpus BLEU bit for bit.
pub fn bleu_confidence_curve(
    scored: &[ScoredCaption],
    thresholds: &[f64],
    config: &BleuConfig,
) -> Result<Vec<CurvePoint>> {
    config.validate()?;
    if scored.is_empty() {
        return Err(Error::EmptyInput("curve needs at least one scored caption".into()));
    }
    for (i, s) in scored.iter().enumerate() {
        if s.reference.is_none() {
            return Err(Error::invalid(format!("scored caption {i} has no reference")));
        }
        if !(0.0..=1.0).contains(&s.confidence) {
            return Err(Error::invalid(format!(
                "scored caption {i} has confidence {} outside [0, 1]",
                s.confidence
            )));
        }
    }
    let mut points = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let survivors: Vec<&ScoredCaption> =
            scored.iter().filter(|s| s.confidence >= threshold).collect();
        if survivors.is_empty() {
            points.push(CurvePoint {
                threshold,
                count: 0,
                bleu: None,
            });
            continue;
        }
        let candidates: Vec<Vec<String>> =
            survivors.iter().map(|s| s.candidate.words.clone()).collect();
        let references: Vec<Vec<Vec<String>>> = survivors
            .iter()
            .map(|s| vec![s.reference.clone().unwrap()])
            .collect();
        let stats = ngram_stats(&candidates, &references, config.max_n);
        let bleu: Vec<f64> = (1..=config.max_n)
            .map(|n| score_from_stats(&stats[..n], &BleuConfig::uniform(n).weights).score)
            .collect();
        points.push(CurvePoint {
            threshold,
            count: survivors.len(),
            bleu: Some(bleu),
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captioner::PositionChoice;
    use crate::corpus::Label;
    use approx::assert_abs_diff_eq;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn perfect_match_scores_one() {
        let candidate = vec![toks(&["the", "cat", "sat"])];
        let references = vec![vec![toks(&["the", "cat", "sat"])]];
        for n in [1usize, 2] {
            let score = corpus_bleu(&candidate, &references, &BleuConfig::uniform(n)).unwrap();
            assert_abs_diff_eq!(score.score, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn no_brevity_penalty_for_short_candidates() {
        // Standard BLEU would multiply by exp(1 - 4/2) here.
        let candidate = vec![toks(&["a", "b"])];
        let references = vec![vec![toks(&["a", "b", "c", "d"])]];
        let score = corpus_bleu(&candidate, &references, &BleuConfig::uniform(1)).unwrap();
        assert_abs_diff_eq!(score.score, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn hand_counted_bigram_case() {
        // unigrams: a, b match, c does not -> 2/3; bigrams: "a b" matches,
        // "b c" does not -> 1/2; BLEU-2 = sqrt(2/3 * 1/2).
        let candidate = vec![toks(&["a", "b", "c"])];
        let references = vec![vec![toks(&["a", "b", "d"])]];
        let score = corpus_bleu(&candidate, &references, &BleuConfig::uniform(2)).unwrap();
        assert_abs_diff_eq!(score.score, (2.0f64 / 6.0).sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(score.score, 0.5774, epsilon = 1e-4);
        assert_abs_diff_eq!(score.precisions[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(score.precisions[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn clipping_caps_repeated_ngrams() {
        let candidate = vec![toks(&["the", "the", "the"])];
        let references = vec![vec![toks(&["the", "cat"])]];
        let score = corpus_bleu(&candidate, &references, &BleuConfig::uniform(1)).unwrap();
        assert_abs_diff_eq!(score.precisions[0], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_precision_reports_zero_score() {
        let candidate = vec![toks(&["x", "y"])];
        let references = vec![vec![toks(&["a", "b"])]];
        let score = corpus_bleu(&candidate, &references, &BleuConfig::uniform(2)).unwrap();
        assert_eq!(score.score, 0.0);
        assert_eq!(score.precisions, vec![0.0, 0.0]);
    }

    #[test]
    fn candidate_set_equal_to_reference_set_scores_one() {
        let candidates = vec![toks(&["good", "burger", "here"]), toks(&["cold", "beer"])];
        let references: Vec<Vec<Vec<String>>> =
            candidates.iter().map(|c| vec![c.clone()]).collect();
        // up to the shortest sentence length (2)
        for n in 1..=2 {
            let score = corpus_bleu(&candidates, &references, &BleuConfig::uniform(n)).unwrap();
            assert_abs_diff_eq!(score.score, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn permutation_invariance_on_random_pairs() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let vocab = ["a", "b", "c", "d", "e", "f"];
        let mut pairs: Vec<(Vec<String>, Vec<Vec<String>>)> = (0..100)
            .map(|i| {
                let len = 1 + (i % 5);
                let cand: Vec<String> = (0..len)
                    .map(|j| vocab[(i * 3 + j * 7) % vocab.len()].to_string())
                    .collect();
                let reference: Vec<String> = (0..len + 1)
                    .map(|j| vocab[(i * 5 + j * 11) % vocab.len()].to_string())
                    .collect();
                (cand, vec![reference])
            })
            .collect();
        let config = BleuConfig::default();
        let base = {
            let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            corpus_bleu(&c, &r, &config).unwrap()
        };
        for _ in 0..5 {
            pairs.shuffle(&mut rng);
            let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let shuffled = corpus_bleu(&c, &r, &config).unwrap();
            assert_eq!(base, shuffled);
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(corpus_bleu(&[], &[], &BleuConfig::default()).is_err());
    }

    fn scored(words: &[&str], reference: &[&str], confidence: f64) -> ScoredCaption {
        let words = toks(words);
        let positions = words
            .iter()
            .map(|w| PositionChoice {
                selected: w.clone(),
                p_selected: 0.9,
                topk_words: vec![w.clone(), "other".into()],
                topk_probs: vec![0.8, 0.2],
            })
            .collect();
        ScoredCaption {
            candidate: CaptionCandidate {
                words,
                positions,
                label: Label::Food,
            },
            confidence,
            reference: Some(toks(reference)),
        }
    }

    #[test]
    fn curve_threshold_zero_bit_equals_corpus_bleu() {
        let set = vec![
            scored(&["a", "b"], &["a", "b"], 0.9),
            scored(&["c", "d"], &["c", "x"], 0.0),
        ];
        let config = BleuConfig::uniform(2);
        let points = bleu_confidence_curve(&set, &[0.0, 0.5], &config).unwrap();
        let full = {
            let candidates: Vec<Vec<String>> = set.iter().map(|s| s.candidate.words.clone()).collect();
            let references: Vec<Vec<Vec<String>>> =
                set.iter().map(|s| vec![s.reference.clone().unwrap()]).collect();
            corpus_bleu(&candidates, &references, &config).unwrap()
        };
        assert_eq!(points[0].count, 2);
        assert_eq!(points[0].bleu.as_ref().unwrap()[1], full.score);
    }

    #[test]
    fn curve_empty_survivor_set_is_marked() {
        let set = vec![scored(&["a"], &["a"], 0.5), scored(&["b"], &["b"], 0.5)];
        let points = bleu_confidence_curve(&set, &[0.0, 0.9], &BleuConfig::uniform(1)).unwrap();
        assert_eq!(points[0].count, 2);
        assert_eq!(points[1].count, 0);
        assert!(points[1].bleu.is_none());
    }

    #[test]
    fn curve_rises_on_two_population_corpus() {
        // High-confidence exact matches, low-confidence mismatches.
        let mut set = Vec::new();
        for i in 0..10 {
            set.push(scored(&["good", "soup"], &["good", "soup"], 0.9 + 0.001 * i as f64));
            set.push(scored(&["bad", "words"], &["nothing", "matches"], 0.1));
        }
        let points = bleu_confidence_curve(&set, &[0.0, 0.5], &BleuConfig::uniform(1)).unwrap();
        let low = points[0].bleu.as_ref().unwrap()[0];
        let high = points[1].bleu.as_ref().unwrap()[0];
        assert!(low < 1.0);
        assert_abs_diff_eq!(high, 1.0, epsilon = 1e-15);
        assert_eq!(points[1].count, 10);
    }

    #[test]
    fn curve_requires_references() {
        let mut s = scored(&["a"], &["a"], 0.5);
        s.reference = None;
        assert!(bleu_confidence_curve(&[s], &[0.0], &BleuConfig::uniform(1)).is_err());
    }
}
