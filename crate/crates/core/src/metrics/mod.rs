//! Caption scoring: non-uniformity of a top-k distribution, per-caption
//! confidence, corpus BLEU without brevity penalty, the confidence
//! threshold BLEU curve, and human score aggregation.

mod bleu;
mod human;

pub use bleu::{bleu_confidence_curve, corpus_bleu, BleuConfig, BleuScore, CurvePoint, ScoredCaption};
pub use human::{
    aggregate_human_scores, read_human_scores_csv, HumanScoreRecord, HumanScoreSummary, RaterStats,
};

use crate::captioner::CaptionCandidate;
use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;

/// Scaled L1 distance between a probability vector and the uniform
/// distribution of the same size: 0 for uniform, 1 for one-hot.
///
/// nu(X) = ||U(1/k) - X||_1 / (2 - 2/k), defined for k > 1. The input
/// must already be normalized; auto-normalizing here would mask bugs in
/// the captioner's top-k renormalization.
pub fn nonuniformity(x: &[f64]) -> Result<f64> {
    let k = x.len();
    if k <= 1 {
        return Err(Error::invalid(format!(
            "non-uniformity needs k > 1 entries, got {k}"
        )));
    }
    if x.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::invalid("probabilities must be finite and >= 0"));
    }
    let sum: f64 = x.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::invalid(format!(
            "probabilities must sum to 1 (got {sum})"
        )));
    }
    let uniform = 1.0 / k as f64;
    let l1: f64 = x.iter().map(|&p| (p - uniform).abs()).sum();
    Ok(l1 / (2.0 - 2.0 / k as f64))
}

/// Confidence of a generated caption from its per-position records:
///
/// Confidence(W) = [sum_i exp(nu(v(w_i)) * p(w_i)) - m] / (m*e - m)
///
/// where v(w_i) is the renormalized top-k window at position i and
/// p(w_i) the selected word's probability in the full distribution.
/// Ranges over [0, 1]; higher means the decoder was more decisive.
pub fn caption_confidence(candidate: &CaptionCandidate) -> Result<f64> {
    let m = candidate.words.len();
    if m < 1 {
        return Err(Error::invalid("caption has no words"));
    }
    if candidate.positions.len() != m {
        return Err(Error::invalid(format!(
            "caption has {m} words but {} position records",
            candidate.positions.len()
        )));
    }
    let mut sum = 0.0;
    for choice in &candidate.positions {
        if !(choice.p_selected > 0.0 && choice.p_selected <= 1.0) {
            return Err(Error::invalid(format!(
                "selected-word probability {} outside (0, 1]",
                choice.p_selected
            )));
        }
        let nu = nonuniformity(&choice.topk_probs)?;
        sum += (nu * choice.p_selected).exp();
    }
    let m = m as f64;
    Ok((sum - m) / (m * std::f64::consts::E - m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captioner::PositionChoice;
    use crate::corpus::Label;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_is_zero() {
        let x = vec![1.0 / 3.0; 3];
        assert_abs_diff_eq!(nonuniformity(&x).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn one_hot_is_one() {
        let x = vec![1.0, 0.0, 0.0, 0.0];
        assert_abs_diff_eq!(nonuniformity(&x).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn hand_computed_case() {
        // |1/3-0.5| + |1/3-0.3| + |1/3-0.2| = 1/3; denominator 4/3.
        let x = vec![0.5, 0.3, 0.2];
        assert_abs_diff_eq!(nonuniformity(&x).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(nonuniformity(&[1.0]).is_err());
        assert!(nonuniformity(&[0.7, 0.7]).is_err());
        assert!(nonuniformity(&[-0.1, 1.1]).is_err());
        assert!(nonuniformity(&[]).is_err());
    }

    #[test]
    fn permutation_invariant_and_bounded() {
        let xs = [
            vec![0.6, 0.3, 0.1],
            vec![0.1, 0.6, 0.3],
            vec![0.3, 0.1, 0.6],
        ];
        let values: Vec<f64> = xs.iter().map(|x| nonuniformity(x).unwrap()).collect();
        for v in &values {
            assert!((0.0..=1.0).contains(v));
            assert_abs_diff_eq!(*v, values[0], epsilon = 1e-15);
        }
    }

    #[test]
    fn strictly_increasing_toward_one_hot() {
        // nu along (1-t)*U + t*onehot must strictly increase with t.
        let k = 5usize;
        let uniform = 1.0 / k as f64;
        let mut last = -1.0;
        for step in 0..=10 {
            let t = step as f64 / 10.0;
            let x: Vec<f64> = (0..k)
                .map(|i| {
                    let onehot = if i == 0 { 1.0 } else { 0.0 };
                    (1.0 - t) * uniform + t * onehot
                })
                .collect();
            let nu = nonuniformity(&x).unwrap();
            assert!(nu > last, "nu not increasing at t={t}");
            last = nu;
        }
    }

    fn candidate_with(positions: Vec<(f64, f64)>) -> CaptionCandidate {
        // Each (nu_target, p) pair becomes a 2-entry topk whose
        // non-uniformity equals nu_target: for k=2 the vector
        // [(1+nu)/2, (1-nu)/2] has L1 distance nu from uniform.
        let words: Vec<String> = (0..positions.len()).map(|i| format!("w{i}")).collect();
        let position_choices = positions
            .iter()
            .zip(&words)
            .map(|(&(nu, p), w)| PositionChoice {
                selected: w.clone(),
                p_selected: p,
                topk_words: vec![w.clone(), "other".into()],
                topk_probs: vec![(1.0 + nu) / 2.0, (1.0 - nu) / 2.0],
            })
            .collect();
        CaptionCandidate {
            words,
            positions: position_choices,
            label: Label::Food,
        }
    }

    #[test]
    fn confidence_extremes() {
        let perfect = candidate_with(vec![(1.0, 1.0); 3]);
        assert_abs_diff_eq!(caption_confidence(&perfect).unwrap(), 1.0, epsilon = 1e-12);
        let uniform = candidate_with(vec![(0.0, 0.5), (0.0, 0.9)]);
        assert_abs_diff_eq!(caption_confidence(&uniform).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn confidence_hand_computed_case() {
        // m=2, nu=0.5, p=0.8 -> (2e^0.4 - 2) / (2e - 2)
        let candidate = candidate_with(vec![(0.5, 0.8); 2]);
        let expected = (2.0 * 0.4f64.exp() - 2.0) / (2.0 * std::f64::consts::E - 2.0);
        assert_abs_diff_eq!(caption_confidence(&candidate).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.2862, epsilon = 5e-5);
    }

    #[test]
    fn confidence_monotone_in_nu_p_product() {
        let low = candidate_with(vec![(0.3, 0.5), (0.2, 0.4)]);
        let high = candidate_with(vec![(0.3, 0.5), (0.8, 0.4)]);
        assert!(caption_confidence(&high).unwrap() > caption_confidence(&low).unwrap());
    }

    #[test]
    fn confidence_requires_position_data() {
        let mut candidate = candidate_with(vec![(0.5, 0.5)]);
        candidate.positions.clear();
        assert!(caption_confidence(&candidate).is_err());
        let empty = candidate_with(vec![]);
        assert!(caption_confidence(&empty).is_err());
    }
}
