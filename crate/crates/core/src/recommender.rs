//! Topic-driven review-to-image recommendation: pick the review's best
//! topic, take its top terms, and rank the business's photos by the
//! two-phase caption/review matching rule.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, PhotoRecord, ReviewRecord, TokenizerConfig};
use crate::error::Result;
use crate::topics::{DocTopics, TopicModel};

/// Index of the largest entry; ties go to the lowest index.
pub fn best_topic(doc_topics: &DocTopics) -> usize {
    let mut best = 0;
    for (i, &t) in doc_topics.theta.iter().enumerate() {
        if t > doc_topics.theta[best] {
            best = i;
        }
    }
    best
}

/// The top terms of a review's dominant topic, with topical weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeTerms {
    pub review_id: String,
    pub topic_id: usize,
    pub terms: Vec<(String, f64)>,
    /// Set when the review had no in-vocabulary tokens and the topic
    /// came from the uniform fallback.
    pub oov_fallback: bool,
}

/// Infer the review's topics, pick the argmax topic, and return that
/// topic's top `t` terms whether or not they appear in the review.
pub fn representative_terms(
    model: &TopicModel,
    review: &ReviewRecord,
    tokenizer: &TokenizerConfig,
    t: usize,
) -> Result<RepresentativeTerms> {
    let tokens = tokenize(&review.text, tokenizer);
    let bow = model.doc_to_bow(&tokens);
    let doc_topics = model.infer_document(&bow);
    let topic_id = best_topic(&doc_topics);
    let terms = model.top_terms(topic_id, t.min(model.vocab().len()))?;
    Ok(RepresentativeTerms {
        review_id: review.review_id.clone(),
        topic_id,
        terms,
        oov_fallback: doc_topics.oov_fallback,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchPhase {
    /// Matched terms occur in both the review and the caption.
    Both,
    /// Matched terms occur in the caption but not the review.
    CaptionOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMatch {
    pub photo_id: String,
    pub phase: MatchPhase,
    pub matched_terms: BTreeSet<String>,
    pub match_count: usize,
    pub weight_sum: f64,
}

/// Ranked recommendations for one review, best first, at most phi long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationResult {
    pub review_id: String,
    pub matches: Vec<ImageMatch>,
}

/// Two-phase ranking. Phase 1 collects photos whose captions share at
/// least one representative term with the review; phase 2 runs only when
/// phase 1 yields fewer than phi photos and collects photos whose
/// captions contain representative terms the review lacks. Within a
/// phase: match count descending, then summed topical weight descending,
/// then photo id ascending.
///
/// Captions must already be complete (generated captions substituted
/// where the original was empty).
pub fn rank_images(
    review: &ReviewRecord,
    photos: &[PhotoRecord],
    terms: &RepresentativeTerms,
    phi: usize,
    tokenizer: &TokenizerConfig,
) -> RecommendationResult {
    let review_tokens: BTreeSet<String> = tokenize(&review.text, tokenizer).into_iter().collect();
    let mut phase_both: Vec<ImageMatch> = Vec::new();
    let mut phase_caption: Vec<ImageMatch> = Vec::new();
    for photo in photos {
        let caption_tokens: BTreeSet<String> =
            tokenize(&photo.caption, tokenizer).into_iter().collect();
        let mut in_both = BTreeSet::new();
        let mut caption_only = BTreeSet::new();
        let mut weight_both = 0.0;
        let mut weight_caption = 0.0;
        for (term, weight) in &terms.terms {
            if !caption_tokens.contains(term) {
                continue;
            }
            if review_tokens.contains(term) {
                in_both.insert(term.clone());
                weight_both += weight;
            } else {
                caption_only.insert(term.clone());
                weight_caption += weight;
            }
        }
        if !in_both.is_empty() {
            phase_both.push(ImageMatch {
                photo_id: photo.photo_id.clone(),
                phase: MatchPhase::Both,
                match_count: in_both.len(),
                matched_terms: in_both,
                weight_sum: weight_both,
            });
        } else if !caption_only.is_empty() {
            phase_caption.push(ImageMatch {
                photo_id: photo.photo_id.clone(),
                phase: MatchPhase::CaptionOnly,
                match_count: caption_only.len(),
                matched_terms: caption_only,
                weight_sum: weight_caption,
            });
        }
    }
    let comparator = |a: &ImageMatch, b: &ImageMatch| {
        b.match_count
            .cmp(&a.match_count)
            .then_with(|| b.weight_sum.total_cmp(&a.weight_sum))
            .then_with(|| a.photo_id.cmp(&b.photo_id))
    };
    phase_both.sort_by(comparator);
    let mut matches = phase_both;
    matches.truncate(phi);
    if matches.len() < phi {
        phase_caption.sort_by(comparator);
        phase_caption.truncate(phi - matches.len());
        matches.extend(phase_caption);
    }
    RecommendationResult {
        review_id: review.review_id.clone(),
        matches,
    }
}

/// One recommendation per review of a business, each ranked over that
/// business's photos only. A business with zero photos yields an empty
/// result per review.
pub fn recommend_for_business(
    reviews: &[ReviewRecord],
    photos: &[PhotoRecord],
    model: &TopicModel,
    t: usize,
    phi: usize,
    tokenizer: &TokenizerConfig,
) -> Result<Vec<RecommendationResult>> {
    let mut results = Vec::with_capacity(reviews.len());
    for review in reviews {
        let terms = representative_terms(model, review, tokenizer, t)?;
        results.push(rank_images(review, photos, &terms, phi, tokenizer));
    }
    Ok(results)
}
