//! Label-conditioned n-gram caption generation with greedy per-position
//! decoding.
//!
//! The model records, for every emitted word, the probability of the
//! selected word and the renormalized top-k candidate distribution at
//! that position; the confidence metric consumes both.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Vocabulary};
use crate::error::{Error, Result};

/// Marker rendered for the sentence-stop token when it appears in a
/// top-k candidate list.
pub const STOP_MARKER: &str = "</s>";

/// One decoding position: the selected word, its probability in the full
/// next-token distribution, and the renormalized top-k window anchored
/// at the selected word (so `topk_words[0]` is always the selection).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionChoice {
    pub selected: String,
    pub p_selected: f64,
    pub topk_words: Vec<String>,
    pub topk_probs: Vec<f64>,
}

/// A generated caption plus everything the confidence metric needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionCandidate {
    pub words: Vec<String>,
    pub positions: Vec<PositionChoice>,
    pub label: Label,
}

/// Candidates produced by [`ConditionalWordModel::generate_candidates`];
/// `capped` reports that the request exceeded the word vocabulary.
#[derive(Debug, Clone)]
pub struct GeneratedCandidates {
    pub candidates: Vec<CaptionCandidate>,
    pub capped: bool,
}

/// Conditioning signal for generation: the photo label, plus an
/// optional feature-cluster id so an image-derived signal can subdivide
/// the label-conditioned distributions without an interface change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Conditioning {
    pub label: Label,
    pub cluster: Option<u32>,
}

impl From<Label> for Conditioning {
    fn from(label: Label) -> Self {
        Conditioning { label, cluster: None }
    }
}

type CtxKey = (Conditioning, [u32; 2]);

const CTX_PAD: u32 = u32::MAX;

/// Add-delta smoothed n-gram next-word model conditioned on the photo
/// label. Candidate tokens at each position are the caption vocabulary
/// plus the stop marker.
#[derive(Debug, Clone)]
pub struct ConditionalWordModel {
    order: usize,
    smoothing: f64,
    vocab: Vec<String>,
    word_index: HashMap<String, u32>,
    counts: HashMap<CtxKey, HashMap<u32, u64>>,
    totals: HashMap<CtxKey, u64>,
}

impl ConditionalWordModel {
    /// Count (label, context) -> next-token transitions over tokenized
    /// captions. `order` must be 2 or 3; `smoothing` is the add-delta
    /// constant and must be positive so no candidate ever has zero
    /// probability.
    pub fn train(examples: &[(Label, Vec<String>)], order: usize, smoothing: f64) -> Result<Self> {
        let conditioned: Vec<(Conditioning, Vec<String>)> = examples
            .iter()
            .map(|(label, tokens)| (Conditioning::from(*label), tokens.clone()))
            .collect();
        Self::train_conditioned(&conditioned, order, smoothing)
    }

    /// Full-signal variant of [`ConditionalWordModel::train`] accepting
    /// explicit (label, cluster) conditioning per caption.
    pub fn train_conditioned(
        examples: &[(Conditioning, Vec<String>)],
        order: usize,
        smoothing: f64,
    ) -> Result<Self> {
        if !(2..=3).contains(&order) {
            return Err(Error::invalid(format!("n-gram order {order} not in {{2, 3}}")));
        }
        if !(smoothing > 0.0) || !smoothing.is_finite() {
            return Err(Error::invalid("smoothing constant must be positive and finite"));
        }
        if examples.is_empty() {
            return Err(Error::EmptyInput("caption corpus is empty".into()));
        }
        let docs: Vec<Vec<String>> = examples.iter().map(|(_, tokens)| tokens.clone()).collect();
        let vocabulary = Vocabulary::build(&docs, 1)?;
        if vocabulary.is_empty() {
            return Err(Error::EmptyInput("caption corpus has no tokens".into()));
        }
        let vocab: Vec<String> = vocabulary.terms().to_vec();
        let word_index: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();

        let mut model = ConditionalWordModel {
            order,
            smoothing,
            vocab,
            word_index,
            counts: HashMap::new(),
            totals: HashMap::new(),
        };
        for (label, tokens) in examples {
            let ids: Vec<u32> = tokens.iter().map(|t| model.word_index[t]).collect();
            let mut ctx = [model.start_id(); 2];
            for &id in ids.iter().chain(std::iter::once(&model.stop_id())) {
                let key = model.ctx_key(*label, ctx);
                *model.counts.entry(key).or_default().entry(id).or_insert(0) += 1;
                *model.totals.entry(key).or_insert(0) += 1;
                if model.order == 3 {
                    ctx = [ctx[1], id];
                } else {
                    ctx = [id, CTX_PAD];
                }
            }
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Caption vocabulary, excluding markers.
    pub fn vocab_words(&self) -> &[String] {
        &self.vocab
    }

    fn vocab_len(&self) -> u32 {
        self.vocab.len() as u32
    }

    fn stop_id(&self) -> u32 {
        self.vocab_len()
    }

    fn start_id(&self) -> u32 {
        self.vocab_len() + 1
    }

    /// Context id used for out-of-vocabulary context words; never seen
    /// in training, so lookups on it fall back to the smoothed uniform.
    fn unk_id(&self) -> u32 {
        self.vocab_len() + 2
    }

    fn ctx_key(&self, label: Label, ctx: [u32; 2]) -> CtxKey {
        if self.order == 2 {
            (label, [ctx[0], CTX_PAD])
        } else {
            (label, ctx)
        }
    }

    fn token_name(&self, id: u32) -> &str {
        if id == self.stop_id() {
            STOP_MARKER
        } else {
            &self.vocab[id as usize]
        }
    }

    /// Smoothed next-token distribution over vocabulary + stop (stop is
    /// the final entry). Sums to 1 for every (label, context).
    fn full_distribution(&self, label: Label, ctx: [u32; 2]) -> Vec<f64> {
        let n_candidates = self.vocab.len() + 1;
        let key = self.ctx_key(label, ctx);
        let total = self.totals.get(&key).copied().unwrap_or(0) as f64;
        let denom = total + self.smoothing * n_candidates as f64;
        let mut probs = vec![self.smoothing / denom; n_candidates];
        if let Some(counts) = self.counts.get(&key) {
            for (&id, &count) in counts {
                probs[id as usize] = (count as f64 + self.smoothing) / denom;
            }
        }
        probs
    }

    /// Candidate token ids sorted by probability descending, ties broken
    /// by token id ascending.
    fn ranked(&self, probs: &[f64]) -> Vec<u32> {
        let mut ids: Vec<u32> = (0..probs.len() as u32).collect();
        ids.sort_by(|&a, &b| {
            probs[b as usize]
                .total_cmp(&probs[a as usize])
                .then(a.cmp(&b))
        });
        ids
    }

    /// Build the position record for the candidate ranked `rank`: the
    /// window of `k` candidates starting at the selection, renormalized.
    /// Returns None when fewer than two candidates remain at that rank,
    /// which leaves the non-uniformity of the window undefined.
    fn position_choice(&self, probs: &[f64], ranked: &[u32], rank: usize, k: usize) -> Option<PositionChoice> {
        let window = &ranked[rank..(rank + k).min(ranked.len())];
        if window.len() < 2 {
            return None;
        }
        let raw: Vec<f64> = window.iter().map(|&id| probs[id as usize]).collect();
        let mass: f64 = raw.iter().sum();
        Some(PositionChoice {
            selected: self.token_name(window[0]).to_owned(),
            p_selected: probs[window[0] as usize],
            topk_words: window.iter().map(|&id| self.token_name(id).to_owned()).collect(),
            topk_probs: raw.iter().map(|p| p / mass).collect(),
        })
    }

    fn context_ids(&self, context_words: &[String]) -> [u32; 2] {
        let mut ctx = [self.start_id(); 2];
        let tail = context_words
            .iter()
            .rev()
            .take(self.order - 1)
            .map(|w| self.word_index.get(w).copied().unwrap_or_else(|| self.unk_id()));
        // tail yields most-recent first; fill ctx right to left.
        let mut slot = if self.order == 3 { 2usize } else { 1usize };
        for id in tail {
            slot -= 1;
            ctx[slot] = id;
        }
        if self.order == 2 {
            ctx[1] = CTX_PAD;
        }
        ctx
    }

    /// Full next-token distribution for an arbitrary context, plus the
    /// top-k record for the argmax token. `k` must be at least 2 and no
    /// larger than vocabulary + stop.
    pub fn next_word_distribution(
        &self,
        label: Label,
        context_words: &[String],
        k: usize,
    ) -> Result<NextWordDistribution> {
        self.check_k(k)?;
        let probs = self.full_distribution(label, self.context_ids(context_words));
        let ranked = self.ranked(&probs);
        let choice = self
            .position_choice(&probs, &ranked, 0, k)
            .expect("argmax window always has >= 2 candidates");
        Ok(NextWordDistribution { probs, choice })
    }

    fn check_k(&self, k: usize) -> Result<()> {
        let n_candidates = self.vocab.len() + 1;
        if k < 2 {
            return Err(Error::invalid(format!("top-k size {k} must be >= 2")));
        }
        if k > n_candidates {
            return Err(Error::invalid(format!(
                "top-k size {k} exceeds the {n_candidates} candidate tokens"
            )));
        }
        Ok(())
    }

    /// Greedy decoding: at every position emit the highest-probability
    /// token, stopping at the stop marker or after `max_seq_len` words.
    /// The first position always selects a word, never the stop marker.
    pub fn greedy_decode(&self, label: Label, max_seq_len: usize, k: usize) -> Result<CaptionCandidate> {
        self.check_k(k)?;
        if max_seq_len < 1 {
            return Err(Error::invalid("max_seq_len must be >= 1"));
        }
        Ok(self
            .decode_forced(label, 0, max_seq_len, k)
            .expect("rank 0 first word always decodable"))
    }

    /// Decode with the first position forced to the `first_rank`-th most
    /// probable word (rank 0 = greedy), then greedy continuation.
    fn decode_forced(
        &self,
        label: Label,
        first_rank: usize,
        max_seq_len: usize,
        k: usize,
    ) -> Option<CaptionCandidate> {
        let mut words = Vec::new();
        let mut positions = Vec::new();
        let mut ctx = [self.start_id(); 2];

        for position in 0..max_seq_len {
            let probs = self.full_distribution(label, ctx);
            let ranked = self.ranked(&probs);
            let selected_rank = if position == 0 {
                // The j-th most probable word by global rank; the stop
                // marker is not a candidate for the first position.
                ranked
                    .iter()
                    .enumerate()
                    .filter(|&(_, &id)| id != self.stop_id())
                    .map(|(rank, _)| rank)
                    .nth(first_rank)?
            } else if ranked[0] == self.stop_id() {
                break;
            } else {
                0
            };
            let id = ranked[selected_rank];
            positions.push(self.position_choice(&probs, &ranked, selected_rank, k)?);
            words.push(self.vocab[id as usize].clone());
            if self.order == 3 {
                ctx = [ctx[1], id];
            } else {
                ctx = [id, CTX_PAD];
            }
        }
        Some(CaptionCandidate { words, positions, label })
    }

    /// Generate up to `n_candidates` captions by forcing successive
    /// first words and decoding greedily from each; exact-duplicate
    /// surfaces are removed, order preserved. Requests beyond the word
    /// vocabulary are capped.
    pub fn generate_candidates(
        &self,
        label: Label,
        n_candidates: usize,
        max_seq_len: usize,
        k: usize,
    ) -> Result<GeneratedCandidates> {
        self.check_k(k)?;
        if n_candidates < 1 {
            return Err(Error::invalid("n_candidates must be >= 1"));
        }
        if max_seq_len < 1 {
            return Err(Error::invalid("max_seq_len must be >= 1"));
        }
        let capped = n_candidates > self.vocab.len();
        let n = n_candidates.min(self.vocab.len());
        let mut candidates: Vec<CaptionCandidate> = Vec::with_capacity(n);
        for rank in 0..n {
            let Some(candidate) = self.decode_forced(label, rank, max_seq_len, k) else {
                continue;
            };
            if !candidates.iter().any(|c| c.words == candidate.words) {
                candidates.push(candidate);
            }
        }
        Ok(GeneratedCandidates { candidates, capped })
    }
}

/// Output of [`ConditionalWordModel::next_word_distribution`]: the full
/// probability vector over vocabulary + stop (stop last) and the argmax
/// position record.
#[derive(Debug, Clone)]
pub struct NextWordDistribution {
    pub probs: Vec<f64>,
    pub choice: PositionChoice,
}
