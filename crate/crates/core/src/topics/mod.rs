//! Online variational LDA over bag-of-words review documents: minibatch
//! training with a decaying blend into the topic-word parameters,
//! per-document inference, top terms, and held-out perplexity via the
//! variational bound.

mod dirichlet;
mod sweep;

pub use dirichlet::{dirichlet_expectation, newton_prior_step, trigamma, PRIOR_FLOOR};
pub use sweep::{sweep, sweep_grid, write_sweep_csv, SweepOutcome, SweepRow, SweepSetting};

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

/// Sparse document: (term index, count) pairs sorted by term index.
pub type BowDoc = Vec<(usize, f64)>;

pub const DEFAULT_E_STEP_TOL: f64 = 1e-3;
pub const DEFAULT_E_STEP_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMode {
    Symmetric,
    Asymmetric,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaMode {
    Symmetric,
    Auto,
}

/// Training hyperparameters.
///
/// `passes` counts sweeps over the corpus and `e_step_max_iter` caps the
/// per-document fixed-point iterations; the product corresponds to the
/// usual "iterations" knob of online LDA implementations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaHyper {
    pub n_topics: usize,
    pub passes: usize,
    pub alpha_mode: AlphaMode,
    pub eta_mode: EtaMode,
    /// Decay exponent of the update weight; [0.5, 1.0] for convergence.
    pub kappa: f64,
    /// Offset that downweights early updates; >= 0.
    pub tau0: f64,
    pub minibatch: usize,
    pub seed: u64,
    pub e_step_tol: f64,
    pub e_step_max_iter: usize,
    /// Force the within-minibatch E-step to run sequentially. Results
    /// are identical either way; this exists to honor a global
    /// single-thread switch.
    #[serde(default)]
    pub single_thread: bool,
}

impl Default for LdaHyper {
    fn default() -> Self {
        LdaHyper {
            n_topics: 20,
            passes: 1,
            alpha_mode: AlphaMode::Auto,
            eta_mode: EtaMode::Symmetric,
            kappa: 0.5,
            tau0: 1.0,
            minibatch: 256,
            seed: 0,
            e_step_tol: DEFAULT_E_STEP_TOL,
            e_step_max_iter: DEFAULT_E_STEP_MAX_ITER,
            single_thread: false,
        }
    }
}

impl LdaHyper {
    pub fn validate(&self) -> Result<()> {
        if self.n_topics < 1 {
            return Err(Error::invalid("n_topics must be >= 1"));
        }
        if !(0.5..=1.0).contains(&self.kappa) {
            return Err(Error::invalid(format!(
                "kappa {} outside [0.5, 1.0]",
                self.kappa
            )));
        }
        if !(self.tau0 >= 0.0) {
            return Err(Error::invalid(format!("tau0 {} must be >= 0", self.tau0)));
        }
        if self.minibatch < 1 {
            return Err(Error::invalid("minibatch size must be >= 1"));
        }
        if self.passes < 1 {
            return Err(Error::invalid("passes must be >= 1"));
        }
        if !(self.e_step_tol > 0.0) || self.e_step_max_iter < 1 {
            return Err(Error::invalid("E-step tolerance and iteration cap must be positive"));
        }
        Ok(())
    }

    /// Update weight for the 1-based update step `s`: (tau0 + s)^(-kappa).
    /// Strictly decreasing in s and within (0, 1] for tau0 >= 0.
    pub fn rho(&self, step: u64) -> f64 {
        (self.tau0 + step as f64).powf(-self.kappa)
    }
}

/// Topic-word Dirichlet prior: one shared scalar or a per-term vector
/// (the vector form is produced by the experimental auto mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaParam {
    Scalar(f64),
    PerTerm(Vec<f64>),
}

impl EtaParam {
    fn at(&self, term: usize) -> f64 {
        match self {
            EtaParam::Scalar(v) => *v,
            EtaParam::PerTerm(v) => v[term],
        }
    }
}

/// Trained LDA state: the K x V variational parameters over the topic
/// dictionary, the document-topic prior, and the training schedule
/// bookkeeping needed to resume updates.
#[derive(Debug, Clone)]
pub struct TopicModel {
    n_topics: usize,
    vocab: Vec<String>,
    term_index: HashMap<String, usize>,
    lambda: Array2<f64>,
    alpha: Vec<f64>,
    eta: EtaParam,
    kappa: f64,
    tau0: f64,
    update_count: u64,
    elog_beta: Array2<f64>,
}

/// Per-document topic posterior. `theta` is the normalized variational
/// Dirichlet parameter `gamma`; `oov_fallback` marks documents with no
/// in-vocabulary tokens, which receive the uniform distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocTopics {
    pub theta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub oov_fallback: bool,
}

/// Model plus ingestion notes from training.
#[derive(Debug)]
pub struct TrainedTopics {
    pub model: TopicModel,
    /// Documents skipped because every token was out of vocabulary.
    pub skipped_docs: usize,
}

fn initial_alpha(mode: AlphaMode, k: usize) -> Vec<f64> {
    match mode {
        AlphaMode::Symmetric | AlphaMode::Auto => vec![1.0 / k as f64; k],
        AlphaMode::Asymmetric => {
            let raw: Vec<f64> = (0..k).map(|i| 1.0 / (i as f64 + (k as f64).sqrt())).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect()
        }
    }
}

fn elog_beta_of(lambda: &Array2<f64>) -> Array2<f64> {
    let (k, v) = lambda.dim();
    let mut out = Array2::zeros((k, v));
    for (mut row, lam) in out.rows_mut().into_iter().zip(lambda.rows()) {
        let e = dirichlet_expectation(lam.as_slice().expect("contiguous lambda row"));
        row.assign(&Array1::from_vec(e));
    }
    out
}

struct EStepDoc {
    gamma: Vec<f64>,
    /// expElogtheta_k * cts_j / phinorm_j, row-major [topic][token].
    contrib: Vec<f64>,
}

/// Per-document coordinate ascent on gamma with the word
/// responsibilities collapsed out, run to `tol` mean absolute change in
/// gamma or `max_iter` iterations.
fn e_step_doc(
    bow: &[(usize, f64)],
    exp_elog_beta: &Array2<f64>,
    alpha: &[f64],
    tol: f64,
    max_iter: usize,
) -> EStepDoc {
    let k = alpha.len();
    let n_ids = bow.len();
    let n_d: f64 = bow.iter().map(|&(_, c)| c).sum();
    let mut gamma: Vec<f64> = alpha.iter().map(|&a| a + n_d / k as f64).collect();
    let mut exp_elog_theta: Vec<f64> =
        dirichlet_expectation(&gamma).into_iter().map(f64::exp).collect();

    // Dense copy of this document's beta columns, [topic][token].
    let mut beta = vec![0.0f64; k * n_ids];
    for (kk, row) in beta.chunks_mut(n_ids).enumerate() {
        for (j, &(id, _)) in bow.iter().enumerate() {
            row[j] = exp_elog_beta[[kk, id]];
        }
    }

    let mut phinorm = vec![0.0f64; n_ids];
    let recompute_phinorm = |phinorm: &mut [f64], exp_elog_theta: &[f64], beta: &[f64]| {
        for j in 0..n_ids {
            let mut sum = 1e-100;
            for (kk, &t) in exp_elog_theta.iter().enumerate() {
                sum += t * beta[kk * n_ids + j];
            }
            phinorm[j] = sum;
        }
    };
    recompute_phinorm(&mut phinorm, &exp_elog_theta, &beta);

    for _ in 0..max_iter {
        let last = gamma.clone();
        for kk in 0..k {
            let mut dot = 0.0;
            for (j, &(_, ct)) in bow.iter().enumerate() {
                dot += ct / phinorm[j] * beta[kk * n_ids + j];
            }
            gamma[kk] = alpha[kk] + exp_elog_theta[kk] * dot;
        }
        exp_elog_theta = dirichlet_expectation(&gamma).into_iter().map(f64::exp).collect();
        recompute_phinorm(&mut phinorm, &exp_elog_theta, &beta);
        let mean_change: f64 =
            gamma.iter().zip(&last).map(|(g, l)| (g - l).abs()).sum::<f64>() / k as f64;
        if mean_change < tol {
            break;
        }
    }

    let mut contrib = vec![0.0f64; k * n_ids];
    for (kk, row) in contrib.chunks_mut(n_ids).enumerate() {
        for (j, &(_, ct)) in bow.iter().enumerate() {
            row[j] = exp_elog_theta[kk] * ct / phinorm[j];
        }
    }
    EStepDoc { gamma, contrib }
}

/// Train online variational LDA. Documents whose bag of words is empty
/// (all tokens out of vocabulary) are skipped and counted. Training is
/// deterministic for a fixed seed; sufficient statistics are merged in
/// document order regardless of the thread mode.
pub fn train_online_lda(
    corpus: &[BowDoc],
    vocab: &Vocabulary,
    hyper: &LdaHyper,
) -> Result<TrainedTopics> {
    hyper.validate()?;
    if vocab.is_empty() {
        return Err(Error::EmptyInput("vocabulary is empty".into()));
    }
    let docs: Vec<&BowDoc> = corpus.iter().filter(|d| !d.is_empty()).collect();
    let skipped_docs = corpus.len() - docs.len();
    if docs.is_empty() {
        return Err(Error::EmptyInput("no documents with in-vocabulary tokens".into()));
    }

    let k = hyper.n_topics;
    let v = vocab.len();
    let mut rng = ChaCha20Rng::seed_from_u64(hyper.seed);
    let gamma_init = rand_distr::Gamma::new(100.0, 0.01).expect("valid gamma");
    let lambda = Array2::from_shape_fn((k, v), |_| gamma_init.sample(&mut rng));

    let mut model = TopicModel {
        n_topics: k,
        vocab: vocab.terms().to_vec(),
        term_index: vocab
            .terms()
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect(),
        elog_beta: elog_beta_of(&lambda),
        lambda,
        alpha: initial_alpha(hyper.alpha_mode, k),
        eta: match hyper.eta_mode {
            EtaMode::Symmetric => EtaParam::Scalar(1.0 / k as f64),
            EtaMode::Auto => EtaParam::PerTerm(vec![1.0 / k as f64; v]),
        },
        kappa: hyper.kappa,
        tau0: hyper.tau0,
        update_count: 0,
    };

    let total_docs = docs.len() as f64;
    for _pass in 0..hyper.passes {
        for chunk in docs.chunks(hyper.minibatch) {
            let rho = hyper.rho(model.update_count + 1);
            let exp_elog_beta = model.elog_beta.mapv(f64::exp);
            let outcomes: Vec<EStepDoc> = if hyper.single_thread {
                chunk
                    .iter()
                    .map(|bow| {
                        e_step_doc(bow, &exp_elog_beta, &model.alpha, hyper.e_step_tol, hyper.e_step_max_iter)
                    })
                    .collect()
            } else {
                chunk
                    .par_iter()
                    .map(|bow| {
                        e_step_doc(bow, &exp_elog_beta, &model.alpha, hyper.e_step_tol, hyper.e_step_max_iter)
                    })
                    .collect()
            };

            // Merge sufficient statistics in document order.
            let mut sstats = Array2::<f64>::zeros((k, v));
            for (bow, outcome) in chunk.iter().zip(&outcomes) {
                let n_ids = bow.len();
                for kk in 0..k {
                    for (j, &(id, _)) in bow.iter().enumerate() {
                        sstats[[kk, id]] += outcome.contrib[kk * n_ids + j];
                    }
                }
            }
            sstats *= &exp_elog_beta;

            let scale = total_docs / chunk.len() as f64;
            for kk in 0..k {
                for w in 0..v {
                    let target = model.eta.at(w) + scale * sstats[[kk, w]];
                    model.lambda[[kk, w]] = (1.0 - rho) * model.lambda[[kk, w]] + rho * target;
                }
            }
            model.elog_beta = elog_beta_of(&model.lambda);
            model.update_count += 1;

            if hyper.alpha_mode == AlphaMode::Auto {
                let gammas: Vec<Vec<f64>> = outcomes.iter().map(|o| o.gamma.clone()).collect();
                alpha_auto_update(&mut model, &gammas, rho);
            }
            if hyper.eta_mode == EtaMode::Auto {
                eta_auto_update(&mut model, rho);
            }
        }
    }
    Ok(TrainedTopics { model, skipped_docs })
}

/// Newton step on the document-topic prior from minibatch gamma
/// statistics. Returns false (prior unchanged) when the step produces a
/// non-finite intermediate or the batch is empty.
pub fn alpha_auto_update(model: &mut TopicModel, gammas: &[Vec<f64>], rho: f64) -> bool {
    if gammas.is_empty() {
        return false;
    }
    let k = model.n_topics;
    let n = gammas.len() as f64;
    let mut logphat = vec![0.0f64; k];
    for gamma in gammas {
        for (acc, e) in logphat.iter_mut().zip(dirichlet_expectation(gamma)) {
            *acc += e / n;
        }
    }
    match newton_prior_step(&model.alpha, &logphat, n, rho) {
        Some(updated) => {
            model.alpha = updated;
            true
        }
        None => false,
    }
}

/// Same Newton step applied to the topic-word prior, treating the K
/// topic rows of lambda as observations. Experimental.
fn eta_auto_update(model: &mut TopicModel, rho: f64) -> bool {
    let EtaParam::PerTerm(eta) = &model.eta else {
        return false;
    };
    let k = model.n_topics as f64;
    let v = model.vocab.len();
    let mut logphat = vec![0.0f64; v];
    for row in model.elog_beta.rows() {
        for (acc, &e) in logphat.iter_mut().zip(row.iter()) {
            *acc += e / k;
        }
    }
    match newton_prior_step(eta, &logphat, k, rho) {
        Some(updated) => {
            model.eta = EtaParam::PerTerm(updated);
            true
        }
        None => false,
    }
}

impl TopicModel {
    pub fn n_topics(&self) -> usize {
        self.n_topics
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn lambda(&self) -> &Array2<f64> {
        &self.lambda
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    /// Map tokens onto this model's vocabulary as sparse counts.
    pub fn doc_to_bow(&self, tokens: &[String]) -> BowDoc {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for token in tokens {
            if let Some(&idx) = self.term_index.get(token) {
                *counts.entry(idx).or_insert(0.0) += 1.0;
            }
        }
        let mut bow: BowDoc = counts.into_iter().collect();
        bow.sort_unstable_by_key(|&(idx, _)| idx);
        bow
    }

    /// Expected topic-word probabilities (normalized lambda row).
    pub fn topic_word_distribution(&self, topic_id: usize) -> Result<Vec<f64>> {
        if topic_id >= self.n_topics {
            return Err(Error::invalid(format!(
                "topic id {topic_id} out of range 0..{}",
                self.n_topics
            )));
        }
        let row = self.lambda.row(topic_id);
        let sum: f64 = row.sum();
        Ok(row.iter().map(|&x| x / sum).collect())
    }

    /// E-step-only inference with the default tolerance. Documents with
    /// no in-vocabulary tokens get the uniform distribution and the
    /// fallback flag.
    pub fn infer_document(&self, bow: &BowDoc) -> DocTopics {
        self.infer_document_with(bow, DEFAULT_E_STEP_TOL, DEFAULT_E_STEP_MAX_ITER)
    }

    pub fn infer_document_with(&self, bow: &BowDoc, tol: f64, max_iter: usize) -> DocTopics {
        if bow.is_empty() {
            return DocTopics {
                theta: vec![1.0 / self.n_topics as f64; self.n_topics],
                gamma: self.alpha.clone(),
                oov_fallback: true,
            };
        }
        let exp_elog_beta = self.elog_beta.mapv(f64::exp);
        let outcome = e_step_doc(bow, &exp_elog_beta, &self.alpha, tol, max_iter);
        let sum: f64 = outcome.gamma.iter().sum();
        DocTopics {
            theta: outcome.gamma.iter().map(|g| g / sum).collect(),
            gamma: outcome.gamma,
            oov_fallback: false,
        }
    }

    /// Per-word topic assignment posteriors for a document, computed on
    /// demand from the converged gamma: one probability row per bow
    /// entry.
    pub fn word_responsibilities(&self, bow: &BowDoc) -> Vec<(usize, Vec<f64>)> {
        if bow.is_empty() {
            return Vec::new();
        }
        let doc = self.infer_document(bow);
        let exp_elog_theta: Vec<f64> =
            dirichlet_expectation(&doc.gamma).into_iter().map(f64::exp).collect();
        bow.iter()
            .map(|&(id, _)| {
                let mut row: Vec<f64> = (0..self.n_topics)
                    .map(|kk| exp_elog_theta[kk] * self.elog_beta[[kk, id]].exp())
                    .collect();
                let sum: f64 = row.iter().sum::<f64>() + 1e-100;
                for p in &mut row {
                    *p /= sum;
                }
                (id, row)
            })
            .collect()
    }

    /// The `t` highest-probability terms of one topic with their
    /// expected probabilities, ties broken lexicographically.
    pub fn top_terms(&self, topic_id: usize, t: usize) -> Result<Vec<(String, f64)>> {
        if t > self.vocab.len() {
            return Err(Error::invalid(format!(
                "requested {t} terms but vocabulary has {}",
                self.vocab.len()
            )));
        }
        let dist = self.topic_word_distribution(topic_id)?;
        let mut order: Vec<usize> = (0..self.vocab.len()).collect();
        order.sort_by(|&a, &b| {
            dist[b]
                .total_cmp(&dist[a])
                .then_with(|| self.vocab[a].cmp(&self.vocab[b]))
        });
        Ok(order
            .into_iter()
            .take(t)
            .map(|i| (self.vocab[i].clone(), dist[i]))
            .collect())
    }
}

/// Held-out perplexity: the exponentiated negative per-word variational
/// bound over the held-out documents. Lower is better; always >= 1 up
/// to bound slack.
pub fn perplexity(model: &TopicModel, heldout: &[BowDoc]) -> Result<f64> {
    let docs: Vec<&BowDoc> = heldout.iter().filter(|d| !d.is_empty()).collect();
    let total_tokens: f64 = docs.iter().flat_map(|d| d.iter()).map(|&(_, c)| c).sum();
    if docs.is_empty() || total_tokens <= 0.0 {
        return Err(Error::EmptyInput(
            "held-out set has no in-vocabulary tokens".into(),
        ));
    }
    let exp_elog_beta = model.elog_beta.mapv(f64::exp);
    let alpha_sum: f64 = model.alpha.iter().sum();
    let ln_gamma_alpha_sum = ln_gamma(alpha_sum);
    let ln_gamma_alpha: f64 = model.alpha.iter().map(|&a| ln_gamma(a)).sum();

    let mut score = 0.0;
    for bow in docs {
        let outcome = e_step_doc(
            bow,
            &exp_elog_beta,
            &model.alpha,
            DEFAULT_E_STEP_TOL,
            DEFAULT_E_STEP_MAX_ITER,
        );
        let elog_theta = dirichlet_expectation(&outcome.gamma);
        // E[log p(words | theta, beta)] with responsibilities collapsed:
        // per word, logsumexp_k(Elogtheta_k + Elogbeta_kw).
        for &(id, ct) in bow {
            let mut max = f64::NEG_INFINITY;
            for kk in 0..model.n_topics {
                max = max.max(elog_theta[kk] + model.elog_beta[[kk, id]]);
            }
            let sum: f64 = (0..model.n_topics)
                .map(|kk| (elog_theta[kk] + model.elog_beta[[kk, id]] - max).exp())
                .sum();
            score += ct * (max + sum.ln());
        }
        // E[log p(theta | alpha)] - E[log q(theta | gamma)]
        let gamma_sum: f64 = outcome.gamma.iter().sum();
        for kk in 0..model.n_topics {
            score += (model.alpha[kk] - outcome.gamma[kk]) * elog_theta[kk];
            score += ln_gamma(outcome.gamma[kk]);
        }
        score -= ln_gamma_alpha;
        score += ln_gamma_alpha_sum - ln_gamma(gamma_sum);
    }
    Ok((-score / total_tokens).exp())
}

/// Serialized form: K, alpha, eta, schedule constants, update counter,
/// vocabulary, and lambda in row-major order.
#[derive(Serialize, Deserialize)]
struct ModelJson {
    #[serde(rename = "K")]
    k: usize,
    alpha: Vec<f64>,
    eta: EtaParam,
    kappa: f64,
    tau0: f64,
    t: u64,
    vocab: Vec<String>,
    lambda: Vec<f64>,
}

impl TopicModel {
    pub fn to_json(&self) -> String {
        let doc = ModelJson {
            k: self.n_topics,
            alpha: self.alpha.clone(),
            eta: self.eta.clone(),
            kappa: self.kappa,
            tau0: self.tau0,
            t: self.update_count,
            vocab: self.vocab.clone(),
            lambda: self.lambda.iter().copied().collect(),
        };
        serde_json::to_string(&doc).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<TopicModel> {
        let doc: ModelJson =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("model json: {e}")))?;
        let v = doc.vocab.len();
        if doc.k < 1 || v == 0 || doc.lambda.len() != doc.k * v || doc.alpha.len() != doc.k {
            return Err(Error::invalid("model json has inconsistent dimensions"));
        }
        if doc.lambda.iter().any(|&x| !(x > 0.0)) || doc.alpha.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::invalid("lambda and alpha entries must be positive"));
        }
        let lambda = Array2::from_shape_vec((doc.k, v), doc.lambda)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(TopicModel {
            n_topics: doc.k,
            term_index: doc
                .vocab
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i))
                .collect(),
            vocab: doc.vocab,
            elog_beta: elog_beta_of(&lambda),
            lambda,
            alpha: doc.alpha,
            eta: doc.eta,
            kappa: doc.kappa,
            tau0: doc.tau0,
            update_count: doc.t,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TopicModel> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        TopicModel::from_json(&text)
    }
}

/// Build a model with random positive lambda and symmetric alpha, for
/// untrained-baseline comparisons.
pub fn random_model(vocab: &Vocabulary, n_topics: usize, seed: u64) -> Result<TopicModel> {
    if vocab.is_empty() || n_topics < 1 {
        return Err(Error::invalid("random model needs a vocabulary and n_topics >= 1"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let gamma_init = rand_distr::Gamma::new(100.0, 0.01).expect("valid gamma");
    let lambda = Array2::from_shape_fn((n_topics, vocab.len()), |_| gamma_init.sample(&mut rng));
    Ok(TopicModel {
        n_topics,
        vocab: vocab.terms().to_vec(),
        term_index: vocab
            .terms()
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect(),
        elog_beta: elog_beta_of(&lambda),
        lambda,
        alpha: vec![1.0 / n_topics as f64; n_topics],
        eta: EtaParam::Scalar(1.0 / n_topics as f64),
        kappa: 0.5,
        tau0: 1.0,
        update_count: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::planted_topic_corpus;
    use approx::assert_abs_diff_eq;

    fn bow_corpus(documents: &[Vec<String>], vocab: &Vocabulary) -> Vec<BowDoc> {
        documents.iter().map(|d| vocab.doc_to_bow(d)).collect()
    }

    fn planted_setup(n_docs: usize, seed: u64) -> (Vec<BowDoc>, Vocabulary, crate::synthetic::PlantedCorpus) {
        let corpus = planted_topic_corpus(n_docs, 40, 15, 2, seed);
        let vocab = Vocabulary::build(&corpus.documents, 1).unwrap();
        let bows = bow_corpus(&corpus.documents, &vocab);
        (bows, vocab, corpus)
    }

    fn small_hyper(k: usize, passes: usize) -> LdaHyper {
        LdaHyper {
            n_topics: k,
            passes,
            minibatch: 32,
            seed: 42,
            ..LdaHyper::default()
        }
    }

    #[test]
    fn rho_schedule_is_decreasing_and_bounded() {
        for &(kappa, tau0) in &[(0.5, 0.0), (0.7, 1.0), (1.0, 64.0)] {
            let hyper = LdaHyper { kappa, tau0, ..LdaHyper::default() };
            let mut last = f64::INFINITY;
            for step in 1..=50u64 {
                let rho = hyper.rho(step);
                assert!(rho > 0.0 && rho <= 1.0, "rho {rho} out of (0,1]");
                assert!(rho < last);
                last = rho;
            }
        }
    }

    #[test]
    fn hyper_validation() {
        let mut hyper = LdaHyper::default();
        assert!(hyper.validate().is_ok());
        hyper.kappa = 1.5;
        assert!(hyper.validate().is_err());
        hyper.kappa = 0.4;
        assert!(hyper.validate().is_err());
        hyper = LdaHyper { tau0: -1.0, ..LdaHyper::default() };
        assert!(hyper.validate().is_err());
        hyper = LdaHyper { n_topics: 0, ..LdaHyper::default() };
        assert!(hyper.validate().is_err());
    }

    #[test]
    fn planted_topics_are_recovered() {
        let (bows, vocab, corpus) = planted_setup(500, 3);
        let trained = train_online_lda(&bows, &vocab, &small_hyper(2, 2)).unwrap();
        // Match each learned topic to the planted topic owning most of
        // its top-10 terms; require >= 0.9 purity for both.
        let mut purities = Vec::new();
        let mut assigned = Vec::new();
        for topic in 0..2 {
            let top = trained.model.top_terms(topic, 10).unwrap();
            let counts: Vec<usize> = (0..2)
                .map(|p| {
                    top.iter()
                        .filter(|(term, _)| corpus.topic_words[p].contains(term))
                        .count()
                })
                .collect();
            let best = if counts[0] >= counts[1] { 0 } else { 1 };
            assigned.push(best);
            purities.push(counts[best] as f64 / 10.0);
        }
        assert_ne!(assigned[0], assigned[1], "topics collapsed onto one planted topic");
        for purity in purities {
            assert!(purity >= 0.9, "purity {purity} < 0.9");
        }
    }

    #[test]
    fn single_topic_theta_is_one() {
        let (bows, vocab, _) = planted_setup(30, 5);
        let trained = train_online_lda(&bows, &vocab, &small_hyper(1, 1)).unwrap();
        for bow in &bows {
            let doc = trained.model.infer_document(bow);
            assert_eq!(doc.theta.len(), 1);
            assert_abs_diff_eq!(doc.theta[0], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn second_pass_does_not_hurt_heldout_perplexity() {
        let corpus = planted_topic_corpus(300, 40, 15, 2, 11);
        let vocab = Vocabulary::build(&corpus.documents, 1).unwrap();
        let bows = bow_corpus(&corpus.documents, &vocab);
        let (train, heldout) = bows.split_at(250);
        let one = train_online_lda(train, &vocab, &small_hyper(2, 1)).unwrap();
        let two = train_online_lda(train, &vocab, &small_hyper(2, 2)).unwrap();
        let p1 = perplexity(&one.model, heldout).unwrap();
        let p2 = perplexity(&two.model, heldout).unwrap();
        assert!(p2 <= p1 * 1.01, "pass 2 perplexity {p2} vs pass 1 {p1}");
    }

    #[test]
    fn oov_only_documents_are_skipped_with_count() {
        let (mut bows, vocab, _) = planted_setup(20, 7);
        bows.push(Vec::new());
        bows.push(Vec::new());
        let trained = train_online_lda(&bows, &vocab, &small_hyper(2, 1)).unwrap();
        assert_eq!(trained.skipped_docs, 2);
    }

    #[test]
    fn infer_empty_document_gets_uniform_theta() {
        let (bows, vocab, _) = planted_setup(20, 7);
        let trained = train_online_lda(&bows, &vocab, &small_hyper(4, 1)).unwrap();
        let doc = trained.model.infer_document(&Vec::new());
        assert!(doc.oov_fallback);
        for &t in &doc.theta {
            assert_abs_diff_eq!(t, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn theta_is_normalized_over_many_documents() {
        let corpus = planted_topic_corpus(1000, 25, 12, 4, 13);
        let vocab = Vocabulary::build(&corpus.documents, 1).unwrap();
        let bows = bow_corpus(&corpus.documents, &vocab);
        let trained = train_online_lda(&bows[..200], &vocab, &small_hyper(4, 1)).unwrap();
        for bow in &bows {
            let doc = trained.model.infer_document(bow);
            let sum: f64 = doc.theta.iter().sum();
            assert!((sum - 1.0).abs() < 1e-8);
            assert!(doc.gamma.iter().all(|&g| g > 0.0));
        }
    }

    #[test]
    fn documents_from_planted_topic_infer_that_topic() {
        let (bows, vocab, corpus) = planted_setup(400, 19);
        let trained = train_online_lda(&bows, &vocab, &small_hyper(2, 2)).unwrap();
        // Map learned topic -> planted topic via top terms.
        let top0 = trained.model.top_terms(0, 10).unwrap();
        let planted_of_learned0 = if top0
            .iter()
            .filter(|(t, _)| corpus.topic_words[0].contains(t))
            .count()
            >= 5
        {
            0
        } else {
            1
        };
        for (bow, &planted) in bows.iter().zip(&corpus.topic_of_doc).take(50) {
            let doc = trained.model.infer_document(bow);
            let best = if doc.theta[0] >= doc.theta[1] { 0 } else { 1 };
            let expected_learned = if planted == planted_of_learned0 { 0 } else { 1 };
            assert_eq!(best, expected_learned);
            assert!(doc.theta[best] >= 0.9, "theta {:?}", doc.theta);
        }
    }

    #[test]
    fn top_terms_cover_planted_vocabulary_and_are_deterministic() {
        let (bows, vocab, corpus) = planted_setup(400, 23);
        let trained = train_online_lda(&bows, &vocab, &small_hyper(2, 2)).unwrap();
        for topic in 0..2 {
            let a = trained.model.top_terms(topic, 10).unwrap();
            let b = trained.model.top_terms(topic, 10).unwrap();
            assert_eq!(a, b);
            let owner = if corpus.topic_words[0].contains(&a[0].0) { 0 } else { 1 };
            for (term, _) in &a {
                assert!(corpus.topic_words[owner].contains(term));
            }
        }
        // t = V returns a permutation of the vocabulary.
        let all = trained.model.top_terms(0, vocab.len()).unwrap();
        let mut terms: Vec<&String> = all.iter().map(|(t, _)| t).collect();
        terms.sort();
        let mut expected: Vec<&String> = vocab.terms().iter().collect();
        expected.sort();
        assert_eq!(terms, expected);
        assert!(trained.model.top_terms(2, 5).is_err());
        assert!(trained.model.top_terms(0, vocab.len() + 1).is_err());
    }

    #[test]
    fn degenerate_single_word_perplexity_is_near_one() {
        let documents: Vec<Vec<String>> = (0..20).map(|_| vec!["only".to_string(); 30]).collect();
        let vocab = Vocabulary::build(&documents, 1).unwrap();
        let bows = bow_corpus(&documents, &vocab);
        let hyper = LdaHyper {
            n_topics: 1,
            passes: 2,
            eta_mode: EtaMode::Symmetric,
            ..small_hyper(1, 2)
        };
        let trained = train_online_lda(&bows, &vocab, &hyper).unwrap();
        let p = perplexity(&trained.model, &bows).unwrap();
        assert!(p >= 1.0 - 1e-9);
        assert!(p <= 1.2, "perplexity {p}");
    }

    #[test]
    fn uniform_corpus_perplexity_near_vocabulary_size() {
        // One planted topic over V=50 words = uniform draws.
        let corpus = planted_topic_corpus(200, 80, 50, 1, 31);
        let vocab = Vocabulary::build(&corpus.documents, 1).unwrap();
        let bows = bow_corpus(&corpus.documents, &vocab);
        let trained = train_online_lda(&bows[..150], &vocab, &small_hyper(3, 2)).unwrap();
        let p = perplexity(&trained.model, &bows[150..]).unwrap();
        assert!(p >= 1.0);
        assert!((p - 50.0).abs() / 50.0 <= 0.2, "perplexity {p} not within 20% of 50");
    }

    #[test]
    fn trained_model_beats_random_lambda_on_heldout() {
        let (bows, vocab, _) = planted_setup(300, 37);
        let (train, heldout) = bows.split_at(250);
        let trained = train_online_lda(train, &vocab, &small_hyper(2, 2)).unwrap();
        let random = random_model(&vocab, 2, 999).unwrap();
        let p_trained = perplexity(&trained.model, heldout).unwrap();
        let p_random = perplexity(&random, heldout).unwrap();
        assert!(
            p_trained < p_random,
            "trained {p_trained} vs random {p_random}"
        );
    }

    #[test]
    fn training_is_bit_reproducible_across_thread_modes() {
        let (bows, vocab, _) = planted_setup(60, 41);
        let hyper = small_hyper(3, 1);
        let a = train_online_lda(&bows, &vocab, &hyper).unwrap();
        let b = train_online_lda(&bows, &vocab, &hyper).unwrap();
        assert_eq!(a.model.lambda, b.model.lambda);
        let sequential = LdaHyper { single_thread: true, ..hyper };
        let c = train_online_lda(&bows, &vocab, &sequential).unwrap();
        assert_eq!(a.model.lambda, c.model.lambda);
        assert_eq!(a.model.alpha, c.model.alpha);
    }

    #[test]
    fn e_step_matches_coordinate_ascent_oracle() {
        // Brute-force oracle with an explicit phi matrix, run to 1e-10.
        fn oracle_gamma(bow: &BowDoc, model: &TopicModel) -> Vec<f64> {
            let k = model.n_topics();
            let elog_beta = &model.elog_beta;
            let mut gamma: Vec<f64> = {
                let n_d: f64 = bow.iter().map(|&(_, c)| c).sum();
                model.alpha().iter().map(|&a| a + n_d / k as f64).collect()
            };
            for _ in 0..10_000 {
                let elog_theta = dirichlet_expectation(&gamma);
                // explicit responsibilities phi[j][kk]
                let mut phi = vec![vec![0.0f64; k]; bow.len()];
                for (j, &(id, _)) in bow.iter().enumerate() {
                    let mut row_max = f64::NEG_INFINITY;
                    for kk in 0..k {
                        phi[j][kk] = elog_theta[kk] + elog_beta[[kk, id]];
                        row_max = row_max.max(phi[j][kk]);
                    }
                    let mut sum = 0.0;
                    for p in phi[j].iter_mut() {
                        *p = (*p - row_max).exp();
                        sum += *p;
                    }
                    for p in phi[j].iter_mut() {
                        *p /= sum;
                    }
                }
                let mut next: Vec<f64> = model.alpha().to_vec();
                for (j, &(_, ct)) in bow.iter().enumerate() {
                    for kk in 0..k {
                        next[kk] += ct * phi[j][kk];
                    }
                }
                let delta: f64 = next.iter().zip(&gamma).map(|(a, b)| (a - b).abs()).sum();
                gamma = next;
                if delta < 1e-10 {
                    break;
                }
            }
            gamma
        }

        let corpus = planted_topic_corpus(100, 20, 12, 2, 47);
        let vocab = Vocabulary::build(&corpus.documents, 1).unwrap();
        assert!(vocab.len() <= 30);
        let bows = bow_corpus(&corpus.documents, &vocab);
        let trained = train_online_lda(&bows, &vocab, &small_hyper(2, 1)).unwrap();
        for bow in bows.iter().take(40) {
            let fast = trained.model.infer_document_with(bow, 1e-12, 10_000);
            let slow = oracle_gamma(bow, &trained.model);
            for (f, s) in fast.gamma.iter().zip(&slow) {
                assert!((f - s).abs() < 1e-4, "gamma {f} vs oracle {s}");
            }
        }
    }

    #[test]
    fn alpha_fixed_point_is_stationary_and_positive() {
        let (bows, vocab, _) = planted_setup(50, 53);
        let hyper = LdaHyper {
            alpha_mode: AlphaMode::Auto,
            ..small_hyper(3, 1)
        };
        let mut trained = train_online_lda(&bows, &vocab, &hyper).unwrap();
        assert!(trained.model.alpha().iter().all(|&a| a > 0.0));

        // Statistics exactly matching the current alpha's expectation
        // leave alpha unchanged.
        let alpha = trained.model.alpha().to_vec();
        let expectation = dirichlet_expectation(&alpha);
        // Build gammas whose mean dirichlet expectation equals the
        // alpha's own expectation: use alpha scaled by a large constant
        // is not exact; instead pass a single pseudo-gamma equal to the
        // expectation by inverting through one observation: simplest is
        // to feed gammas = [alpha] replicated, whose expectation equals
        // E[log theta | alpha] exactly.
        let gammas = vec![alpha.clone(); 8];
        let _ = expectation;
        alpha_auto_update(&mut trained.model, &gammas, 1.0);
        for (before, after) in alpha.iter().zip(trained.model.alpha()) {
            assert_abs_diff_eq!(before, after, epsilon = 1e-6);
        }
    }

    #[test]
    fn model_json_round_trip() {
        let (bows, vocab, _) = planted_setup(40, 61);
        let trained = train_online_lda(&bows, &vocab, &small_hyper(2, 1)).unwrap();
        let json = trained.model.to_json();
        let loaded = TopicModel::from_json(&json).unwrap();
        assert_eq!(loaded.n_topics(), 2);
        assert_eq!(loaded.vocab(), trained.model.vocab());
        assert_eq!(loaded.lambda(), trained.model.lambda());
        assert_eq!(loaded.alpha(), trained.model.alpha());
        assert_eq!(loaded.update_count(), trained.model.update_count());
        // Inference agrees bit for bit after a round trip.
        let doc = trained.model.infer_document(&bows[0]);
        let doc2 = loaded.infer_document(&bows[0]);
        assert_eq!(doc, doc2);
        // Schema fields present as documented.
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["K", "alpha", "eta", "kappa", "tau0", "t", "vocab", "lambda"] {
            assert!(value.get(key).is_some(), "missing key {key}");
        }
    }

    #[test]
    fn lambda_rows_normalize_to_distributions() {
        let (bows, vocab, _) = planted_setup(50, 67);
        let trained = train_online_lda(&bows, &vocab, &small_hyper(3, 1)).unwrap();
        for topic in 0..3 {
            let dist = trained.model.topic_word_distribution(topic).unwrap();
            let sum: f64 = dist.iter().sum();
            assert!((sum - 1.0).abs() < 1e-8);
            assert!(dist.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn word_responsibilities_are_normalized() {
        let (bows, vocab, _) = planted_setup(50, 71);
        let trained = train_online_lda(&bows, &vocab, &small_hyper(2, 1)).unwrap();
        let resp = trained.model.word_responsibilities(&bows[0]);
        assert_eq!(resp.len(), bows[0].len());
        for (_, row) in resp {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
