//! Pipeline configuration: a single JSON document with defaults for
//! every knob, validated in one pass that collects all errors.
//!
//! Relative input paths resolve against the config file's directory, so
//! a fixture directory can be moved wholesale.

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use revpic_core::captioner;
use revpic_core::classifier::SoftmaxHyper;
use revpic_core::corpus::TokenizerConfig;
use revpic_core::metrics::BleuConfig;
use revpic_core::topics::{AlphaMode, EtaMode, LdaHyper};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputPaths {
    pub businesses: PathBuf,
    pub reviews: PathBuf,
    pub photos: PathBuf,
    pub features: PathBuf,
    /// UTF-8 stopword list, one token per line; the built-in English
    /// list is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerSettings {
    pub lowercase: bool,
    pub min_token_len: i64,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        TokenizerSettings {
            lowercase: true,
            min_token_len: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSettings {
    pub learning_rate: f64,
    pub epochs: i64,
    pub batch_size: i64,
    pub l2: f64,
    pub k_folds: i64,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        ClassifierSettings {
            learning_rate: 0.0001,
            epochs: 160,
            batch_size: 32,
            l2: 0.0001,
            k_folds: 6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptionerSettings {
    pub order: i64,
    pub k: i64,
    pub max_seq_len: i64,
    pub n_candidates: i64,
    pub smoothing: f64,
}

impl Default for CaptionerSettings {
    fn default() -> Self {
        CaptionerSettings {
            order: 2,
            k: 5,
            max_seq_len: 13,
            n_candidates: 5,
            smoothing: 0.01,
        }
    }
}

/// LDA settings. `passes` sweeps the corpus; `e_step_max_iter` caps the
/// per-document inner loop (what online LDA implementations usually call
/// "iterations", hence the 150 default).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaSettings {
    pub n_topics: i64,
    pub passes: i64,
    pub kappa: f64,
    pub tau0: f64,
    pub alpha: AlphaMode,
    pub eta: EtaMode,
    pub minibatch: i64,
    pub e_step_tol: f64,
    pub e_step_max_iter: i64,
}

impl Default for LdaSettings {
    fn default() -> Self {
        LdaSettings {
            n_topics: 20,
            passes: 1,
            kappa: 0.5,
            tau0: 1.0,
            alpha: AlphaMode::Auto,
            eta: EtaMode::Symmetric,
            minibatch: 256,
            e_step_tol: 1e-3,
            e_step_max_iter: 150,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RecommenderSettings {
    pub t: i64,
    pub phi: i64,
}

impl Default for RecommenderSettings {
    fn default() -> Self {
        RecommenderSettings { t: 10, phi: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BleuSettings {
    pub max_n: i64,
    pub thresholds: Vec<f64>,
}

impl Default for BleuSettings {
    fn default() -> Self {
        BleuSettings {
            max_n: 4,
            thresholds: (0..10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub inputs: InputPaths,
    #[serde(default = "default_true")]
    pub restaurant_filter: bool,
    #[serde(default)]
    pub tokenizer: TokenizerSettings,
    #[serde(default = "default_min_doc_count")]
    pub vocab_min_doc_count: i64,
    #[serde(default)]
    pub classifier: ClassifierSettings,
    #[serde(default)]
    pub captioner: CaptionerSettings,
    #[serde(default)]
    pub lda: LdaSettings,
    #[serde(default)]
    pub recommender: RecommenderSettings,
    #[serde(default)]
    pub bleu: BleuSettings,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

fn default_min_doc_count() -> i64 {
    2
}

impl PipelineConfig {
    /// Resolve the input paths against the directory of the config file
    /// they came from.
    pub fn resolve_paths(&mut self, config_path: &Path) {
        let base = config_path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.inputs.businesses);
        resolve(&mut self.inputs.reviews);
        resolve(&mut self.inputs.photos);
        resolve(&mut self.inputs.features);
        if let Some(stopwords) = &mut self.inputs.stopwords {
            resolve(stopwords);
        }
    }

    /// Collect every validation problem instead of stopping at the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let mut check_path = |name: &str, path: &Path| {
            if !path.is_file() {
                errors.push(format!("inputs.{name}: file not found: {}", path.display()));
            }
        };
        check_path("businesses", &self.inputs.businesses);
        check_path("reviews", &self.inputs.reviews);
        check_path("photos", &self.inputs.photos);
        check_path("features", &self.inputs.features);
        if let Some(stopwords) = &self.inputs.stopwords {
            check_path("stopwords", stopwords);
        }

        if self.tokenizer.min_token_len < 1 {
            errors.push(format!(
                "tokenizer.min_token_len {} must be >= 1",
                self.tokenizer.min_token_len
            ));
        }
        if self.vocab_min_doc_count < 1 {
            errors.push(format!(
                "vocab_min_doc_count {} must be >= 1",
                self.vocab_min_doc_count
            ));
        }

        if !(self.classifier.learning_rate > 0.0) {
            errors.push("classifier.learning_rate must be > 0".into());
        }
        if self.classifier.epochs < 1 {
            errors.push(format!("classifier.epochs {} must be >= 1", self.classifier.epochs));
        }
        if self.classifier.batch_size < 0 {
            errors.push(format!(
                "classifier.batch_size {} must be >= 0 (0 = full batch)",
                self.classifier.batch_size
            ));
        }
        if self.classifier.l2 < 0.0 {
            errors.push("classifier.l2 must be >= 0".into());
        }
        if self.classifier.k_folds < 2 {
            errors.push(format!("classifier.k_folds {} must be >= 2", self.classifier.k_folds));
        }

        if !(2..=3).contains(&self.captioner.order) {
            errors.push(format!("captioner.order {} must be 2 or 3", self.captioner.order));
        }
        if self.captioner.k < 2 {
            errors.push(format!("captioner.k {} must be >= 2", self.captioner.k));
        }
        if self.captioner.max_seq_len < 1 {
            errors.push(format!(
                "captioner.max_seq_len {} must be >= 1",
                self.captioner.max_seq_len
            ));
        }
        if self.captioner.n_candidates < 1 {
            errors.push(format!(
                "captioner.n_candidates {} must be >= 1",
                self.captioner.n_candidates
            ));
        }
        if !(self.captioner.smoothing > 0.0) {
            errors.push("captioner.smoothing must be > 0".into());
        }

        if self.lda.n_topics < 2 {
            errors.push(format!("lda.n_topics {} must be >= 2", self.lda.n_topics));
        }
        if !(0.5..=1.0).contains(&self.lda.kappa) {
            errors.push(format!("lda.kappa {} out of [0.5,1.0]", self.lda.kappa));
        }
        if !(self.lda.tau0 >= 0.0) {
            errors.push(format!("lda.tau0 {} must be >= 0", self.lda.tau0));
        }
        if self.lda.passes < 1 {
            errors.push(format!("lda.passes {} must be >= 1", self.lda.passes));
        }
        if self.lda.minibatch < 1 {
            errors.push(format!("lda.minibatch {} must be >= 1", self.lda.minibatch));
        }
        if !(self.lda.e_step_tol > 0.0) {
            errors.push("lda.e_step_tol must be > 0".into());
        }
        if self.lda.e_step_max_iter < 1 {
            errors.push(format!(
                "lda.e_step_max_iter {} must be >= 1",
                self.lda.e_step_max_iter
            ));
        }

        if self.recommender.t < 0 {
            errors.push(format!("recommender.t {} must be >= 0", self.recommender.t));
        }
        if self.recommender.phi < 0 {
            errors.push(format!("recommender.phi {} must be >= 0", self.recommender.phi));
        }

        if self.bleu.max_n < 1 {
            errors.push(format!("bleu.max_n {} must be >= 1", self.bleu.max_n));
        }
        for &t in &self.bleu.thresholds {
            if !(0.0..=1.0).contains(&t) {
                errors.push(format!("bleu.thresholds entry {t} out of [0,1]"));
            }
        }
        errors
    }

    /// Tokenizer with the configured stopword list loaded.
    pub fn tokenizer_config(&self) -> anyhow::Result<TokenizerConfig> {
        let mut config = TokenizerConfig::default();
        config.lowercase = self.tokenizer.lowercase;
        config.min_token_len = NonZeroUsize::new(self.tokenizer.min_token_len as usize)
            .ok_or_else(|| anyhow::anyhow!("min_token_len must be >= 1"))?;
        if let Some(path) = &self.inputs.stopwords {
            config = config.with_stopword_file(path)?;
        }
        Ok(config)
    }

    pub fn softmax_hyper(&self, seed: u64) -> SoftmaxHyper {
        SoftmaxHyper {
            learning_rate: self.classifier.learning_rate,
            epochs: self.classifier.epochs as usize,
            batch_size: self.classifier.batch_size as usize,
            l2: self.classifier.l2,
            seed,
        }
    }

    pub fn lda_hyper(&self, seed: u64, single_thread: bool) -> LdaHyper {
        LdaHyper {
            n_topics: self.lda.n_topics as usize,
            passes: self.lda.passes as usize,
            alpha_mode: self.lda.alpha,
            eta_mode: self.lda.eta,
            kappa: self.lda.kappa,
            tau0: self.lda.tau0,
            minibatch: self.lda.minibatch as usize,
            seed,
            e_step_tol: self.lda.e_step_tol,
            e_step_max_iter: self.lda.e_step_max_iter as usize,
            single_thread,
        }
    }

    pub fn bleu_config(&self) -> BleuConfig {
        BleuConfig::uniform(self.bleu.max_n as usize)
    }

    pub fn caption_params(&self) -> CaptionParams {
        CaptionParams {
            order: self.captioner.order as usize,
            k: self.captioner.k as usize,
            max_seq_len: self.captioner.max_seq_len as usize,
            n_candidates: self.captioner.n_candidates as usize,
            smoothing: self.captioner.smoothing,
        }
    }
}

/// Captioner knobs converted to the core types.
#[derive(Debug, Clone, Copy)]
pub struct CaptionParams {
    pub order: usize,
    pub k: usize,
    pub max_seq_len: usize,
    pub n_candidates: usize,
    pub smoothing: f64,
}

impl CaptionParams {
    pub fn train(
        &self,
        examples: &[(revpic_core::corpus::Label, Vec<String>)],
    ) -> revpic_core::Result<captioner::ConditionalWordModel> {
        captioner::ConditionalWordModel::train(examples, self.order, self.smoothing)
    }
}

/// Load, resolve, and validate a config file. All problems are returned
/// together: either the parse error alone, or every semantic error found.
pub fn validate_config(path: &Path) -> Result<PipelineConfig, Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
    let mut config: PipelineConfig =
        serde_json::from_str(&text).map_err(|e| vec![format!("invalid config JSON: {e}")])?;
    config.resolve_paths(path);
    let errors = config.validate();
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(errors)
    }
}
