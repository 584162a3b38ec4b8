//! Pipeline orchestration. Stages communicate only through files in the
//! output directory, each stage is cached by a digest of its inputs and
//! settings, and failures leave `.partial` outputs behind for
//! inspection.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use revpic_core::captioner::{CaptionCandidate, PositionChoice};
use revpic_core::classifier::{
    cross_validate, fill_none_labels, labeled_dataset, train_softmax, LabelDistribution,
};
use revpic_core::corpus::{
    corpus_stats, load_businesses, load_features, load_photos, load_reviews, CorpusStats, Label,
    PhotoRecord, ReviewRecord, Vocabulary,
};
use revpic_core::metrics::{
    bleu_confidence_curve, caption_confidence, corpus_bleu, BleuConfig, CurvePoint, ScoredCaption,
};
use revpic_core::recommender::{rank_images, representative_terms, MatchPhase};
use revpic_core::topics::{train_online_lda, TopicModel};

use crate::config::PipelineConfig;
use crate::report;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A stage failure: which stage and why. Partial outputs keep their
/// `.partial` suffix when this is returned.
#[derive(Debug)]
pub struct StageFailure {
    pub stage: &'static str,
    pub source: anyhow::Error,
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {:#}", self.stage, self.source)
    }
}

impl std::error::Error for StageFailure {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Classify,
    Caption,
    Score,
    Topics,
    Recommend,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Classify,
        Stage::Caption,
        Stage::Score,
        Stage::Topics,
        Stage::Recommend,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Classify => "classify",
            Stage::Caption => "caption",
            Stage::Score => "score",
            Stage::Topics => "topics",
            Stage::Recommend => "recommend",
            Stage::Report => "report",
        }
    }
}

/// Canonical locations of every stage artifact inside the out dir.
pub struct OutLayout {
    pub out: PathBuf,
}

impl OutLayout {
    pub fn new(out: &Path) -> Self {
        OutLayout { out: out.to_path_buf() }
    }

    pub fn businesses(&self) -> PathBuf {
        self.out.join("businesses.jsonl")
    }
    pub fn reviews(&self) -> PathBuf {
        self.out.join("reviews.jsonl")
    }
    pub fn photos(&self) -> PathBuf {
        self.out.join("photos.jsonl")
    }
    pub fn corpus_stats(&self) -> PathBuf {
        self.out.join("corpus_stats.json")
    }
    pub fn cv_report(&self) -> PathBuf {
        self.out.join("cv_report.json")
    }
    pub fn predictions(&self) -> PathBuf {
        self.out.join("predictions.jsonl")
    }
    pub fn photos_labeled(&self) -> PathBuf {
        self.out.join("photos_labeled.jsonl")
    }
    pub fn captions(&self) -> PathBuf {
        self.out.join("captions.jsonl")
    }
    pub fn scores(&self) -> PathBuf {
        self.out.join("scores.json")
    }
    pub fn best_captions(&self) -> PathBuf {
        self.out.join("best_captions.jsonl")
    }
    pub fn model(&self) -> PathBuf {
        self.out.join("model.json")
    }
    pub fn recommendations(&self) -> PathBuf {
        self.out.join("recommendations.jsonl")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }
    pub fn manifest(&self) -> PathBuf {
        self.out.join("run_manifest.json")
    }
    fn cache(&self) -> PathBuf {
        self.out.join("cache.json")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub seconds: f64,
    pub cached: bool,
    /// Output path relative to the out dir -> sha256 of the contents.
    pub outputs: BTreeMap<String, String>,
}

/// Full-run manifest: the config snapshot plus per-stage timings and
/// output digests. Digests are recomputable from the files on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub single_thread: bool,
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct StageCache {
    stages: BTreeMap<String, CacheEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_str(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

/// Everything a stage needs.
pub struct PipelineCtx {
    pub config: PipelineConfig,
    pub layout: OutLayout,
    pub seed: u64,
    pub single_thread: bool,
    /// Restrict the recommend stage to one business id.
    pub business_filter: Option<String>,
}

impl PipelineCtx {
    pub fn new(config: PipelineConfig, out: &Path, seed: u64, single_thread: bool) -> Self {
        PipelineCtx {
            config,
            layout: OutLayout::new(out),
            seed,
            single_thread,
            business_filter: None,
        }
    }
}

enum OutputSpec {
    File(PathBuf),
    Dir(PathBuf),
}

impl OutputSpec {
    fn final_path(&self) -> &Path {
        match self {
            OutputSpec::File(p) | OutputSpec::Dir(p) => p,
        }
    }

    fn partial_path(&self) -> PathBuf {
        let p = self.final_path();
        let mut name = p.file_name().expect("output has a file name").to_os_string();
        name.push(".partial");
        p.with_file_name(name)
    }
}

/// Collect (relative path, digest) pairs for an output spec.
fn digest_output(out_root: &Path, spec: &OutputSpec) -> anyhow::Result<BTreeMap<String, String>> {
    let mut digests = BTreeMap::new();
    match spec {
        OutputSpec::File(p) => {
            let rel = p.strip_prefix(out_root).unwrap_or(p).to_string_lossy().into_owned();
            digests.insert(rel, sha256_file(p)?);
        }
        OutputSpec::Dir(dir) => {
            let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            entries.sort();
            for entry in entries {
                if entry.is_file() {
                    let rel = entry
                        .strip_prefix(out_root)
                        .unwrap_or(&entry)
                        .to_string_lossy()
                        .into_owned();
                    digests.insert(rel, sha256_file(&entry)?);
                }
            }
        }
    }
    Ok(digests)
}

struct StageRunner<'a> {
    ctx: &'a PipelineCtx,
    cache: StageCache,
}

impl<'a> StageRunner<'a> {
    fn new(ctx: &'a PipelineCtx) -> anyhow::Result<Self> {
        fs::create_dir_all(&ctx.layout.out)?;
        let cache_path = ctx.layout.cache();
        let cache = if cache_path.is_file() {
            serde_json::from_str(&fs::read_to_string(&cache_path)?).unwrap_or_default()
        } else {
            StageCache::default()
        };
        Ok(StageRunner { ctx, cache })
    }

    fn save_cache(&self) -> anyhow::Result<()> {
        fs::write(
            self.ctx.layout.cache(),
            serde_json::to_string_pretty(&self.cache)?,
        )?;
        Ok(())
    }

    /// Run one stage behind the digest cache. `key_extra` captures the
    /// stage-relevant settings; `inputs` are the files whose digests
    /// invalidate the cache; `body` writes to the partial paths handed
    /// to it, which are renamed into place on success.
    fn run_stage(
        &mut self,
        stage: Stage,
        inputs: &[PathBuf],
        outputs: &[OutputSpec],
        key_extra: &str,
        body: impl FnOnce(&[PathBuf]) -> anyhow::Result<()>,
    ) -> Result<StageRecord, StageFailure> {
        let fail = |source: anyhow::Error| StageFailure { stage: stage.name(), source };
        let started = Instant::now();

        let mut key_material = format!("{}\u{0}{}\u{0}{}", stage.name(), TOOL_VERSION, key_extra);
        for input in inputs {
            if !input.exists() {
                return Err(fail(anyhow::anyhow!(
                    "missing input {} (run the earlier stage first)",
                    input.display()
                )));
            }
            let digest = sha256_file(input).map_err(fail)?;
            key_material.push('\u{0}');
            key_material.push_str(&digest);
        }
        let key = sha256_str(&key_material);

        if let Some(entry) = self.cache.stages.get(stage.name()) {
            if entry.key == key {
                let all_present = outputs.iter().all(|spec| {
                    digest_output(&self.ctx.layout.out, spec)
                        .map(|d| {
                            d.iter()
                                .all(|(rel, dig)| entry.outputs.get(rel) == Some(dig))
                                && !d.is_empty()
                        })
                        .unwrap_or(false)
                });
                if all_present {
                    return Ok(StageRecord {
                        seconds: started.elapsed().as_secs_f64(),
                        cached: true,
                        outputs: entry.outputs.clone(),
                    });
                }
            }
        }

        let partials: Vec<PathBuf> = outputs.iter().map(OutputSpec::partial_path).collect();
        for (spec, partial) in outputs.iter().zip(&partials) {
            if partial.exists() {
                if matches!(spec, OutputSpec::Dir(_)) {
                    fs::remove_dir_all(partial).map_err(|e| fail(e.into()))?;
                } else {
                    fs::remove_file(partial).map_err(|e| fail(e.into()))?;
                }
            }
        }

        body(&partials).map_err(fail)?;

        for (spec, partial) in outputs.iter().zip(&partials) {
            let final_path = spec.final_path();
            if final_path.exists() {
                if matches!(spec, OutputSpec::Dir(_)) {
                    fs::remove_dir_all(final_path).map_err(|e| fail(e.into()))?;
                } else {
                    fs::remove_file(final_path).map_err(|e| fail(e.into()))?;
                }
            }
            fs::rename(partial, final_path).map_err(|e| fail(e.into()))?;
        }

        let mut digests = BTreeMap::new();
        for spec in outputs {
            digests.extend(digest_output(&self.ctx.layout.out, spec).map_err(fail)?);
        }
        self.cache.stages.insert(
            stage.name().to_string(),
            CacheEntry { key, outputs: digests.clone() },
        );
        self.save_cache().map_err(fail)?;
        Ok(StageRecord {
            seconds: started.elapsed().as_secs_f64(),
            cached: false,
            outputs: digests,
        })
    }
}

/// Run the named stages in pipeline order and return their records.
pub fn run_stages(
    ctx: &PipelineCtx,
    stages: &[Stage],
) -> Result<BTreeMap<String, StageRecord>, StageFailure> {
    let mut runner = StageRunner::new(ctx).map_err(|source| StageFailure {
        stage: "setup",
        source,
    })?;
    let mut records = BTreeMap::new();
    for stage in Stage::ALL {
        if !stages.contains(&stage) {
            continue;
        }
        let record = match stage {
            Stage::Ingest => stage_ingest(ctx, &mut runner)?,
            Stage::Classify => stage_classify(ctx, &mut runner)?,
            Stage::Caption => stage_caption(ctx, &mut runner)?,
            Stage::Score => stage_score(ctx, &mut runner)?,
            Stage::Topics => stage_topics(ctx, &mut runner)?,
            Stage::Recommend => stage_recommend(ctx, &mut runner)?,
            Stage::Report => stage_report(ctx, &mut runner)?,
        };
        records.insert(stage.name().to_string(), record);
    }
    Ok(records)
}

/// Execute the whole pipeline and write the run manifest.
pub fn run_pipeline(ctx: &PipelineCtx) -> Result<RunManifest, StageFailure> {
    let stages = run_stages(ctx, &Stage::ALL)?;
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        seed: ctx.seed,
        single_thread: ctx.single_thread,
        config: serde_json::to_value(&ctx.config).expect("config serializes"),
        stages,
    };
    fs::write(
        ctx.layout.manifest(),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| StageFailure {
        stage: "manifest",
        source: e.into(),
    })?;
    Ok(manifest)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut file, &row)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = fs::File::open(path)
        .map_err(|e| anyhow::anyhow!("cannot open {}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line)
                .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1))?,
        );
    }
    Ok(rows)
}

// ---------------------------------------------------------------------
// Wire formats
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestStats {
    #[serde(flatten)]
    pub stats: CorpusStats,
    pub unknown_label_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub photo_id: String,
    pub label: Label,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositionJson {
    pub p: f64,
    pub topk_words: Vec<String>,
    pub topk_probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateJson {
    pub words: Vec<String>,
    pub positions: Vec<PositionJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionRow {
    pub photo_id: String,
    pub label: Label,
    pub candidates: Vec<CandidateJson>,
}

impl CandidateJson {
    pub fn from_candidate(candidate: &CaptionCandidate) -> Self {
        CandidateJson {
            words: candidate.words.clone(),
            positions: candidate
                .positions
                .iter()
                .map(|c| PositionJson {
                    p: c.p_selected,
                    topk_words: c.topk_words.clone(),
                    topk_probs: c.topk_probs.clone(),
                })
                .collect(),
        }
    }

    /// Rebuild the core candidate; the selected word is the head of each
    /// top-k window.
    pub fn to_candidate(&self, label: Label) -> anyhow::Result<CaptionCandidate> {
        let positions = self
            .positions
            .iter()
            .map(|p| {
                let selected = p
                    .topk_words
                    .first()
                    .ok_or_else(|| anyhow::anyhow!("empty topk_words"))?
                    .clone();
                Ok(PositionChoice {
                    selected,
                    p_selected: p.p,
                    topk_words: p.topk_words.clone(),
                    topk_probs: p.topk_probs.clone(),
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        Ok(CaptionCandidate {
            words: self.words.clone(),
            positions,
            label,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestCaptionRow {
    pub photo_id: String,
    pub words: Vec<String>,
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionScoreRow {
    pub photo_id: String,
    pub candidate_index: usize,
    pub confidence: f64,
    pub has_reference: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BleuTable {
    /// BLEU-1 .. BLEU-max_n with uniform weights per order.
    pub bleu: Vec<f64>,
    /// Modified n-gram precisions p_1 .. p_max_n.
    pub precisions: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoresJson {
    pub captions: Vec<CaptionScoreRow>,
    pub corpus_bleu: Option<BleuTable>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecPhotoJson {
    pub photo_id: String,
    pub phase: MatchPhase,
    pub matched_terms: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecommendationRow {
    pub review_id: String,
    pub photos: Vec<RecPhotoJson>,
}

// ---------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------

fn stage_ingest(ctx: &PipelineCtx, runner: &mut StageRunner) -> Result<StageRecord, StageFailure> {
    let config = &ctx.config;
    let layout = &ctx.layout;
    let inputs = vec![
        config.inputs.businesses.clone(),
        config.inputs.reviews.clone(),
        config.inputs.photos.clone(),
    ];
    let outputs = vec![
        OutputSpec::File(layout.businesses()),
        OutputSpec::File(layout.reviews()),
        OutputSpec::File(layout.photos()),
        OutputSpec::File(layout.corpus_stats()),
    ];
    let key_extra = format!("filter={}", config.restaurant_filter);
    runner.run_stage(Stage::Ingest, &inputs, &outputs, &key_extra, |partials| {
        let businesses = load_businesses(&config.inputs.businesses, config.restaurant_filter)?;
        let ids: HashSet<&str> = businesses.iter().map(|b| b.business_id.as_str()).collect();
        let reviews: Vec<ReviewRecord> = load_reviews(&config.inputs.reviews)?
            .into_iter()
            .filter(|r| ids.contains(r.business_id.as_str()))
            .collect();
        let loaded = load_photos(&config.inputs.photos)?;
        let photos: Vec<PhotoRecord> = loaded
            .records
            .into_iter()
            .filter(|p| ids.contains(p.business_id.as_str()))
            .collect();
        let stats = IngestStats {
            stats: corpus_stats(&businesses, &reviews, &photos),
            unknown_label_count: loaded.unknown_label_count,
        };
        write_jsonl(&partials[0], &businesses)?;
        write_jsonl(&partials[1], &reviews)?;
        write_jsonl(&partials[2], &photos)?;
        fs::write(&partials[3], serde_json::to_string_pretty(&stats)?)?;
        Ok(())
    })
}

fn stage_classify(ctx: &PipelineCtx, runner: &mut StageRunner) -> Result<StageRecord, StageFailure> {
    let config = &ctx.config;
    let layout = &ctx.layout;
    let inputs = vec![layout.photos(), config.inputs.features.clone()];
    let outputs = vec![
        OutputSpec::File(layout.cv_report()),
        OutputSpec::File(layout.predictions()),
        OutputSpec::File(layout.photos_labeled()),
    ];
    let key_extra = format!(
        "{}|seed={}",
        serde_json::to_string(&config.classifier).expect("serializable"),
        ctx.seed
    );
    runner.run_stage(Stage::Classify, &inputs, &outputs, &key_extra, |partials| {
        let photos = load_photos(&layout.photos())?.records;
        let features = load_features(&config.inputs.features, None)?;
        let (x, y, _) = labeled_dataset(&features, &photos)?;
        let hyper = config.softmax_hyper(ctx.seed);
        let cv = cross_validate(&x, &y, config.classifier.k_folds as usize, &hyper, ctx.seed)?;
        let model = train_softmax(&x, &y, &hyper)?;
        let filled = fill_none_labels(&photos, &model, &features)?;
        let predictions: Vec<PredictionRow> = filled
            .distributions
            .iter()
            .map(|(photo_id, dist): &(String, LabelDistribution)| PredictionRow {
                photo_id: photo_id.clone(),
                label: dist.argmax_label(),
                probs: dist.probs().to_vec(),
            })
            .collect();
        fs::write(&partials[0], serde_json::to_string_pretty(&cv)?)?;
        write_jsonl(&partials[1], &predictions)?;
        write_jsonl(&partials[2], &filled.photos)?;
        Ok(())
    })
}

fn stage_caption(ctx: &PipelineCtx, runner: &mut StageRunner) -> Result<StageRecord, StageFailure> {
    let config = &ctx.config;
    let layout = &ctx.layout;
    let inputs = vec![layout.photos_labeled()];
    let outputs = vec![OutputSpec::File(layout.captions())];
    let key_extra = format!(
        "{}|{}",
        serde_json::to_string(&config.captioner).expect("serializable"),
        serde_json::to_string(&config.tokenizer).expect("serializable"),
    );
    runner.run_stage(Stage::Caption, &inputs, &outputs, &key_extra, |partials| {
        let photos = load_photos(&layout.photos_labeled())?.records;
        let tokenizer = config.tokenizer_config()?;
        let params = config.caption_params();
        let examples: Vec<(Label, Vec<String>)> = photos
            .iter()
            .filter(|p| p.has_caption())
            .map(|p| (p.label, revpic_core::corpus::tokenize(&p.caption, &tokenizer)))
            .filter(|(_, tokens)| !tokens.is_empty())
            .collect();
        let model = params.train(&examples)?;
        // Candidates depend only on the conditioning label, so decode
        // once per label.
        let mut by_label: HashMap<Label, Vec<CandidateJson>> = HashMap::new();
        let mut rows = Vec::with_capacity(photos.len());
        for photo in &photos {
            let candidates = match by_label.get(&photo.label) {
                Some(c) => c.clone(),
                None => {
                    let generated = model.generate_candidates(
                        photo.label,
                        params.n_candidates,
                        params.max_seq_len,
                        params.k,
                    )?;
                    let json: Vec<CandidateJson> = generated
                        .candidates
                        .iter()
                        .map(CandidateJson::from_candidate)
                        .collect();
                    by_label.insert(photo.label, json.clone());
                    json
                }
            };
            rows.push(CaptionRow {
                photo_id: photo.photo_id.clone(),
                label: photo.label,
                candidates,
            });
        }
        write_jsonl(&partials[0], &rows)?;
        Ok(())
    })
}

fn stage_score(ctx: &PipelineCtx, runner: &mut StageRunner) -> Result<StageRecord, StageFailure> {
    let config = &ctx.config;
    let layout = &ctx.layout;
    let inputs = vec![layout.captions(), layout.photos_labeled()];
    let outputs = vec![
        OutputSpec::File(layout.scores()),
        OutputSpec::File(layout.best_captions()),
    ];
    let key_extra = format!(
        "{}|{}",
        serde_json::to_string(&config.bleu).expect("serializable"),
        serde_json::to_string(&config.tokenizer).expect("serializable"),
    );
    runner.run_stage(Stage::Score, &inputs, &outputs, &key_extra, |partials| {
        let rows: Vec<CaptionRow> = read_jsonl(&layout.captions())?;
        let photos = load_photos(&layout.photos_labeled())?.records;
        let tokenizer = config.tokenizer_config()?;
        let original_caption: HashMap<&str, &str> = photos
            .iter()
            .map(|p| (p.photo_id.as_str(), p.caption.as_str()))
            .collect();

        let mut score_rows = Vec::new();
        let mut scored_with_ref: Vec<ScoredCaption> = Vec::new();
        let mut best_rows = Vec::with_capacity(rows.len());
        for row in &rows {
            let reference: Option<Vec<String>> = original_caption
                .get(row.photo_id.as_str())
                .filter(|c| !c.trim().is_empty())
                .map(|c| revpic_core::corpus::tokenize(c, &tokenizer))
                .filter(|tokens| !tokens.is_empty());
            let mut best: Option<(usize, f64)> = None;
            for (index, candidate_json) in row.candidates.iter().enumerate() {
                let candidate = candidate_json.to_candidate(row.label)?;
                let confidence = caption_confidence(&candidate)?;
                if best.map(|(_, c)| confidence > c).unwrap_or(true) {
                    best = Some((index, confidence));
                }
                score_rows.push(CaptionScoreRow {
                    photo_id: row.photo_id.clone(),
                    candidate_index: index,
                    confidence,
                    has_reference: reference.is_some(),
                });
                if let Some(reference) = &reference {
                    scored_with_ref.push(ScoredCaption {
                        candidate,
                        confidence,
                        reference: Some(reference.clone()),
                    });
                }
            }
            if let Some((index, confidence)) = best {
                best_rows.push(BestCaptionRow {
                    photo_id: row.photo_id.clone(),
                    words: row.candidates[index].words.clone(),
                    confidence,
                });
            }
        }

        let bleu_config = config.bleu_config();
        let (corpus, curve) = if scored_with_ref.is_empty() {
            (None, Vec::new())
        } else {
            let candidates: Vec<Vec<String>> = scored_with_ref
                .iter()
                .map(|s| s.candidate.words.clone())
                .collect();
            let references: Vec<Vec<Vec<String>>> = scored_with_ref
                .iter()
                .map(|s| vec![s.reference.clone().unwrap()])
                .collect();
            let per_n: Vec<f64> = (1..=bleu_config.max_n)
                .map(|n| {
                    corpus_bleu(&candidates, &references, &BleuConfig::uniform(n))
                        .map(|s| s.score)
                })
                .collect::<revpic_core::Result<_>>()?;
            let full = corpus_bleu(&candidates, &references, &bleu_config)?;
            let curve = bleu_confidence_curve(&scored_with_ref, &config.bleu.thresholds, &bleu_config)?;
            (
                Some(BleuTable {
                    bleu: per_n,
                    precisions: full.precisions,
                }),
                curve,
            )
        };

        let scores = ScoresJson {
            captions: score_rows,
            corpus_bleu: corpus,
            curve,
        };
        fs::write(&partials[0], serde_json::to_string_pretty(&scores)?)?;
        write_jsonl(&partials[1], &best_rows)?;
        Ok(())
    })
}

fn stage_topics(ctx: &PipelineCtx, runner: &mut StageRunner) -> Result<StageRecord, StageFailure> {
    let config = &ctx.config;
    let layout = &ctx.layout;
    let inputs = vec![layout.reviews()];
    let outputs = vec![OutputSpec::File(layout.model())];
    let key_extra = format!(
        "{}|{}|min_doc={}|seed={}|st={}",
        serde_json::to_string(&config.lda).expect("serializable"),
        serde_json::to_string(&config.tokenizer).expect("serializable"),
        config.vocab_min_doc_count,
        ctx.seed,
        ctx.single_thread,
    );
    runner.run_stage(Stage::Topics, &inputs, &outputs, &key_extra, |partials| {
        let reviews = load_reviews(&layout.reviews())?;
        let tokenizer = config.tokenizer_config()?;
        let documents: Vec<Vec<String>> = reviews
            .iter()
            .map(|r| revpic_core::corpus::tokenize(&r.text, &tokenizer))
            .collect();
        let vocab = Vocabulary::build(&documents, config.vocab_min_doc_count as usize)?;
        let bows: Vec<_> = documents.iter().map(|d| vocab.doc_to_bow(d)).collect();
        let hyper = config.lda_hyper(ctx.seed, ctx.single_thread);
        let trained = train_online_lda(&bows, &vocab, &hyper)?;
        trained.model.save(&partials[0])?;
        Ok(())
    })
}

/// Original caption if present, otherwise the best generated caption.
pub fn effective_captions(
    photos: &[PhotoRecord],
    best: &[BestCaptionRow],
) -> Vec<PhotoRecord> {
    let generated: HashMap<&str, String> = best
        .iter()
        .map(|b| (b.photo_id.as_str(), b.words.join(" ")))
        .collect();
    photos
        .iter()
        .map(|p| {
            let mut photo = p.clone();
            if !photo.has_caption() {
                if let Some(caption) = generated.get(photo.photo_id.as_str()) {
                    photo.caption = caption.clone();
                }
            }
            photo
        })
        .collect()
}

fn stage_recommend(ctx: &PipelineCtx, runner: &mut StageRunner) -> Result<StageRecord, StageFailure> {
    let config = &ctx.config;
    let layout = &ctx.layout;
    let inputs = vec![
        layout.reviews(),
        layout.photos_labeled(),
        layout.best_captions(),
        layout.model(),
    ];
    let outputs = vec![OutputSpec::File(layout.recommendations())];
    let key_extra = format!(
        "{}|{}|business={:?}",
        serde_json::to_string(&config.recommender).expect("serializable"),
        serde_json::to_string(&config.tokenizer).expect("serializable"),
        ctx.business_filter,
    );
    runner.run_stage(Stage::Recommend, &inputs, &outputs, &key_extra, |partials| {
        let mut reviews = load_reviews(&layout.reviews())?;
        if let Some(business) = &ctx.business_filter {
            reviews.retain(|r| &r.business_id == business);
        }
        let photos = load_photos(&layout.photos_labeled())?.records;
        let best: Vec<BestCaptionRow> = read_jsonl(&layout.best_captions())?;
        let model = TopicModel::load(&layout.model())?;
        let tokenizer = config.tokenizer_config()?;
        let photos = effective_captions(&photos, &best);
        let mut by_business: HashMap<&str, Vec<PhotoRecord>> = HashMap::new();
        for photo in &photos {
            by_business
                .entry(photo.business_id.as_str())
                .or_default()
                .push(photo.clone());
        }
        let empty: Vec<PhotoRecord> = Vec::new();
        let t = config.recommender.t as usize;
        let phi = config.recommender.phi as usize;
        let mut rows = Vec::with_capacity(reviews.len());
        for review in &reviews {
            let business_photos = by_business
                .get(review.business_id.as_str())
                .unwrap_or(&empty);
            let terms = representative_terms(&model, review, &tokenizer, t)?;
            let ranked = rank_images(review, business_photos, &terms, phi, &tokenizer);
            rows.push(RecommendationRow {
                review_id: ranked.review_id,
                photos: ranked
                    .matches
                    .into_iter()
                    .map(|m| RecPhotoJson {
                        photo_id: m.photo_id,
                        phase: m.phase,
                        matched_terms: m.matched_terms.into_iter().collect(),
                    })
                    .collect(),
            });
        }
        write_jsonl(&partials[0], &rows)?;
        Ok(())
    })
}

fn stage_report(ctx: &PipelineCtx, runner: &mut StageRunner) -> Result<StageRecord, StageFailure> {
    let config = &ctx.config;
    let layout = &ctx.layout;
    let inputs = vec![
        layout.businesses(),
        layout.reviews(),
        layout.photos_labeled(),
        layout.best_captions(),
        layout.recommendations(),
        layout.model(),
    ];
    let outputs = vec![OutputSpec::Dir(layout.report_dir())];
    let key_extra = format!(
        "{}|{}",
        serde_json::to_string(&config.recommender).expect("serializable"),
        serde_json::to_string(&config.tokenizer).expect("serializable"),
    );
    runner.run_stage(Stage::Report, &inputs, &outputs, &key_extra, |partials| {
        report::emit_report(ctx, &partials[0])
    })
}
