//! Command line entry point.
//!
//! Exit codes: 0 on success, 1 for configuration/usage problems, 2 when
//! a pipeline stage fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use revpic_cli::config::{validate_config, PipelineConfig};
use revpic_cli::pipeline::{
    run_pipeline, run_stages, PipelineCtx, Stage, StageFailure,
};
use revpic_core::corpus::{load_reviews, tokenize, Vocabulary};
use revpic_core::topics::{
    perplexity, sweep, sweep_grid, write_sweep_csv, AlphaMode, EtaMode, TopicModel,
};

#[derive(Parser)]
#[command(name = "revpic", version, about = "Label, caption, and photo recommendations for review corpora")]
struct Cli {
    /// Pipeline configuration file (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the seed from the config file
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for stage artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Force single-threaded execution for bit reproducibility
    #[arg(long, global = true)]
    single_thread: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config file, reporting every problem at once
    Validate,
    /// Run the full pipeline: ingest, classify, caption, score, topics,
    /// recommend, report
    Run,
    /// Load, filter, and normalize the corpus files
    Ingest,
    /// Cross-validate the label classifier and fill `none` labels
    Classify {
        /// Feature file override
        #[arg(long)]
        features: Option<PathBuf>,
        /// Photo file override (bypasses the ingest output)
        #[arg(long)]
        photos: Option<PathBuf>,
        /// Fold count override
        #[arg(long)]
        k: Option<i64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        epochs: Option<i64>,
        #[arg(long)]
        batch_size: Option<i64>,
        #[arg(long)]
        l2: Option<f64>,
    },
    /// Generate caption candidates for every photo
    Caption {
        #[arg(long)]
        order: Option<i64>,
        #[arg(long)]
        k: Option<i64>,
        #[arg(long)]
        max_seq_len: Option<i64>,
        #[arg(long)]
        n_candidates: Option<i64>,
    },
    /// Score caption candidates: confidence, corpus BLEU, threshold curve
    Score,
    /// Topic model operations
    Topics {
        #[command(subcommand)]
        action: TopicsAction,
    },
    /// Train over a hyperparameter grid and emit a perplexity CSV
    Sweep {
        #[arg(long, value_delimiter = ',')]
        n_topics: Vec<i64>,
        #[arg(long, value_delimiter = ',')]
        passes: Vec<i64>,
        #[arg(long, value_delimiter = ',')]
        kappas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        tau0s: Vec<f64>,
        #[arg(long, value_delimiter = ',', value_parser = parse_alpha_mode)]
        alpha_modes: Vec<AlphaMode>,
        #[arg(long, value_delimiter = ',', value_parser = parse_eta_mode)]
        eta_modes: Vec<EtaMode>,
        /// Fraction of documents held out for perplexity
        #[arg(long, default_value_t = 0.2)]
        heldout: f64,
    },
    /// Rank each business's photos against its reviews
    Recommend {
        /// Restrict to one business id
        #[arg(long)]
        business: Option<String>,
        #[arg(long)]
        t: Option<i64>,
        #[arg(long)]
        phi: Option<i64>,
    },
    /// Emit the static report pages
    Report,
}

#[derive(Subcommand)]
enum TopicsAction {
    /// Train the LDA model over the ingested reviews
    Train,
    /// Infer topic weights for a text or a file of reviews
    Infer {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, conflicts_with = "reviews")]
        text: Option<String>,
        #[arg(long)]
        reviews: Option<PathBuf>,
    },
    /// Print the top terms of one topic
    Terms {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        topic: usize,
        #[arg(long, default_value_t = 10)]
        t: usize,
    },
    /// Held-out perplexity of a model over a review file
    Perplexity {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        reviews: Option<PathBuf>,
    },
}

fn parse_alpha_mode(s: &str) -> Result<AlphaMode, String> {
    match s {
        "symmetric" => Ok(AlphaMode::Symmetric),
        "asymmetric" => Ok(AlphaMode::Asymmetric),
        "auto" => Ok(AlphaMode::Auto),
        other => Err(format!("unknown alpha mode {other:?} (symmetric|asymmetric|auto)")),
    }
}

fn parse_eta_mode(s: &str) -> Result<EtaMode, String> {
    match s {
        "symmetric" => Ok(EtaMode::Symmetric),
        "auto" => Ok(EtaMode::Auto),
        other => Err(format!("unknown eta mode {other:?} (symmetric|auto)")),
    }
}

enum CliError {
    /// Configuration or usage problems; exit code 1.
    Validation(Vec<String>),
    /// A stage or runtime failure; exit code 2.
    Stage(String),
}

impl From<StageFailure> for CliError {
    fn from(f: StageFailure) -> Self {
        CliError::Stage(f.to_string())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Stage(format!("{e:#}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(errors)) => {
            for error in errors {
                eprintln!("error: {error}");
            }
            ExitCode::from(1)
        }
        Err(CliError::Stage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation(vec!["--config <path> is required".into()]))?;
    validate_config(path).map_err(CliError::Validation)
}

fn make_ctx(cli: &Cli, config: PipelineConfig) -> PipelineCtx {
    let seed = cli.seed.unwrap_or(config.seed);
    PipelineCtx::new(config, &cli.out, seed, cli.single_thread)
}

fn print_stage_records(records: &std::collections::BTreeMap<String, revpic_cli::pipeline::StageRecord>) {
    for (name, record) in records {
        let cached = if record.cached { " (cached)" } else { "" };
        eprintln!("stage {name}: {:.2}s, {} outputs{cached}", record.seconds, record.outputs.len());
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate => {
            let config = load_config(&cli)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&config).expect("config serializes")
            );
            Ok(())
        }
        Command::Run => {
            let config = load_config(&cli)?;
            let ctx = make_ctx(&cli, config);
            let manifest = run_pipeline(&ctx)?;
            print_stage_records(&manifest.stages);
            eprintln!("manifest: {}", ctx.layout.manifest().display());
            Ok(())
        }
        Command::Ingest => {
            let config = load_config(&cli)?;
            let ctx = make_ctx(&cli, config);
            let records = run_stages(&ctx, &[Stage::Ingest])?;
            print_stage_records(&records);
            Ok(())
        }
        Command::Classify {
            features,
            photos,
            k,
            learning_rate,
            epochs,
            batch_size,
            l2,
        } => {
            let mut config = load_config(&cli)?;
            if let Some(features) = features {
                config.inputs.features = features.clone();
            }
            if let Some(k) = k {
                config.classifier.k_folds = *k;
            }
            if let Some(lr) = learning_rate {
                config.classifier.learning_rate = *lr;
            }
            if let Some(epochs) = epochs {
                config.classifier.epochs = *epochs;
            }
            if let Some(batch) = batch_size {
                config.classifier.batch_size = *batch;
            }
            if let Some(l2) = l2 {
                config.classifier.l2 = *l2;
            }
            let revalidate = config.validate();
            if !revalidate.is_empty() {
                return Err(CliError::Validation(revalidate));
            }
            let ctx = make_ctx(&cli, config);
            if let Some(photos) = photos {
                // Normalize the explicit photo file into the out dir so
                // the stage can consume it in place of the ingest output.
                std::fs::create_dir_all(&ctx.layout.out).map_err(anyhow::Error::from)?;
                let loaded = revpic_core::corpus::load_photos(photos).map_err(anyhow::Error::from)?;
                let lines: String = loaded
                    .records
                    .iter()
                    .map(|r| serde_json::to_string(r).expect("photo serializes") + "\n")
                    .collect();
                std::fs::write(ctx.layout.photos(), lines).map_err(anyhow::Error::from)?;
            }
            let records = run_stages(&ctx, &[Stage::Classify])?;
            print_stage_records(&records);
            Ok(())
        }
        Command::Caption {
            order,
            k,
            max_seq_len,
            n_candidates,
        } => {
            let mut config = load_config(&cli)?;
            if let Some(order) = order {
                config.captioner.order = *order;
            }
            if let Some(k) = k {
                config.captioner.k = *k;
            }
            if let Some(len) = max_seq_len {
                config.captioner.max_seq_len = *len;
            }
            if let Some(n) = n_candidates {
                config.captioner.n_candidates = *n;
            }
            let revalidate = config.validate();
            if !revalidate.is_empty() {
                return Err(CliError::Validation(revalidate));
            }
            let ctx = make_ctx(&cli, config);
            let records = run_stages(&ctx, &[Stage::Caption])?;
            print_stage_records(&records);
            Ok(())
        }
        Command::Score => {
            let config = load_config(&cli)?;
            let ctx = make_ctx(&cli, config);
            let records = run_stages(&ctx, &[Stage::Score])?;
            print_stage_records(&records);
            Ok(())
        }
        Command::Topics { action } => run_topics(&cli, action),
        Command::Sweep {
            n_topics,
            passes,
            kappas,
            tau0s,
            alpha_modes,
            eta_modes,
            heldout,
        } => {
            let config = load_config(&cli)?;
            let ctx = make_ctx(&cli, config);
            let config = &ctx.config;
            let reviews_path = ctx.layout.reviews();
            if !reviews_path.is_file() {
                return Err(CliError::Stage(format!(
                    "missing {} (run ingest first)",
                    reviews_path.display()
                )));
            }
            let reviews = load_reviews(&reviews_path).map_err(anyhow::Error::from)?;
            let tokenizer = config.tokenizer_config()?;
            let documents: Vec<Vec<String>> =
                reviews.iter().map(|r| tokenize(&r.text, &tokenizer)).collect();
            let vocab = Vocabulary::build(&documents, config.vocab_min_doc_count as usize)
                .map_err(anyhow::Error::from)?;
            let bows: Vec<_> = documents.iter().map(|d| vocab.doc_to_bow(d)).collect();
            let base = config.lda_hyper(ctx.seed, ctx.single_thread);

            let or_default = |values: &[i64], default: i64| -> Vec<usize> {
                if values.is_empty() {
                    vec![default as usize]
                } else {
                    values.iter().map(|&v| v.max(1) as usize).collect()
                }
            };
            let grid = sweep_grid(
                &or_default(n_topics, config.lda.n_topics),
                &or_default(passes, config.lda.passes),
                &(if kappas.is_empty() { vec![config.lda.kappa] } else { kappas.clone() }),
                &(if tau0s.is_empty() { vec![config.lda.tau0] } else { tau0s.clone() }),
                &(if alpha_modes.is_empty() { vec![config.lda.alpha] } else { alpha_modes.clone() }),
                &(if eta_modes.is_empty() { vec![config.lda.eta] } else { eta_modes.clone() }),
            );
            let outcome = sweep(&bows, &vocab, &grid, *heldout, ctx.seed, &base)
                .map_err(anyhow::Error::from)?;
            let csv_path = ctx.layout.out.join("sweep.csv");
            let file = std::fs::File::create(&csv_path).map_err(anyhow::Error::from)?;
            write_sweep_csv(&outcome.rows, file).map_err(anyhow::Error::from)?;
            for row in &outcome.rows {
                match row.perplexity {
                    Some(p) => eprintln!("{}: perplexity {:.4} ({:.2}s)", row.setting.label(), p, row.seconds),
                    None => eprintln!(
                        "{}: failed: {} ({:.2}s)",
                        row.setting.label(),
                        row.error.as_deref().unwrap_or("unknown"),
                        row.seconds
                    ),
                }
            }
            if let Some(best) = outcome.best {
                eprintln!("best: {}", outcome.rows[best].setting.label());
            }
            eprintln!("csv: {}", csv_path.display());
            Ok(())
        }
        Command::Recommend { business, t, phi } => {
            let mut config = load_config(&cli)?;
            if let Some(t) = t {
                config.recommender.t = *t;
            }
            if let Some(phi) = phi {
                config.recommender.phi = *phi;
            }
            let revalidate = config.validate();
            if !revalidate.is_empty() {
                return Err(CliError::Validation(revalidate));
            }
            let mut ctx = make_ctx(&cli, config);
            ctx.business_filter = business.clone();
            let records = run_stages(&ctx, &[Stage::Recommend])?;
            print_stage_records(&records);
            Ok(())
        }
        Command::Report => {
            let config = load_config(&cli)?;
            let ctx = make_ctx(&cli, config);
            let records = run_stages(&ctx, &[Stage::Report])?;
            print_stage_records(&records);
            Ok(())
        }
    }
}

fn run_topics(cli: &Cli, action: &TopicsAction) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let ctx = make_ctx(cli, config);
    let model_path = |explicit: &Option<PathBuf>| -> PathBuf {
        explicit.clone().unwrap_or_else(|| ctx.layout.model())
    };
    match action {
        TopicsAction::Train => {
            let records = run_stages(&ctx, &[Stage::Topics])?;
            print_stage_records(&records);
            Ok(())
        }
        TopicsAction::Infer { model, text, reviews } => {
            let model = TopicModel::load(&model_path(model)).map_err(anyhow::Error::from)?;
            let tokenizer = ctx.config.tokenizer_config()?;
            match (text, reviews) {
                (Some(text), _) => {
                    let bow = model.doc_to_bow(&tokenize(text, &tokenizer));
                    let doc = model.infer_document(&bow);
                    println!("{}", serde_json::to_string(&doc).expect("serializes"));
                    Ok(())
                }
                (None, Some(reviews)) => {
                    let reviews = load_reviews(reviews).map_err(anyhow::Error::from)?;
                    for review in reviews {
                        let bow = model.doc_to_bow(&tokenize(&review.text, &tokenizer));
                        let doc = model.infer_document(&bow);
                        let row = serde_json::json!({
                            "review_id": review.review_id,
                            "theta": doc.theta,
                            "oov_fallback": doc.oov_fallback,
                        });
                        println!("{row}");
                    }
                    Ok(())
                }
                (None, None) => Err(CliError::Validation(vec![
                    "topics infer needs --text or --reviews".into(),
                ])),
            }
        }
        TopicsAction::Terms { model, topic, t } => {
            let model = TopicModel::load(&model_path(model)).map_err(anyhow::Error::from)?;
            let terms = model.top_terms(*topic, *t).map_err(anyhow::Error::from)?;
            println!("{}", serde_json::to_string(&terms).expect("serializes"));
            Ok(())
        }
        TopicsAction::Perplexity { model, reviews } => {
            let model = TopicModel::load(&model_path(model)).map_err(anyhow::Error::from)?;
            let tokenizer = ctx.config.tokenizer_config()?;
            let reviews_path = reviews.clone().unwrap_or_else(|| ctx.layout.reviews());
            let reviews = load_reviews(&reviews_path).map_err(anyhow::Error::from)?;
            let bows: Vec<_> = reviews
                .iter()
                .map(|r| model.doc_to_bow(&tokenize(&r.text, &tokenizer)))
                .collect();
            let value = perplexity(&model, &bows).map_err(anyhow::Error::from)?;
            println!("{value}");
            Ok(())
        }
    }
}
