//! Corpus ingestion: record types, JSON-lines loaders, tokenization,
//! vocabulary construction, fold splits, and feature tables.

mod features;
mod folds;
mod load;
mod records;
mod tokenize;
mod vocab;

pub use features::{load_features, FeatureTable};
pub use folds::{split_kfold, FoldSplit};
pub use load::{corpus_stats, load_businesses, load_photos, load_reviews, CorpusStats, LoadedPhotos};
pub use records::{BusinessRecord, Label, PhotoRecord, ReviewRecord, CONCRETE_LABELS};
pub use tokenize::{tokenize, TokenizerConfig, DEFAULT_STOPWORDS};
pub use vocab::Vocabulary;
