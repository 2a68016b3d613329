//! Executable repository-level fill-in-the-middle benchmarks.
//!
//! The crate turns a repository with a runnable test suite into completion
//! tasks, evaluates completion endpoints by stitching their output back into
//! the repository and running its tests, scores the results, and emits
//! instruction-tuning corpora from the same tasks.

pub mod client;
pub mod config;
pub mod context;
pub mod corpus;
pub mod decontam;
pub mod exec;
pub mod hashing;
pub mod ingest;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod syntax;
pub mod tokenize;

pub use client::{
    Completion, FimMarkers, FimOrder, GenerationError, ModelEndpoint, PromptMode, PromptRendering, Provider,
    RetryPolicy, complete_batch, render_prompt,
};
pub use config::{ConfigError, PipelineConfig};
pub use context::{ContextBundle, ContextEntry, TokenBudget, rank_and_truncate};
pub use corpus::{CorpusSample, MixturePolicy, QaRecord, emit_completion_sample, emit_qa_sample, mix_streams};
pub use decontam::{NGramIndex, build_ngram_index, filter_tasks, is_contaminated};
pub use exec::{ExecOutcome, ExecStatus, SandboxSpec, run_tests, stitch};
pub use ingest::{IngestFilters, LanguageTag, RepoOverview, RepoSnapshot, RepoSource, SourceFile, scan_repository};
pub use mask::{CarveConstraints, MaskLevel, MaskTask, NodeWhitelist, sample_tasks};
pub use metrics::{
    AverageMode, GroupBy, Report, ScoreRecord, StatsTable, aggregate_report, dataset_stats, edit_similarity, pass_at_k,
};
pub use pipeline::{BenchTask, PipelineError, ResultRecord, Stage, run_pipeline};
pub use syntax::GrammarRegistry;
pub use tokenize::{ApproxTokenizer, SharedTokenizer, Tokenizer, default_tokenizer, tokenizer_by_name};
