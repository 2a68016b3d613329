//! Stage orchestration.
//!
//! Stages communicate only through JSONL artifacts in the output directory:
//!
//! | stage         | reads                               | writes                                  |
//! |---------------|-------------------------------------|-----------------------------------------|
//! | ingest        | repositories on disk                | `ingest.jsonl`                          |
//! | generate      | `ingest.jsonl`                      | `tasks.jsonl`                           |
//! | decontaminate | `tasks.jsonl`                       | `tasks.clean.jsonl`, `tasks.dropped.jsonl` |
//! | evaluate      | `ingest.jsonl`, `tasks.clean.jsonl` | `results.jsonl`                         |
//! | report        | `results.jsonl`                     | `report.txt`, `report.json`, `report.csv` |
//! | corpus        | `tasks.clean.jsonl`                 | `corpus.jsonl`                          |
//! | stats         | `ingest.jsonl`, `tasks.clean.jsonl` | `stats.txt`, `stats.json`               |
//!
//! `manifest.json` records, per stage, a digest of the stage's inputs and
//! configuration together with digests of its outputs. A stage whose digest
//! is unchanged and whose outputs are intact is skipped.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};

use crate::client::{Completion, GenerationError, Provider, complete_batch, render_prompt};
use crate::config::{ConfigError, PipelineConfig};
use crate::context::{ContextBundle, ContextEntry, TokenBudget, rank_and_truncate};
use crate::corpus::{
    ContextRef, CorpusSample, emit_completion_samples, emit_qa_sample, ensure_unique_ids, load_qa_jsonl, mix_streams,
};
use crate::decontam::{FimParts, NGramIndex, build_ngram_index, filter_tasks};
use crate::exec::{ExecJob, ExecStatus, run_batch};
use crate::ingest::{IngestFilters, LanguageTag, RepoOverview, RepoSnapshot, RepoSource, scan_repository, sha256_hex};
use crate::mask::{MaskLevel, MaskTask, sample_tasks};
use crate::metrics::{ReportMetadata, ScoreRecord, TaskTokenCounts, aggregate_report, dataset_stats, overview_row};
use crate::syntax::GrammarRegistry;
use crate::tokenize::{SharedTokenizer, Tokenizer, tokenizer_by_name};

pub const ARTIFACT_SCHEMA: u32 = 1;

pub const INGEST_FILE: &str = "ingest.jsonl";
pub const TASKS_FILE: &str = "tasks.jsonl";
pub const CLEAN_TASKS_FILE: &str = "tasks.clean.jsonl";
pub const DROPPED_TASKS_FILE: &str = "tasks.dropped.jsonl";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Generate,
    Decontaminate,
    Evaluate,
    Report,
    Corpus,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Generate,
        Stage::Decontaminate,
        Stage::Evaluate,
        Stage::Report,
        Stage::Corpus,
        Stage::Stats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Generate => "generate",
            Stage::Decontaminate => "decontaminate",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
            Stage::Corpus => "corpus",
            Stage::Stats => "stats",
        }
    }

    /// Artifacts read, each with the stage that writes it.
    pub fn inputs(self) -> &'static [(&'static str, Stage)] {
        match self {
            Stage::Ingest => &[],
            Stage::Generate => &[(INGEST_FILE, Stage::Ingest)],
            Stage::Decontaminate => &[(TASKS_FILE, Stage::Generate)],
            Stage::Evaluate => &[(INGEST_FILE, Stage::Ingest), (CLEAN_TASKS_FILE, Stage::Decontaminate)],
            Stage::Report => &[(RESULTS_FILE, Stage::Evaluate)],
            Stage::Corpus => &[(CLEAN_TASKS_FILE, Stage::Decontaminate)],
            Stage::Stats => &[(INGEST_FILE, Stage::Ingest), (CLEAN_TASKS_FILE, Stage::Decontaminate)],
        }
    }

    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[INGEST_FILE],
            Stage::Generate => &[TASKS_FILE],
            Stage::Decontaminate => &[CLEAN_TASKS_FILE, DROPPED_TASKS_FILE],
            Stage::Evaluate => &[RESULTS_FILE],
            Stage::Report => &["report.txt", "report.json", "report.csv"],
            Stage::Corpus => &[CORPUS_FILE],
            Stage::Stats => &["stats.txt", "stats.json"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Parse a comma-separated stage list; `all` selects every stage.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>, String> {
    if list.trim() == "all" {
        return Ok(Stage::ALL.to_vec());
    }
    let mut out: Vec<Stage> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Stage::from_str)
        .collect::<Result<_, _>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err("no stages selected".into());
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage}: missing artifact {} (run `{producer}` first)", path.display())]
    MissingArtifact {
        stage: Stage,
        path: PathBuf,
        producer: Stage,
    },
    #[error("{stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl PipelineError {
    /// 2 for configuration problems and missing inputs, 1 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::MissingArtifact { .. } => 2,
            PipelineError::Stage { .. } => 1,
        }
    }
}

fn stage_err(stage: Stage) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

/// One repository in `ingest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub schema: u32,
    pub repo_id: String,
    pub fingerprint: String,
    pub overview: RepoOverview,
    pub snapshot: RepoSnapshot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub seed: u64,
    pub byte_range: [usize; 2],
    pub node_kind: String,
    pub tokenizer: String,
    pub prefix_tokens: usize,
    pub middle_tokens: usize,
    pub suffix_tokens: usize,
    pub context_tokens: usize,
    pub context_truncated: bool,
    pub max_total_tokens: usize,
    pub headroom_tokens: usize,
    pub max_context_tokens: usize,
}

/// One benchmark task in `tasks*.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchTask {
    pub schema: u32,
    pub id: String,
    pub repo: String,
    pub file_path: String,
    pub level: MaskLevel,
    pub language: LanguageTag,
    pub prefix: String,
    pub middle: String,
    pub suffix: String,
    pub context: Vec<ContextRef>,
    pub tests_cmd: String,
    pub meta: TaskMeta,
}

impl BenchTask {
    pub fn from_parts(task: &MaskTask, bundle: &ContextBundle, tests_cmd: &str, tokenizer: &dyn Tokenizer) -> Self {
        BenchTask {
            schema: ARTIFACT_SCHEMA,
            id: task.task_id.clone(),
            repo: task.repo_id.clone(),
            file_path: task.file_path.clone(),
            level: task.level,
            language: task.language.clone(),
            prefix: task.prefix.clone(),
            middle: task.middle.clone(),
            suffix: task.suffix.clone(),
            context: bundle
                .entries
                .iter()
                .map(|e| ContextRef {
                    path: e.path.clone(),
                    content: e.content.clone(),
                })
                .collect(),
            tests_cmd: tests_cmd.to_string(),
            meta: TaskMeta {
                seed: task.seed,
                byte_range: [task.byte_range.start, task.byte_range.end],
                node_kind: task.node_kind.clone(),
                tokenizer: tokenizer.name().to_string(),
                prefix_tokens: tokenizer.count(&task.prefix),
                middle_tokens: task.middle_token_count,
                suffix_tokens: tokenizer.count(&task.suffix),
                context_tokens: bundle.total_tokens,
                context_truncated: bundle.entries.iter().any(|e| e.truncated),
                max_total_tokens: bundle.budget.max_total_tokens,
                headroom_tokens: bundle.budget.headroom_tokens,
                max_context_tokens: bundle.budget.max_context_tokens,
            },
        }
    }

    pub fn mask_task(&self) -> MaskTask {
        MaskTask {
            task_id: self.id.clone(),
            repo_id: self.repo.clone(),
            file_path: self.file_path.clone(),
            level: self.level,
            prefix: self.prefix.clone(),
            middle: self.middle.clone(),
            suffix: self.suffix.clone(),
            language: self.language.clone(),
            seed: self.meta.seed,
            middle_token_count: self.meta.middle_tokens,
            byte_range: self.meta.byte_range[0]..self.meta.byte_range[1],
            node_kind: self.meta.node_kind.clone(),
        }
    }

    pub fn bundle(&self, tokenizer: &dyn Tokenizer) -> ContextBundle {
        let entries: Vec<ContextEntry> = self
            .context
            .iter()
            .map(|c| ContextEntry {
                path: c.path.clone(),
                content: c.content.clone(),
                token_count: tokenizer.count(&c.content),
                truncated: false,
            })
            .collect();
        ContextBundle {
            total_tokens: entries.iter().map(|e| e.token_count).sum(),
            entries,
            budget: TokenBudget {
                max_total_tokens: self.meta.max_total_tokens,
                headroom_tokens: self.meta.headroom_tokens,
                max_context_tokens: self.meta.max_context_tokens,
            },
        }
    }

    pub fn token_counts(&self) -> TaskTokenCounts {
        TaskTokenCounts {
            level: self.level,
            context: self.meta.context_tokens,
            prefix: self.meta.prefix_tokens,
            middle: self.meta.middle_tokens,
            suffix: self.meta.suffix_tokens,
        }
    }
}

impl FimParts for BenchTask {
    fn fim_parts(&self) -> (&str, &str, &str) {
        (&self.prefix, &self.middle, &self.suffix)
    }
}

/// One evaluated task in `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema: u32,
    pub task_id: String,
    pub repo: String,
    pub level: MaskLevel,
    pub language: LanguageTag,
    pub endpoint: String,
    pub status: ExecStatus,
    pub exit_code: Option<i32>,
    pub duration_seconds: f64,
    pub generated: Option<String>,
    pub es: f64,
    pub exact: bool,
    pub attempts: u32,
    pub http_status: Option<u16>,
    pub response: Option<Value>,
    pub error: Option<String>,
    pub prompt_tokens: usize,
    pub prompt_truncated: bool,
    pub stdout_tail: String,
    pub stderr_tail: String,
}

impl ResultRecord {
    pub fn score(&self) -> ScoreRecord {
        ScoreRecord {
            task_id: self.task_id.clone(),
            level: self.level,
            language: self.language.clone(),
            es: self.es,
            exact: self.exact,
            status: self.status,
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1)))
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Replace `path` with `contents` unless it already holds exactly that.
fn write_artifact(path: &Path, contents: &str) -> Result<(), String> {
    if fs::read(path).map(|b| b == contents.as_bytes()).unwrap_or(false) {
        return Ok(());
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| format!("cannot write {}: {e}", tmp.display()))?;
    fs::rename(&tmp, path).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn file_digest(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| sha256_hex(&b))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs_hash: String,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub tokenizer: String,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    out: &'a Path,
    tok: SharedTokenizer,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn read_ingest(&self, stage: Stage) -> Result<Vec<IngestRecord>, PipelineError> {
        let recs: Vec<IngestRecord> = read_jsonl(&self.path(INGEST_FILE)).map_err(stage_err(stage))?;
        for r in &recs {
            if !r.snapshot.verify() {
                return Err(stage_err(stage)(format!(
                    "snapshot of {} fails its content hashes",
                    r.repo_id
                )));
            }
        }
        Ok(recs)
    }

    fn read_tasks(&self, stage: Stage, name: &str) -> Result<Vec<BenchTask>, PipelineError> {
        read_jsonl(&self.path(name)).map_err(stage_err(stage))
    }

    fn endpoint(&self) -> crate::client::ModelEndpoint {
        self.cfg
            .endpoint(&self.cfg.evaluate.endpoint)
            .expect("validated endpoint exists")
    }

    /// Digest of everything a stage depends on.
    fn inputs_hash(&self, stage: Stage) -> String {
        let cfg = self.cfg;
        let inputs: BTreeMap<&str, Option<String>> = stage
            .inputs()
            .iter()
            .map(|(name, _)| (*name, file_digest(&self.path(name))))
            .collect();
        let settings = match stage {
            Stage::Ingest => json!({ "repos": cfg.repos, "ingest": cfg.ingest, "tokenizer": cfg.context.tokenizer }),
            Stage::Generate => json!({
                "seed": cfg.seed, "generate": cfg.generate, "mask": cfg.mask, "context": cfg.context,
            }),
            Stage::Decontaminate => {
                let corpora: Vec<Option<String>> = cfg.decontam.corpora.iter().map(|p| file_digest(p)).collect();
                let index = cfg
                    .decontam
                    .index_dir
                    .as_ref()
                    .and_then(|d| file_digest(&d.join("fingerprints.bin")));
                json!({ "decontam": cfg.decontam, "corpora": corpora, "index": index })
            }
            Stage::Evaluate => json!({
                "endpoint": self.endpoint(), "sandbox": cfg.sandbox, "evaluate": cfg.evaluate, "context": cfg.context,
            }),
            Stage::Report => json!({
                "report": cfg.report, "endpoint": cfg.evaluate.endpoint, "context": cfg.context, "seed": cfg.seed,
                "mode": self.endpoint().mode,
            }),
            Stage::Corpus => json!({
                "seed": cfg.seed, "corpus": cfg.corpus, "context": cfg.context,
                "qa": cfg.corpus.qa_path.as_ref().and_then(|p| file_digest(p)),
            }),
            Stage::Stats => json!({ "tokenizer": cfg.context.tokenizer }),
        };
        let doc = json!({
            "stage": stage.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "inputs": inputs,
            "settings": settings,
        });
        sha256_hex(doc.to_string().as_bytes())
    }
}

fn run_ingest(ctx: &Ctx) -> Result<(), PipelineError> {
    let stage = Stage::Ingest;
    let filters: &IngestFilters = &ctx.cfg.ingest;
    let mut records = Vec::new();
    for r in &ctx.cfg.repos {
        let source = RepoSource {
            id: r.id.clone(),
            root: r.path.clone(),
            test_command: r.test_command.clone(),
        };
        let snapshot =
            scan_repository(&source, filters, ctx.tok.as_ref()).map_err(|e| stage_err(stage)(e.to_string()))?;
        log::info!("ingested {} ({} files)", r.id, snapshot.files.len());
        records.push(IngestRecord {
            schema: ARTIFACT_SCHEMA,
            repo_id: r.id.clone(),
            fingerprint: snapshot.fingerprint(),
            overview: snapshot.overview(),
            snapshot,
        });
    }
    write_artifact(&ctx.path(INGEST_FILE), &to_jsonl(&records)).map_err(stage_err(stage))
}

fn exclusion_matcher(patterns: &[String]) -> Result<ignore::gitignore::Gitignore, String> {
    let mut b = ignore::gitignore::GitignoreBuilder::new("/");
    for p in patterns {
        b.add_line(None, p).map_err(|e| format!("generate.exclude: {e}"))?;
    }
    b.build().map_err(|e| format!("generate.exclude: {e}"))
}

/// Carve tasks for every eligible file of every ingested repository and
/// attach their ranked, truncated context.
pub fn generate_tasks(
    cfg: &PipelineConfig,
    records: &[IngestRecord],
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<BenchTask>, String> {
    let constraints = cfg.carve_constraints()?;
    let registry = GrammarRegistry::default();
    let exclude = exclusion_matcher(&cfg.generate.exclude)?;
    let mut out = Vec::new();
    for rec in records {
        let snap = &rec.snapshot;
        let files: Vec<_> = snap
            .files
            .iter()
            .filter(|f| cfg.generate.languages.contains(&f.language))
            .filter(|f| {
                !exclude
                    .matched_path_or_any_parents(Path::new("/").join(&f.path), false)
                    .is_ignore()
            })
            .collect();
        let per_file: Vec<Result<Vec<BenchTask>, String>> = files
            .par_iter()
            .map(|f| {
                let mut tasks = Vec::new();
                for &level in &cfg.generate.levels {
                    let carved = sample_tasks(
                        &snap.repo_id,
                        f,
                        level,
                        cfg.generate.samples_per_file,
                        &constraints,
                        &registry,
                        tokenizer,
                    )
                    .map_err(|e| format!("{}/{}: {e}", snap.repo_id, f.path))?;
                    for t in carved {
                        let budget = TokenBudget::for_task(
                            cfg.context.max_total_tokens,
                            cfg.context.headroom_tokens,
                            tokenizer.count(&t.prefix),
                            tokenizer.count(&t.suffix),
                        );
                        let bundle = rank_and_truncate(snap, &t, budget, tokenizer).map_err(|e| e.to_string())?;
                        tasks.push(BenchTask::from_parts(&t, &bundle, &snap.test_command, tokenizer));
                    }
                }
                Ok(tasks)
            })
            .collect();
        for r in per_file {
            out.extend(r?);
        }
    }
    Ok(out)
}

fn run_generate(ctx: &Ctx) -> Result<(), PipelineError> {
    let stage = Stage::Generate;
    let records = ctx.read_ingest(stage)?;
    let tasks = generate_tasks(ctx.cfg, &records, ctx.tok.as_ref()).map_err(stage_err(stage))?;
    log::info!("generated {} tasks", tasks.len());
    write_artifact(&ctx.path(TASKS_FILE), &to_jsonl(&tasks)).map_err(stage_err(stage))
}

fn load_or_build_index(cfg: &PipelineConfig) -> Result<NGramIndex, String> {
    let d = &cfg.decontam;
    if let Some(dir) = &d.index_dir {
        if NGramIndex::exists_in(dir) {
            let idx = NGramIndex::load(dir).map_err(|e| e.to_string())?;
            if idx.n() != d.n {
                return Err(format!(
                    "index in {} uses n={}, config asks for n={}",
                    dir.display(),
                    idx.n(),
                    d.n
                ));
            }
            return Ok(idx);
        }
    }
    if d.corpora.is_empty() {
        log::warn!("no reference corpora configured; decontamination keeps every task");
        return Ok(NGramIndex::empty(d.n));
    }
    let idx = build_ngram_index(&d.corpora, d.n, d.exact).map_err(|e| e.to_string())?;
    if let Some(dir) = &d.index_dir {
        idx.save(dir).map_err(|e| e.to_string())?;
    }
    Ok(idx)
}

fn run_decontaminate(ctx: &Ctx) -> Result<(), PipelineError> {
    let stage = Stage::Decontaminate;
    let tasks = ctx.read_tasks(stage, TASKS_FILE)?;
    let index = load_or_build_index(ctx.cfg).map_err(stage_err(stage))?;
    let (kept, dropped) = filter_tasks(tasks, &index);
    log::info!(
        "decontamination kept {} and dropped {} tasks",
        kept.len(),
        dropped.len()
    );
    write_artifact(&ctx.path(CLEAN_TASKS_FILE), &to_jsonl(&kept)).map_err(stage_err(stage))?;
    write_artifact(&ctx.path(DROPPED_TASKS_FILE), &to_jsonl(&dropped)).map_err(stage_err(stage))
}

fn run_evaluate(ctx: &Ctx) -> Result<(), PipelineError> {
    let stage = Stage::Evaluate;
    let err = stage_err(stage);
    let snapshots: HashMap<String, RepoSnapshot> = ctx
        .read_ingest(stage)?
        .into_iter()
        .map(|r| (r.repo_id, r.snapshot))
        .collect();
    let tasks = ctx.read_tasks(stage, CLEAN_TASKS_FILE)?;
    let endpoint = ctx.endpoint();
    let tok = ctx.tok.as_ref();

    let masks: Vec<MaskTask> = tasks.iter().map(BenchTask::mask_task).collect();
    let renderings = tasks
        .par_iter()
        .zip(masks.par_iter())
        .map(|(t, m)| render_prompt(m, &t.bundle(tok), &endpoint, tok))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| err(e.to_string()))?;
    let items: Vec<(&MaskTask, &crate::client::PromptRendering)> = masks.iter().zip(renderings.iter()).collect();
    let completions: Vec<Result<Completion, GenerationError>> =
        complete_batch(&endpoint, &items, &ctx.cfg.evaluate.retry);

    let mut jobs = Vec::with_capacity(masks.len());
    for (m, c) in masks.iter().zip(&completions) {
        let snapshot = snapshots
            .get(&m.repo_id)
            .ok_or_else(|| err(format!("task {} names unknown repository {}", m.task_id, m.repo_id)))?;
        jobs.push(ExecJob {
            snapshot,
            task: m,
            generated: c.as_ref().map(|c| c.text.clone()).map_err(|e| e.to_string()),
        });
    }
    let outcomes = run_batch(&jobs, &ctx.cfg.sandbox.spec, ctx.cfg.sandbox.worker_count());
    let by_id: HashMap<&str, &crate::exec::ExecOutcome> = outcomes.iter().map(|o| (o.task_id.as_str(), o)).collect();

    let endpoint_name = endpoint.name.clone();
    let results: Vec<ResultRecord> = masks
        .iter()
        .zip(&completions)
        .zip(&renderings)
        .map(|((m, c), r)| {
            let o = by_id[m.task_id.as_str()];
            let generated = c.as_ref().ok().map(|c| c.text.clone());
            let score = ScoreRecord::new(
                m.task_id.clone(),
                m.level,
                m.language.clone(),
                generated.as_deref(),
                &m.middle,
                o.status,
            );
            let (attempts, http_status, response) = match c {
                Ok(c) => (c.attempts, None, Some(c.raw.clone())),
                Err(e) => (e.attempts, e.status, None),
            };
            ResultRecord {
                schema: ARTIFACT_SCHEMA,
                task_id: m.task_id.clone(),
                repo: m.repo_id.clone(),
                level: m.level,
                language: m.language.clone(),
                endpoint: endpoint_name.clone(),
                status: o.status,
                exit_code: o.exit_code,
                duration_seconds: o.duration_seconds,
                generated,
                es: score.es,
                exact: score.exact,
                attempts,
                http_status,
                response,
                error: o.error.clone(),
                prompt_tokens: r.token_count,
                prompt_truncated: r.truncated,
                stdout_tail: o.stdout_tail.clone(),
                stderr_tail: o.stderr_tail.clone(),
            }
        })
        .collect();
    let passed = results.iter().filter(|r| r.status == ExecStatus::Pass).count();
    log::info!("evaluated {} tasks, {} passed", results.len(), passed);
    write_artifact(&ctx.path(RESULTS_FILE), &to_jsonl(&results)).map_err(err)
}

fn run_report(ctx: &Ctx) -> Result<(), PipelineError> {
    let stage = Stage::Report;
    let results: Vec<ResultRecord> = read_jsonl(&ctx.path(RESULTS_FILE)).map_err(stage_err(stage))?;
    let scores: Vec<ScoreRecord> = results.iter().map(ResultRecord::score).collect();
    let endpoint = ctx.endpoint();
    let mode = match endpoint.provider {
        Provider::Oracle => "oracle".to_string(),
        Provider::Http => serde_json::to_value(endpoint.mode)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
    };
    let metadata = ReportMetadata {
        endpoint: results.first().map(|r| r.endpoint.clone()).unwrap_or(endpoint.name),
        mode,
        max_total_tokens: ctx.cfg.context.max_total_tokens,
        tokenizer: ctx.tok.name().to_string(),
        seed: ctx.cfg.seed,
    };
    let report = aggregate_report(&scores, metadata, ctx.cfg.report.group_by, ctx.cfg.report.average);
    let err = stage_err(stage);
    write_artifact(&ctx.path("report.txt"), &report.to_text()).map_err(&err)?;
    write_artifact(&ctx.path("report.json"), &report.to_json()).map_err(&err)?;
    write_artifact(&ctx.path("report.csv"), &report.to_csv()).map_err(&err)
}

fn run_corpus(ctx: &Ctx) -> Result<(), PipelineError> {
    let stage = Stage::Corpus;
    let err = stage_err(stage);
    let tasks = ctx.read_tasks(stage, CLEAN_TASKS_FILE)?;
    let tok = ctx.tok.as_ref();
    let masks: Vec<MaskTask> = tasks.iter().map(BenchTask::mask_task).collect();
    let bundles: Vec<ContextBundle> = tasks.iter().map(|t| t.bundle(tok)).collect();
    let items: Vec<(&MaskTask, &ContextBundle)> = masks.iter().zip(bundles.iter()).collect();
    let completions = emit_completion_samples(&items, &ctx.cfg.corpus.template_id, &ctx.cfg.corpus.variants, tok)
        .map_err(|e| err(e.to_string()))?;
    let qa: Vec<CorpusSample> = match &ctx.cfg.corpus.qa_path {
        Some(p) => load_qa_jsonl(p)
            .map_err(|e| err(e.to_string()))?
            .iter()
            .map(emit_qa_sample)
            .collect(),
        None => Vec::new(),
    };
    let policy = ctx.cfg.mixture_policy();
    policy.validate().map_err(|e| err(e.to_string()))?;
    let mixed: Vec<CorpusSample> = mix_streams(completions, qa, &policy).collect();
    ensure_unique_ids(&mixed).map_err(|e| err(e.to_string()))?;
    log::info!("corpus holds {} samples", mixed.len());
    write_artifact(&ctx.path(CORPUS_FILE), &to_jsonl(&mixed)).map_err(err)
}

fn run_stats(ctx: &Ctx) -> Result<(), PipelineError> {
    let stage = Stage::Stats;
    let err = stage_err(stage);
    let overviews: Vec<RepoOverview> = ctx.read_ingest(stage)?.into_iter().map(|r| r.overview).collect();
    let tasks = ctx.read_tasks(stage, CLEAN_TASKS_FILE)?;
    let counts: Vec<TaskTokenCounts> = tasks.iter().map(BenchTask::token_counts).collect();
    let mut table = dataset_stats(&counts, ctx.tok.name());
    table.overview = Some(overview_row(&overviews));
    write_artifact(&ctx.path("stats.txt"), &table.to_text()).map_err(&err)?;
    write_artifact(&ctx.path("stats.json"), &table.to_json()).map_err(err)
}

fn load_manifest(path: &Path) -> RunManifest {
    fs::read(path)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or_default()
}

/// Run the selected stages in pipeline order.
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[Stage]) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let tok = tokenizer_by_name(&cfg.context.tokenizer).expect("validated tokenizer");
    let out = cfg.out_dir.as_path();
    fs::create_dir_all(out).map_err(|e| PipelineError::Stage {
        stage: stages.first().copied().unwrap_or(Stage::Ingest),
        message: format!("cannot create {}: {e}", out.display()),
    })?;
    let ctx = Ctx { cfg, out, tok };
    let manifest_path = out.join(MANIFEST_FILE);
    let mut manifest = load_manifest(&manifest_path);
    manifest.schema = ARTIFACT_SCHEMA;
    manifest.tool = "repofim".into();
    manifest.version = env!("CARGO_PKG_VERSION").into();
    manifest.config_hash = cfg.hash();
    manifest.seed = cfg.seed;
    manifest.tokenizer = ctx.tok.name().into();

    let mut summary = RunSummary::default();
    for stage in Stage::ALL.into_iter().filter(|s| stages.contains(s)) {
        for (name, producer) in stage.inputs() {
            let p = ctx.path(name);
            if !p.is_file() {
                return Err(PipelineError::MissingArtifact {
                    stage,
                    path: p,
                    producer: *producer,
                });
            }
        }
        let hash = ctx.inputs_hash(stage);
        let up_to_date = stage != Stage::Ingest
            && manifest.stages.get(stage.name()).is_some_and(|rec| {
                rec.inputs_hash == hash
                    && stage
                        .outputs()
                        .iter()
                        .all(|o| rec.outputs.get(*o).cloned() == file_digest(&ctx.path(o)))
            });
        if up_to_date {
            log::info!("{stage}: up to date");
            summary.skipped.push(stage);
            continue;
        }
        log::info!("{stage}: running");
        match stage {
            Stage::Ingest => run_ingest(&ctx),
            Stage::Generate => run_generate(&ctx),
            Stage::Decontaminate => run_decontaminate(&ctx),
            Stage::Evaluate => run_evaluate(&ctx),
            Stage::Report => run_report(&ctx),
            Stage::Corpus => run_corpus(&ctx),
            Stage::Stats => run_stats(&ctx),
        }?;
        let outputs = stage
            .outputs()
            .iter()
            .map(|o| (o.to_string(), file_digest(&ctx.path(o)).unwrap_or_default()))
            .collect();
        manifest.stages.insert(
            stage.name().into(),
            StageRecord {
                inputs_hash: hash,
                outputs,
            },
        );
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        write_artifact(&manifest_path, &text).map_err(stage_err(stage))?;
        summary.executed.push(stage);
    }
    Ok(summary)
}
