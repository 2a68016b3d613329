//! Pipeline configuration file.
//!
//! ```toml
//! seed = 7
//! out_dir = "out"
//!
//! [[repos]]
//! id = "bank"
//! path = "repos/bank"
//! test_command = "python3 -m unittest discover -s tests -q"
//!
//! [generate]
//! levels = ["random_span", "expression", "function"]
//! samples_per_file = 4
//!
//! [mask.python.expression]
//! kinds = ["call", "binary_operator"]
//!
//! [endpoints.local]
//! base_url = "http://127.0.0.1:8000/v1"
//! model = "my-model"
//! marker_preset = "qwen"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::{ModelEndpoint, RetryPolicy};
use crate::context::{DEFAULT_HEADROOM_TOKENS, DEFAULT_MAX_TOTAL_TOKENS};
use crate::corpus::{ContextVariant, MixturePolicy};
use crate::decontam::DEFAULT_N;
use crate::exec::{SandboxSpec, default_workers};
use crate::ingest::{IngestFilters, LanguageTag};
use crate::mask::{CarveConstraints, FunctionMaskMode, MaskLevel, NodeWhitelist};
use crate::metrics::{AverageMode, GroupBy};
use crate::tokenize::tokenizer_by_name;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoEntry {
    pub id: String,
    pub path: PathBuf,
    pub test_command: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub levels: Vec<MaskLevel>,
    pub samples_per_file: usize,
    /// Languages whose files are masked.
    pub languages: Vec<LanguageTag>,
    /// Gitignore-style patterns of files never masked (they still serve as
    /// context).
    pub exclude: Vec<String>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            levels: MaskLevel::BENCHMARK.to_vec(),
            samples_per_file: 4,
            languages: vec![LanguageTag::Python],
            exclude: vec![
                "tests/".into(),
                "test_*.py".into(),
                "*_test.py".into(),
                "conftest.py".into(),
                "setup.py".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindList {
    pub kinds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskSection {
    pub min_middle_tokens: usize,
    pub max_middle_tokens: usize,
    pub function_mode: FunctionMaskMode,
    /// `[mask.<language>.<level>] kinds = [...]` overrides.
    #[serde(flatten)]
    pub languages: BTreeMap<String, BTreeMap<String, KindList>>,
}

impl Default for MaskSection {
    fn default() -> Self {
        MaskSection {
            min_middle_tokens: 2,
            max_middle_tokens: 256,
            function_mode: FunctionMaskMode::Body,
            languages: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextSection {
    pub max_total_tokens: usize,
    pub headroom_tokens: usize,
    pub tokenizer: String,
}

impl Default for ContextSection {
    fn default() -> Self {
        ContextSection {
            max_total_tokens: DEFAULT_MAX_TOTAL_TOKENS,
            headroom_tokens: DEFAULT_HEADROOM_TOKENS,
            tokenizer: "approx".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecontamSection {
    pub n: usize,
    pub corpora: Vec<PathBuf>,
    /// Directory of a persisted index. Loaded when present, written after a
    /// build otherwise.
    pub index_dir: Option<PathBuf>,
    pub exact: bool,
}

impl Default for DecontamSection {
    fn default() -> Self {
        DecontamSection {
            n: DEFAULT_N,
            corpora: Vec::new(),
            index_dir: None,
            exact: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxSection {
    #[serde(flatten)]
    pub spec: SandboxSpec,
    pub workers: Option<usize>,
}

impl SandboxSection {
    pub fn worker_count(&self) -> usize {
        self.workers.unwrap_or_else(default_workers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub endpoint: String,
    pub retry: RetryPolicy,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            endpoint: "oracle".into(),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub group_by: GroupBy,
    pub average: AverageMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub template_id: String,
    pub variants: Vec<ContextVariant>,
    pub qa_path: Option<PathBuf>,
    pub completion_weight: f64,
    pub shuffle_buffer_size: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            template_id: crate::client::CHAT_TEMPLATE_ID.into(),
            variants: vec![ContextVariant::CrossFile],
            qa_path: None,
            completion_weight: 0.5,
            shuffle_buffer_size: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub repos: Vec<RepoEntry>,
    pub ingest: IngestFilters,
    pub generate: GenerateSection,
    pub mask: MaskSection,
    pub context: ContextSection,
    pub decontam: DecontamSection,
    pub sandbox: SandboxSection,
    pub endpoints: BTreeMap<String, ModelEndpoint>,
    pub evaluate: EvaluateSection,
    pub report: ReportSection,
    pub corpus: CorpusSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            repos: Vec::new(),
            ingest: IngestFilters::default(),
            generate: GenerateSection::default(),
            mask: MaskSection::default(),
            context: ContextSection::default(),
            decontam: DecontamSection::default(),
            sandbox: SandboxSection::default(),
            endpoints: BTreeMap::new(),
            evaluate: EvaluateSection::default(),
            report: ReportSection::default(),
            corpus: CorpusSection::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Parse a config file and resolve its relative paths.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.out_dir);
        for r in &mut self.repos {
            resolve(base, &mut r.path);
        }
        for c in &mut self.decontam.corpora {
            resolve(base, c);
        }
        if let Some(d) = &mut self.decontam.index_dir {
            resolve(base, d);
        }
        if let Some(q) = &mut self.corpus.qa_path {
            resolve(base, q);
        }
    }

    /// The endpoint table plus the built-in `oracle` endpoint.
    pub fn endpoint(&self, name: &str) -> Option<ModelEndpoint> {
        if let Some(e) = self.endpoints.get(name) {
            let mut e = e.clone();
            e.name = name.to_string();
            return Some(e);
        }
        (name == "oracle").then(ModelEndpoint::oracle)
    }

    pub fn carve_constraints(&self) -> Result<CarveConstraints, String> {
        let mut whitelist = NodeWhitelist::with_function_mode(self.mask.function_mode);
        for (lang, levels) in &self.mask.languages {
            let tag: LanguageTag = lang.parse().map_err(|e| format!("mask.{lang}: {e}"))?;
            for (level, list) in levels {
                let level: MaskLevel = level.parse().map_err(|e| format!("mask.{lang}.{level}: {e}"))?;
                if !level.is_grammar() {
                    return Err(format!("mask.{lang}.{level}: only grammar levels take node kinds"));
                }
                whitelist.set(&tag, level, list.kinds.clone());
            }
        }
        Ok(CarveConstraints {
            min_middle_tokens: self.mask.min_middle_tokens,
            max_middle_tokens: self.mask.max_middle_tokens,
            whitelist,
            rng_seed: self.seed,
        })
    }

    pub fn mixture_policy(&self) -> MixturePolicy {
        MixturePolicy {
            completion_weight: self.corpus.completion_weight,
            rng_seed: self.seed,
            shuffle_buffer_size: self.corpus.shuffle_buffer_size,
        }
    }

    /// Check every field; all problems are reported together.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if self.repos.is_empty() {
            errs.push("repos: at least one repository is required".to_string());
        }
        let mut ids = std::collections::HashSet::new();
        for (i, r) in self.repos.iter().enumerate() {
            if r.id.trim().is_empty() {
                errs.push(format!("repos[{i}].id: must not be empty"));
            } else if !ids.insert(&r.id) {
                errs.push(format!("repos[{i}].id: duplicate id {:?}", r.id));
            }
            if !r.path.is_dir() {
                errs.push(format!("repos[{i}].path: {} is not a directory", r.path.display()));
            }
            if r.test_command.trim().is_empty() {
                errs.push(format!("repos[{i}].test_command: must not be empty"));
            }
        }
        if self.generate.levels.is_empty() {
            errs.push("generate.levels: at least one level is required".into());
        }
        if self.generate.samples_per_file == 0 {
            errs.push("generate.samples_per_file: must be at least 1".into());
        }
        if let Err(e) = self
            .carve_constraints()
            .and_then(|c| c.validate().map_err(|e| e.to_string()))
        {
            errs.push(format!("mask: {e}"));
        }
        if tokenizer_by_name(&self.context.tokenizer).is_none() {
            errs.push(format!(
                "context.tokenizer: unknown tokenizer {:?}",
                self.context.tokenizer
            ));
        }
        if self.context.max_total_tokens == 0 {
            errs.push("context.max_total_tokens: must be positive".into());
        } else if self.context.headroom_tokens >= self.context.max_total_tokens {
            errs.push("context.headroom_tokens: must be below max_total_tokens".into());
        }
        if self.decontam.n == 0 {
            errs.push("decontam.n: must be at least 1".into());
        }
        for (i, c) in self.decontam.corpora.iter().enumerate() {
            if !c.is_file() {
                errs.push(format!("decontam.corpora[{i}]: {} does not exist", c.display()));
            }
        }
        if let Err(e) = self.sandbox.spec.validate() {
            errs.push(format!("sandbox: {e}"));
        }
        if self.sandbox.workers == Some(0) {
            errs.push("sandbox.workers: must be at least 1".into());
        }
        for (name, e) in &self.endpoints {
            let mut e = e.clone();
            e.name = name.clone();
            if let Err(err) = e.validate() {
                errs.push(format!("endpoints.{name}: {err}"));
            }
        }
        if self.endpoint(&self.evaluate.endpoint).is_none() {
            errs.push(format!(
                "evaluate.endpoint: no endpoint named {:?}",
                self.evaluate.endpoint
            ));
        }
        if self.corpus.template_id != crate::client::CHAT_TEMPLATE_ID {
            errs.push(format!(
                "corpus.template_id: unknown template {:?}",
                self.corpus.template_id
            ));
        }
        if self.corpus.variants.is_empty() {
            errs.push("corpus.variants: at least one variant is required".into());
        }
        if let Some(q) = &self.corpus.qa_path {
            if !q.is_file() {
                errs.push(format!("corpus.qa_path: {} does not exist", q.display()));
            }
        }
        if !(0.0..=1.0).contains(&self.corpus.completion_weight) {
            errs.push("corpus.completion_weight: must be within [0, 1]".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    /// Stable digest of the effective configuration.
    pub fn hash(&self) -> String {
        crate::ingest::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
