//! Instruction-tuning corpus emission.
//!
//! Completion samples reuse the chat template of the model client, so a
//! model trained on the corpus sees the same layout it is evaluated with.
//! Question/answer pairs come from user JSONL and are interleaved with the
//! completion samples under a seeded mixture policy.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{CHAT_TEMPLATE_ID, ChatMessage, ClientError, ModelEndpoint, PromptMode, render_chat_prompt};
use crate::context::ContextBundle;
use crate::hashing::stable_id;
use crate::mask::{MaskLevel, MaskTask};
use crate::tokenize::Tokenizer;

pub const CORPUS_SCHEMA: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("unknown template {0:?} (known: {CHAT_TEMPLATE_ID})")]
    UnknownTemplate(String),
    #[error("{path}:{line}: {message}")]
    BadQaRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("invalid mixture policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Render(#[from] ClientError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Completion,
    Qa,
}

/// Whether a completion sample carries its repository context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextVariant {
    CrossFile,
    InFile,
}

impl ContextVariant {
    pub fn key(self) -> &'static str {
        match self {
            ContextVariant::CrossFile => "cross_file",
            ContextVariant::InFile => "in_file",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FimRecord {
    pub file_path: String,
    pub prefix: String,
    pub middle: String,
    pub suffix: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRef {
    pub path: String,
    pub content: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMetadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repo_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<MaskLevel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<ContextVariant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSample {
    pub schema: u32,
    pub id: String,
    pub kind: SampleKind,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fim: Option<FimRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context: Vec<ContextRef>,
    pub metadata: SampleMetadata,
}

impl CorpusSample {
    /// The source file a completion sample was cut from.
    pub fn restitch(&self) -> Option<String> {
        let f = self.fim.as_ref()?;
        Some(format!("{}{}{}", f.prefix, f.middle, f.suffix))
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("sample serializes")
    }
}

/// Build one completion sample. The user turn is the client's chat
/// rendering of the task, the assistant turn is the ground-truth middle.
pub fn emit_completion_sample(
    task: &MaskTask,
    bundle: &ContextBundle,
    template_id: &str,
    variant: ContextVariant,
    tokenizer: &dyn Tokenizer,
) -> Result<CorpusSample, CorpusError> {
    if template_id != CHAT_TEMPLATE_ID {
        return Err(CorpusError::UnknownTemplate(template_id.to_string()));
    }
    let used = match variant {
        ContextVariant::CrossFile => bundle.clone(),
        ContextVariant::InFile => ContextBundle::empty(bundle.budget),
    };
    let endpoint = ModelEndpoint {
        mode: PromptMode::Chat,
        ..ModelEndpoint::default()
    };
    let rendering = render_chat_prompt(task, &used, &endpoint, tokenizer)?;
    let mut messages = rendering.messages.unwrap_or_default();
    messages.push(ChatMessage {
        role: "assistant".into(),
        content: task.middle.clone(),
    });
    Ok(CorpusSample {
        schema: CORPUS_SCHEMA,
        id: stable_id(&["completion", &task.task_id, variant.key()]),
        kind: SampleKind::Completion,
        messages,
        fim: Some(FimRecord {
            file_path: task.file_path.clone(),
            prefix: task.prefix.clone(),
            middle: task.middle.clone(),
            suffix: task.suffix.clone(),
        }),
        context: used
            .entries
            .iter()
            .map(|e| ContextRef {
                path: e.path.clone(),
                content: e.content.clone(),
            })
            .collect(),
        metadata: SampleMetadata {
            repo_id: Some(task.repo_id.clone()),
            task_id: Some(task.task_id.clone()),
            level: Some(task.level),
            seed: Some(task.seed),
            language: Some(task.language.as_key()),
            variant: Some(variant),
            template_id: Some(template_id.to_string()),
        },
    })
}

/// Emit every (task, variant) sample in parallel; output order follows the
/// input, variants in the order given.
pub fn emit_completion_samples(
    items: &[(&MaskTask, &ContextBundle)],
    template_id: &str,
    variants: &[ContextVariant],
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<CorpusSample>, CorpusError> {
    let nested: Vec<Vec<CorpusSample>> = items
        .par_iter()
        .map(|(task, bundle)| {
            variants
                .iter()
                .map(|&v| emit_completion_sample(task, bundle, template_id, v, tokenizer))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(nested.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub query: String,
    pub answer: String,
    #[serde(default)]
    pub language: Option<String>,
}

pub fn emit_qa_sample(record: &QaRecord) -> CorpusSample {
    CorpusSample {
        schema: CORPUS_SCHEMA,
        id: stable_id(&["qa", &record.query, &record.answer]),
        kind: SampleKind::Qa,
        messages: vec![
            ChatMessage {
                role: "user".into(),
                content: record.query.clone(),
            },
            ChatMessage {
                role: "assistant".into(),
                content: record.answer.clone(),
            },
        ],
        fim: None,
        context: Vec::new(),
        metadata: SampleMetadata {
            language: record.language.clone(),
            ..SampleMetadata::default()
        },
    }
}

/// Read `{query, answer, language?}` lines. Blank lines are skipped; a
/// record with an empty query or answer is an error.
pub fn load_qa_jsonl(path: &Path) -> Result<Vec<QaRecord>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CorpusError::BadQaRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: QaRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if rec.query.trim().is_empty() || rec.answer.trim().is_empty() {
            return Err(bad("query and answer must be non-empty".into()));
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixturePolicy {
    pub completion_weight: f64,
    pub rng_seed: u64,
    /// 0 keeps the drawn order; larger values shuffle through a buffer of
    /// that many samples.
    pub shuffle_buffer_size: usize,
}

impl Default for MixturePolicy {
    fn default() -> Self {
        MixturePolicy {
            completion_weight: 0.5,
            rng_seed: 0,
            shuffle_buffer_size: 0,
        }
    }
}

impl MixturePolicy {
    pub fn qa_weight(&self) -> f64 {
        1.0 - self.completion_weight
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(0.0..=1.0).contains(&self.completion_weight) {
            return Err(CorpusError::InvalidPolicy(format!(
                "completion_weight must be within [0, 1], got {}",
                self.completion_weight
            )));
        }
        Ok(())
    }
}

/// Iterator interleaving two streams; see [`mix_streams`].
pub struct Mix<A: Iterator, B> {
    a: Option<A>,
    b: Option<B>,
    weight: f64,
    rng: ChaCha8Rng,
    buffer: Vec<<A as Iterator>::Item>,
    buffer_size: usize,
    warned: bool,
}

impl<T, A: Iterator<Item = T>, B: Iterator<Item = T>> Mix<A, B> {
    fn draw(&mut self) -> Option<T> {
        let pick_a = match (&self.a, &self.b) {
            (None, None) => return None,
            (Some(_), None) | (None, Some(_)) => None,
            (Some(_), Some(_)) => Some(self.rng.random::<f64>() < self.weight),
        };
        if let Some(pick_a) = pick_a {
            let item = if pick_a {
                self.a.as_mut().and_then(Iterator::next)
            } else {
                self.b.as_mut().and_then(Iterator::next)
            };
            if item.is_some() {
                return item;
            }
            if pick_a {
                self.a = None;
            } else {
                self.b = None;
            }
            if !self.warned && (self.a.is_some() || self.b.is_some()) {
                log::warn!(
                    "{} stream exhausted; filling the rest from the other stream",
                    if pick_a { "completion" } else { "qa" }
                );
                self.warned = true;
            }
        }
        let item = self.a.as_mut().and_then(Iterator::next);
        if item.is_some() {
            return item;
        }
        self.a = None;
        let item = self.b.as_mut().and_then(Iterator::next);
        if item.is_none() {
            self.b = None;
        }
        item
    }
}

impl<T, A: Iterator<Item = T>, B: Iterator<Item = T>> Iterator for Mix<A, B> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        if self.buffer_size == 0 {
            return self.draw();
        }
        while self.buffer.len() < self.buffer_size {
            match self.draw() {
                Some(x) => self.buffer.push(x),
                None => break,
            }
        }
        if self.buffer.is_empty() {
            return None;
        }
        let i = self.rng.random_range(0..self.buffer.len());
        Some(self.buffer.swap_remove(i))
    }
}

/// Interleave completion and QA samples: each position comes from the
/// completion stream with probability `completion_weight`. Within-stream
/// order is kept (unless a shuffle buffer is configured). Once one stream
/// runs dry the other fills the remaining positions. Infinite inputs need
/// `.take(n)` on the result.
pub fn mix_streams<T, A, B>(completions: A, qa: B, policy: &MixturePolicy) -> Mix<A::IntoIter, B::IntoIter>
where
    A: IntoIterator<Item = T>,
    B: IntoIterator<Item = T>,
{
    Mix {
        a: Some(completions.into_iter()),
        b: Some(qa.into_iter()),
        weight: policy.completion_weight,
        rng: ChaCha8Rng::seed_from_u64(policy.rng_seed),
        buffer: Vec::new(),
        buffer_size: policy.shuffle_buffer_size,
        warned: false,
    }
}

pub fn ensure_unique_ids(samples: &[CorpusSample]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            return Err(CorpusError::DuplicateId(s.id.clone()));
        }
    }
    Ok(())
}
