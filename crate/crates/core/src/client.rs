//! Prompt rendering and completion requests.
//!
//! Endpoints speak the common `/completions` (FIM mode) or
//! `/chat/completions` (chat mode) JSON API. Rendering keeps every prompt
//! under the task's token budget by shrinking the context bundle first and
//! the prefix/suffix only as a last resort.

use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};

use crate::context::ContextBundle;
use crate::ingest::detect_language;
use crate::mask::MaskTask;
use crate::tokenize::Tokenizer;

pub const CHAT_TEMPLATE_ID: &str = "chat-v1";

pub const CHAT_SYSTEM_PROMPT: &str = "You are a code completion engine. The user shows files from a repository and one file split into a prefix and a suffix. Reply with only the code that belongs between the prefix and the suffix, with no explanation.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    Fim,
    Chat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FimOrder {
    #[default]
    Psm,
    Spm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    #[default]
    Http,
    /// Answers every task with its ground-truth middle, without a network.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FimMarkers {
    pub prefix: String,
    pub suffix: String,
    pub middle: String,
}

impl FimMarkers {
    pub fn new(prefix: &str, suffix: &str, middle: &str) -> Self {
        FimMarkers {
            prefix: prefix.into(),
            suffix: suffix.into(),
            middle: middle.into(),
        }
    }

    /// Marker sets for common open model families.
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "qwen" => Self::new("<|fim_prefix|>", "<|fim_suffix|>", "<|fim_middle|>"),
            "starcoder" => Self::new("<fim_prefix>", "<fim_suffix>", "<fim_middle>"),
            "deepseek" => Self::new("<｜fim▁begin｜>", "<｜fim▁hole｜>", "<｜fim▁end｜>"),
            "codellama" => Self::new("<PRE> ", " <SUF>", " <MID>"),
            _ => return None,
        })
    }

    fn all(&self) -> [&str; 3] {
        [&self.prefix, &self.suffix, &self.middle]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelEndpoint {
    pub name: String,
    pub provider: Provider,
    pub base_url: String,
    /// Environment variable holding a bearer token.
    pub auth_token_env: Option<String>,
    pub model: String,
    pub mode: PromptMode,
    /// Explicit markers; otherwise taken from `marker_preset`.
    pub markers: Option<FimMarkers>,
    pub marker_preset: Option<String>,
    pub order: FimOrder,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub top_p: Option<f64>,
    pub stop: Vec<String>,
    pub concurrency: usize,
    pub request_timeout_seconds: f64,
}

impl Default for ModelEndpoint {
    fn default() -> Self {
        ModelEndpoint {
            name: "default".into(),
            provider: Provider::Http,
            base_url: String::new(),
            auth_token_env: None,
            model: String::new(),
            mode: PromptMode::Fim,
            markers: None,
            marker_preset: Some("qwen".into()),
            order: FimOrder::Psm,
            max_new_tokens: 512,
            temperature: 0.0,
            top_p: None,
            stop: Vec::new(),
            concurrency: 8,
            request_timeout_seconds: 120.0,
        }
    }
}

impl ModelEndpoint {
    pub fn oracle() -> Self {
        ModelEndpoint {
            name: "oracle".into(),
            provider: Provider::Oracle,
            model: "oracle".into(),
            ..ModelEndpoint::default()
        }
    }

    pub fn fim_markers(&self) -> Result<FimMarkers, ClientError> {
        let markers = match (&self.markers, &self.marker_preset) {
            (Some(m), _) => m.clone(),
            (None, Some(p)) => {
                FimMarkers::preset(p).ok_or_else(|| ClientError::Config(format!("unknown marker preset {p:?}")))?
            }
            (None, None) => return Err(ClientError::Config("FIM mode needs markers".into())),
        };
        if markers.all().iter().any(|m| m.is_empty()) {
            return Err(ClientError::Config("FIM markers must all be non-empty".into()));
        }
        Ok(markers)
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.mode == PromptMode::Fim {
            self.fim_markers()?;
        }
        if self.provider == Provider::Http {
            if self.base_url.is_empty() {
                return Err(ClientError::Config(format!(
                    "endpoint {}: base_url is empty",
                    self.name
                )));
            }
            if self.model.is_empty() {
                return Err(ClientError::Config(format!("endpoint {}: model is empty", self.name)));
            }
        }
        if self.concurrency == 0 {
            return Err(ClientError::Config(format!(
                "endpoint {}: concurrency must be >= 1",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ClientError {
    #[error("endpoint configuration error: {0}")]
    Config(String),
    #[error("endpoint mode is {actual:?}, this rendering needs {expected:?}")]
    WrongMode { expected: PromptMode, actual: PromptMode },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRendering {
    pub mode: PromptMode,
    pub text: Option<String>,
    pub messages: Option<Vec<ChatMessage>>,
    pub token_count: usize,
    pub truncated: bool,
    /// Context entries that made it into the prompt.
    pub context_entries: usize,
}

fn fence_for(content: &str) -> String {
    let mut longest = 0;
    let mut run = 0;
    for c in content.chars() {
        if c == '`' {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    "`".repeat((longest + 1).max(3))
}

fn fenced(out: &mut String, lang: &str, content: &str) {
    let fence = fence_for(content);
    out.push_str(&fence);
    out.push_str(lang);
    out.push('\n');
    out.push_str(content);
    if !content.is_empty() && !content.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(&fence);
    out.push('\n');
}

fn fim_text(
    task: &MaskTask,
    bundle: &ContextBundle,
    prefix: &str,
    suffix: &str,
    markers: &FimMarkers,
    order: FimOrder,
) -> String {
    let comment = task.language.line_comment();
    let mut out = String::new();
    for e in &bundle.entries {
        out.push_str(&format!("{comment} path: {}\n", e.path));
        out.push_str(&e.content);
        if !e.content.is_empty() && !e.content.ends_with('\n') {
            out.push('\n');
        }
    }
    match order {
        FimOrder::Psm => {
            for part in [&markers.prefix, prefix, &markers.suffix, suffix, &markers.middle] {
                out.push_str(part);
            }
        }
        FimOrder::Spm => {
            for part in [&markers.suffix, suffix, &markers.prefix, prefix, &markers.middle] {
                out.push_str(part);
            }
        }
    }
    out
}

/// The user turn of the chat template. Shared with the corpus builder.
pub fn chat_user_message(task: &MaskTask, bundle: &ContextBundle, prefix: &str, suffix: &str) -> String {
    let lang = task.language.fence_tag();
    let mut out = format!(
        "Fill in the missing code in `{}`.\n\n### Context Files\n",
        task.file_path
    );
    for e in &bundle.entries {
        out.push_str(&format!("\n#### {}\n", e.path));
        fenced(&mut out, detect_language(&e.path, &e.content).fence_tag(), &e.content);
    }
    out.push_str("\n### Prefix\n");
    fenced(&mut out, lang, prefix);
    out.push_str("\n### Suffix\n");
    fenced(&mut out, lang, suffix);
    out
}

fn chat_messages(task: &MaskTask, bundle: &ContextBundle, prefix: &str, suffix: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage {
            role: "system".into(),
            content: CHAT_SYSTEM_PROMPT.into(),
        },
        ChatMessage {
            role: "user".into(),
            content: chat_user_message(task, bundle, prefix, suffix),
        },
    ]
}

/// Split `allowance` tokens between prefix and suffix: the prefix keeps its
/// tail, the suffix its head, and a side shorter than half donates the rest.
fn split_prefix_suffix(prefix: &str, suffix: &str, allowance: usize, tok: &dyn Tokenizer) -> (String, String) {
    let (p, s) = (tok.count(prefix), tok.count(suffix));
    let half = allowance / 2;
    let (keep_p, keep_s) = if p <= half {
        (p, allowance - p)
    } else if s <= allowance - half {
        (allowance - s, s)
    } else {
        (half, allowance - half)
    };
    (
        tok.keep_tail(prefix, keep_p).to_string(),
        tok.keep_head(suffix, keep_s).to_string(),
    )
}

enum Rendered {
    Text(String),
    Messages(Vec<ChatMessage>),
}

fn fit(
    task: &MaskTask,
    bundle: &ContextBundle,
    mode: PromptMode,
    tok: &dyn Tokenizer,
    render: impl Fn(&ContextBundle, &str, &str) -> Rendered,
) -> PromptRendering {
    let count = |r: &Rendered| match r {
        Rendered::Text(t) => tok.count(t),
        Rendered::Messages(m) => m.iter().map(|m| tok.count(&m.content)).sum(),
    };
    let finish = |r: Rendered, n: usize, truncated: bool, entries: usize| {
        let (text, messages) = match r {
            Rendered::Text(t) => (Some(t), None),
            Rendered::Messages(m) => (None, Some(m)),
        };
        PromptRendering {
            mode,
            text,
            messages,
            token_count: n,
            truncated,
            context_entries: entries,
        }
    };
    let ceiling = bundle.budget.prompt_ceiling();

    let mut current = bundle.clone();
    loop {
        let r = render(&current, &task.prefix, &task.suffix);
        let n = count(&r);
        if n <= ceiling {
            let cut = current != *bundle;
            return finish(r, n, cut, current.entries.len());
        }
        if current.is_empty() {
            break;
        }
        let over = n - ceiling;
        current = current.truncated_to(current.total_tokens.saturating_sub(over), tok);
    }

    let empty = ContextBundle::empty(bundle.budget);
    let fixed = count(&render(&empty, "", ""));
    let mut allowance = ceiling.saturating_sub(fixed);
    loop {
        let (p, s) = split_prefix_suffix(&task.prefix, &task.suffix, allowance, tok);
        let r = render(&empty, &p, &s);
        let n = count(&r);
        if n <= ceiling || allowance == 0 {
            return finish(r, n, true, 0);
        }
        allowance = allowance.saturating_sub((n - ceiling).max(1));
    }
}

/// FIM prompt: one `<comment> path: <path>` header per context entry
/// followed by its content, then the marker-delimited prefix and suffix in
/// PSM or SPM order.
pub fn render_fim_prompt(
    task: &MaskTask,
    bundle: &ContextBundle,
    endpoint: &ModelEndpoint,
    tokenizer: &dyn Tokenizer,
) -> Result<PromptRendering, ClientError> {
    if endpoint.mode != PromptMode::Fim {
        return Err(ClientError::WrongMode {
            expected: PromptMode::Fim,
            actual: endpoint.mode,
        });
    }
    let markers = endpoint.fim_markers()?;
    Ok(fit(task, bundle, PromptMode::Fim, tokenizer, |b, p, s| {
        Rendered::Text(fim_text(task, b, p, s, &markers, endpoint.order))
    }))
}

/// Chat prompt: a fixed system turn and a user turn with fenced Context
/// Files, Prefix and Suffix sections.
pub fn render_chat_prompt(
    task: &MaskTask,
    bundle: &ContextBundle,
    endpoint: &ModelEndpoint,
    tokenizer: &dyn Tokenizer,
) -> Result<PromptRendering, ClientError> {
    if endpoint.mode != PromptMode::Chat {
        return Err(ClientError::WrongMode {
            expected: PromptMode::Chat,
            actual: endpoint.mode,
        });
    }
    Ok(fit(task, bundle, PromptMode::Chat, tokenizer, |b, p, s| {
        Rendered::Messages(chat_messages(task, b, p, s))
    }))
}

pub fn render_prompt(
    task: &MaskTask,
    bundle: &ContextBundle,
    endpoint: &ModelEndpoint,
    tokenizer: &dyn Tokenizer,
) -> Result<PromptRendering, ClientError> {
    match endpoint.mode {
        PromptMode::Fim => render_fim_prompt(task, bundle, endpoint, tokenizer),
        PromptMode::Chat => render_chat_prompt(task, bundle, endpoint, tokenizer),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << retry.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Response body as received.
    pub raw: Value,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("generation failed after {attempts} attempt(s){}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
pub struct GenerationError {
    pub status: Option<u16>,
    pub message: String,
    pub attempts: u32,
}

/// Cut at the first stop string, then remove FIM markers.
fn strip_special(text: &str, endpoint: &ModelEndpoint) -> String {
    let mut out = text;
    for stop in endpoint.stop.iter().filter(|s| !s.is_empty()) {
        if let Some(i) = out.find(stop.as_str()) {
            out = &out[..i];
        }
    }
    let mut out = out.to_string();
    if let Ok(m) = endpoint.fim_markers() {
        for marker in m.all() {
            out = out.replace(marker, "");
        }
    }
    out
}

/// Remove one code fence wrapping the whole reply, if there is one.
pub fn strip_code_fence(text: &str) -> &str {
    let start = text.trim_start();
    let end_trimmed = start.trim_end();
    if !start.starts_with("```") || end_trimmed.len() < 6 || !end_trimmed.ends_with("```") {
        return text;
    }
    let Some(nl) = start.find('\n') else {
        return text;
    };
    let body_end = end_trimmed.len() - 3;
    if body_end < nl + 1 {
        return text;
    }
    let body = &start[nl + 1..body_end];
    if !body.is_empty() && !body.ends_with('\n') {
        return text;
    }
    body.strip_suffix('\n').unwrap_or(body)
}

fn request_body(endpoint: &ModelEndpoint, rendering: &PromptRendering) -> Value {
    let mut body = json!({
        "model": endpoint.model,
        "max_tokens": endpoint.max_new_tokens,
        "temperature": endpoint.temperature,
    });
    match rendering.mode {
        PromptMode::Fim => body["prompt"] = json!(rendering.text.clone().unwrap_or_default()),
        PromptMode::Chat => body["messages"] = json!(rendering.messages.clone().unwrap_or_default()),
    }
    if let Some(p) = endpoint.top_p {
        body["top_p"] = json!(p);
    }
    if !endpoint.stop.is_empty() {
        body["stop"] = json!(endpoint.stop);
    }
    body
}

fn extract_text(mode: PromptMode, raw: &Value) -> Option<&str> {
    let choice = raw.get("choices")?.get(0)?;
    match mode {
        PromptMode::Fim => choice.get("text")?.as_str(),
        PromptMode::Chat => choice.get("message")?.get("content")?.as_str(),
    }
}

pub fn build_http_client(endpoint: &ModelEndpoint) -> Result<reqwest::blocking::Client, GenerationError> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(endpoint.request_timeout_seconds.max(0.001)))
        .build()
        .map_err(|e| GenerationError {
            status: None,
            message: format!("cannot build HTTP client: {e}"),
            attempts: 0,
        })
}

/// POST one rendering. 4xx answers fail at once; 5xx answers, timeouts and
/// connection errors are retried with exponential backoff.
pub fn request_completion(
    client: &reqwest::blocking::Client,
    endpoint: &ModelEndpoint,
    rendering: &PromptRendering,
    retry: &RetryPolicy,
) -> Result<Completion, GenerationError> {
    let path = match rendering.mode {
        PromptMode::Fim => "completions",
        PromptMode::Chat => "chat/completions",
    };
    let url = format!("{}/{path}", endpoint.base_url.trim_end_matches('/'));
    let token = match &endpoint.auth_token_env {
        Some(var) => Some(std::env::var(var).map_err(|_| GenerationError {
            status: None,
            message: format!("environment variable {var} is not set"),
            attempts: 0,
        })?),
        None => None,
    };
    let body = request_body(endpoint, rendering);

    let mut attempts = 0u32;
    loop {
        attempts += 1;
        let mut req = client.post(&url).json(&body);
        if let Some(t) = &token {
            req = req.bearer_auth(t);
        }
        let (status, message) = match req.send() {
            Ok(resp) => {
                let status = resp.status();
                let text = resp.text().unwrap_or_default();
                if status.is_success() {
                    let raw: Value = serde_json::from_str(&text).map_err(|e| GenerationError {
                        status: Some(status.as_u16()),
                        message: format!("response is not JSON: {e}"),
                        attempts,
                    })?;
                    let Some(generated) = extract_text(rendering.mode, &raw) else {
                        return Err(GenerationError {
                            status: Some(status.as_u16()),
                            message: "response has no completion text".into(),
                            attempts,
                        });
                    };
                    let mut cleaned = strip_special(generated, endpoint);
                    if rendering.mode == PromptMode::Chat {
                        cleaned = strip_code_fence(&cleaned).to_string();
                    }
                    return Ok(Completion {
                        text: cleaned,
                        raw,
                        attempts,
                    });
                }
                if status.is_client_error() {
                    return Err(GenerationError {
                        status: Some(status.as_u16()),
                        message: text,
                        attempts,
                    });
                }
                (Some(status.as_u16()), text)
            }
            Err(e) => (None, e.to_string()),
        };
        if attempts > retry.max_retries {
            return Err(GenerationError {
                status,
                message,
                attempts,
            });
        }
        log::debug!("retrying {url} after attempt {attempts}: {message}");
        thread::sleep(retry.delay(attempts - 1));
    }
}

/// Complete every task, at most `endpoint.concurrency` requests in flight.
/// Results line up with the input; one failure never affects the others.
pub fn complete_batch(
    endpoint: &ModelEndpoint,
    items: &[(&MaskTask, &PromptRendering)],
    retry: &RetryPolicy,
) -> Vec<Result<Completion, GenerationError>> {
    if endpoint.provider == Provider::Oracle {
        return items
            .iter()
            .map(|(task, _)| {
                Ok(Completion {
                    text: task.middle.clone(),
                    raw: json!({ "oracle": true }),
                    attempts: 0,
                })
            })
            .collect();
    }
    let client = match build_http_client(endpoint) {
        Ok(c) => c,
        Err(e) => return items.iter().map(|_| Err(e.clone())).collect(),
    };
    let run = || {
        items
            .par_iter()
            .map(|(_, r)| request_completion(&client, endpoint, r, retry))
            .collect::<Vec<_>>()
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(endpoint.concurrency.max(1))
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}
