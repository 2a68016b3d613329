//! Fill-in-the-middle task carving.
//!
//! A task splits one file into `prefix ++ middle ++ suffix`. Grammar levels
//! pick the middle from a syntax-tree node whose kind is whitelisted for the
//! (language, level) pair. Heuristic levels pick a random line, a random run
//! of 2-8 lines, or a random intra-line token span.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hashing::{derive_seed, stable_id};
use crate::ingest::{LanguageTag, SourceFile};
use crate::syntax::{GrammarRegistry, SyntaxError, SyntaxTree};
use crate::tokenize::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskLevel {
    Expression,
    Statement,
    Function,
    Class,
    RandomSpan,
    RandomSingleLine,
    RandomMultiLine,
}

impl MaskLevel {
    pub const ALL: [MaskLevel; 7] = [
        MaskLevel::RandomSpan,
        MaskLevel::RandomSingleLine,
        MaskLevel::RandomMultiLine,
        MaskLevel::Expression,
        MaskLevel::Statement,
        MaskLevel::Function,
        MaskLevel::Class,
    ];

    /// The six reported benchmark categories, in report column order.
    pub const BENCHMARK: [MaskLevel; 6] = [
        MaskLevel::RandomSpan,
        MaskLevel::RandomSingleLine,
        MaskLevel::RandomMultiLine,
        MaskLevel::Expression,
        MaskLevel::Statement,
        MaskLevel::Function,
    ];

    pub fn is_grammar(self) -> bool {
        matches!(
            self,
            MaskLevel::Expression | MaskLevel::Statement | MaskLevel::Function | MaskLevel::Class
        )
    }

    pub fn key(self) -> &'static str {
        match self {
            MaskLevel::Expression => "expression",
            MaskLevel::Statement => "statement",
            MaskLevel::Function => "function",
            MaskLevel::Class => "class",
            MaskLevel::RandomSpan => "random_span",
            MaskLevel::RandomSingleLine => "random_single_line",
            MaskLevel::RandomMultiLine => "random_multi_line",
        }
    }

    /// Column label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            MaskLevel::Expression => "Expression",
            MaskLevel::Statement => "Statement",
            MaskLevel::Function => "Function",
            MaskLevel::Class => "Class",
            MaskLevel::RandomSpan => "Span",
            MaskLevel::RandomSingleLine => "Single-line",
            MaskLevel::RandomMultiLine => "Multi-line",
        }
    }
}

impl fmt::Display for MaskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for MaskLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MaskLevel::ALL
            .into_iter()
            .find(|l| l.key() == s)
            .ok_or_else(|| format!("unknown mask level {s:?}"))
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("level {0} is not grammar based")]
    NotGrammarLevel(MaskLevel),
    #[error("level {0} is not a random heuristic level")]
    NotHeuristicLevel(MaskLevel),
    #[error("byte range {start}..{end} is outside a file of {len} bytes")]
    RangeOutOfBounds { start: usize, end: usize, len: usize },
    #[error("byte range {start}..{end} does not fall on character boundaries")]
    OffCharBoundary { start: usize, end: usize },
    #[error("middle is empty or whitespace only")]
    BlankMiddle,
    #[error("no eligible position for level {0}")]
    NoCandidate(MaskLevel),
    #[error("invalid carve constraints: {0}")]
    InvalidConstraints(String),
}

/// How function-level masks are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionMaskMode {
    /// Mask the body block only.
    #[default]
    Body,
    /// Mask the full definition including its signature.
    Full,
    Both,
}

/// Node kinds eligible per (language, level). Entries are either a node kind
/// (`call`) or a `parent_kind.field` key (`function_definition.body`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeWhitelist {
    entries: BTreeMap<String, BTreeMap<MaskLevel, Vec<String>>>,
}

impl Default for NodeWhitelist {
    fn default() -> Self {
        Self::with_function_mode(FunctionMaskMode::Body)
    }
}

impl NodeWhitelist {
    pub fn empty() -> Self {
        NodeWhitelist {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_function_mode(mode: FunctionMaskMode) -> Self {
        let mut wl = Self::empty();
        let py = LanguageTag::Python;
        let owned = |kinds: &[&str]| kinds.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        wl.set(
            &py,
            MaskLevel::Expression,
            owned(&[
                "binary_operator",
                "call",
                "comparison_operator",
                "boolean_operator",
                "conditional_expression",
            ]),
        );
        wl.set(
            &py,
            MaskLevel::Statement,
            owned(&[
                "expression_statement",
                "return_statement",
                "if_statement",
                "for_statement",
                "while_statement",
                "assignment",
            ]),
        );
        let function = match mode {
            FunctionMaskMode::Body => owned(&["function_definition.body"]),
            FunctionMaskMode::Full => owned(&["function_definition"]),
            FunctionMaskMode::Both => owned(&["function_definition.body", "function_definition"]),
        };
        wl.set(&py, MaskLevel::Function, function);
        wl.set(&py, MaskLevel::Class, owned(&["class_definition.body"]));
        wl
    }

    pub fn set(&mut self, language: &LanguageTag, level: MaskLevel, kinds: Vec<String>) {
        self.entries.entry(language.as_key()).or_default().insert(level, kinds);
    }

    pub fn kinds(&self, language: &LanguageTag, level: MaskLevel) -> &[String] {
        self.entries
            .get(&language.as_key())
            .and_then(|m| m.get(&level))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarveConstraints {
    pub min_middle_tokens: usize,
    pub max_middle_tokens: usize,
    pub whitelist: NodeWhitelist,
    pub rng_seed: u64,
}

impl Default for CarveConstraints {
    fn default() -> Self {
        CarveConstraints {
            min_middle_tokens: 2,
            max_middle_tokens: 256,
            whitelist: NodeWhitelist::default(),
            rng_seed: 0,
        }
    }
}

impl CarveConstraints {
    pub fn validate(&self) -> Result<(), MaskError> {
        if self.min_middle_tokens < 1 {
            return Err(MaskError::InvalidConstraints(
                "min_middle_tokens must be at least 1".into(),
            ));
        }
        if self.max_middle_tokens < self.min_middle_tokens {
            return Err(MaskError::InvalidConstraints(format!(
                "max_middle_tokens ({}) is below min_middle_tokens ({})",
                self.max_middle_tokens, self.min_middle_tokens
            )));
        }
        Ok(())
    }

    fn accepts(&self, tokens: usize) -> bool {
        (self.min_middle_tokens..=self.max_middle_tokens).contains(&tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskCandidate {
    pub byte_range: Range<usize>,
    pub level: MaskLevel,
    /// Whitelist entry the node matched; empty for heuristic levels.
    pub node_kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskTask {
    pub task_id: String,
    pub repo_id: String,
    pub file_path: String,
    pub level: MaskLevel,
    pub prefix: String,
    pub middle: String,
    pub suffix: String,
    pub language: LanguageTag,
    pub seed: u64,
    pub middle_token_count: usize,
    pub byte_range: Range<usize>,
    pub node_kind: String,
}

impl MaskTask {
    /// `prefix ++ middle ++ suffix`.
    pub fn original(&self) -> String {
        let mut s = String::with_capacity(self.prefix.len() + self.middle.len() + self.suffix.len());
        s.push_str(&self.prefix);
        s.push_str(&self.middle);
        s.push_str(&self.suffix);
        s
    }
}

pub fn task_id(repo_id: &str, path: &str, range: &Range<usize>, level: MaskLevel) -> String {
    stable_id(&[
        repo_id,
        path,
        &range.start.to_string(),
        &range.end.to_string(),
        level.key(),
    ])
}

fn is_blank(s: &str) -> bool {
    s.chars().all(char::is_whitespace)
}

/// All whitelisted, error-free nodes of `tree` whose text satisfies the token
/// constraints, ordered by start offset. Nodes sharing a span are reported
/// once, under the outermost matching kind.
pub fn enumerate_candidates(
    tree: &SyntaxTree,
    source: &str,
    level: MaskLevel,
    constraints: &CarveConstraints,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<MaskCandidate>, MaskError> {
    if !level.is_grammar() {
        return Err(MaskError::NotGrammarLevel(level));
    }
    let kinds = constraints.whitelist.kinds(&tree.language, level);
    let mut out: Vec<MaskCandidate> = Vec::new();
    for node in tree.nodes.iter().skip(1) {
        if node.tainted || node.range.is_empty() {
            continue;
        }
        let Some(kind) = node.matches(kinds) else {
            continue;
        };
        let Some(text) = source.get(node.range.clone()) else {
            continue;
        };
        if is_blank(text) || !constraints.accepts(tokenizer.count(text)) {
            continue;
        }
        out.push(MaskCandidate {
            byte_range: node.range.clone(),
            level,
            node_kind: kind,
        });
    }
    out.sort_by_key(|c| c.byte_range.start);
    let mut seen = std::collections::HashSet::new();
    out.retain(|c| seen.insert((c.byte_range.start, c.byte_range.end)));
    Ok(out)
}

/// Split `file` around `candidate.byte_range`.
pub fn carve_task(
    repo_id: &str,
    file: &SourceFile,
    candidate: &MaskCandidate,
    seed: u64,
    tokenizer: &dyn Tokenizer,
) -> Result<MaskTask, MaskError> {
    let content = &file.content;
    let Range { start, end } = candidate.byte_range;
    if start >= end || end > content.len() {
        return Err(MaskError::RangeOutOfBounds {
            start,
            end,
            len: content.len(),
        });
    }
    if !content.is_char_boundary(start) || !content.is_char_boundary(end) {
        return Err(MaskError::OffCharBoundary { start, end });
    }
    let middle = &content[start..end];
    if is_blank(middle) {
        return Err(MaskError::BlankMiddle);
    }
    Ok(MaskTask {
        task_id: task_id(repo_id, &file.path, &candidate.byte_range, candidate.level),
        repo_id: repo_id.to_string(),
        file_path: file.path.clone(),
        level: candidate.level,
        prefix: content[..start].to_string(),
        middle: middle.to_string(),
        suffix: content[end..].to_string(),
        language: file.language.clone(),
        seed,
        middle_token_count: tokenizer.count(middle),
        byte_range: candidate.byte_range.clone(),
        node_kind: candidate.node_kind.clone(),
    })
}

/// Byte range of each line, excluding its LF terminator.
fn line_ranges(content: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, b) in content.bytes().enumerate() {
        if b == b'\n' {
            out.push(start..i);
            start = i + 1;
        }
    }
    if start < content.len() {
        out.push(start..content.len());
    }
    out
}

/// Lines holding only brackets and separators, e.g. `)` or `}),`.
fn is_delimiter_only(line: &str) -> bool {
    line.chars()
        .filter(|c| !c.is_whitespace())
        .all(|c| "()[]{},;:".contains(c))
}

fn single_line_positions(
    content: &str,
    lines: &[Range<usize>],
    constraints: &CarveConstraints,
    tokenizer: &dyn Tokenizer,
) -> Vec<Range<usize>> {
    lines
        .iter()
        .filter(|r| {
            let text = &content[(*r).clone()];
            !is_blank(text) && !is_delimiter_only(text) && constraints.accepts(tokenizer.count(text))
        })
        .cloned()
        .collect()
}

fn multi_line_positions(
    content: &str,
    lines: &[Range<usize>],
    constraints: &CarveConstraints,
    tokenizer: &dyn Tokenizer,
) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    for first in 0..lines.len() {
        if is_blank(&content[lines[first].clone()]) {
            continue;
        }
        for len in 2..=8usize {
            let last = first + len - 1;
            if last >= lines.len() {
                break;
            }
            if is_blank(&content[lines[last].clone()]) {
                continue;
            }
            let range = lines[first].start..lines[last].end;
            if constraints.accepts(tokenizer.count(&content[range.clone()])) {
                out.push(range);
            }
        }
    }
    out
}

/// Visit every intra-line token span that is not a whole line.
fn for_each_span(
    content: &str,
    lines: &[Range<usize>],
    constraints: &CarveConstraints,
    tokenizer: &dyn Tokenizer,
    mut visit: impl FnMut(Range<usize>) -> bool,
) {
    for line in lines {
        let spans = tokenizer.spans(&content[line.clone()]);
        let n = spans.len();
        let max_len = constraints.max_middle_tokens.min(n);
        for i in 0..n {
            for len in constraints.min_middle_tokens..=max_len {
                let j = i + len;
                if j > n {
                    break;
                }
                if i == 0 && j == n {
                    continue;
                }
                let range = line.start + spans[i].start..line.start + spans[j - 1].end;
                if !visit(range) {
                    return;
                }
            }
        }
    }
}

/// Carve a heuristic task, choosing uniformly among eligible positions.
pub fn carve_random(
    repo_id: &str,
    file: &SourceFile,
    level: MaskLevel,
    constraints: &CarveConstraints,
    seed: u64,
    tokenizer: &dyn Tokenizer,
) -> Result<MaskTask, MaskError> {
    if level.is_grammar() {
        return Err(MaskError::NotHeuristicLevel(level));
    }
    constraints.validate()?;
    let content = &file.content;
    let lines = line_ranges(content);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range = match level {
        MaskLevel::RandomSingleLine | MaskLevel::RandomMultiLine => {
            let positions = if level == MaskLevel::RandomSingleLine {
                single_line_positions(content, &lines, constraints, tokenizer)
            } else {
                multi_line_positions(content, &lines, constraints, tokenizer)
            };
            if positions.is_empty() {
                return Err(MaskError::NoCandidate(level));
            }
            positions[rng.random_range(0..positions.len())].clone()
        }
        _ => {
            let mut total = 0usize;
            for_each_span(content, &lines, constraints, tokenizer, |_| {
                total += 1;
                true
            });
            if total == 0 {
                return Err(MaskError::NoCandidate(level));
            }
            let mut target = rng.random_range(0..total);
            let mut picked = None;
            for_each_span(content, &lines, constraints, tokenizer, |r| {
                if target == 0 {
                    picked = Some(r);
                    return false;
                }
                target -= 1;
                true
            });
            picked.expect("target index is below the eligible count")
        }
    };
    let candidate = MaskCandidate {
        byte_range: range,
        level,
        node_kind: String::new(),
    };
    carve_task(repo_id, file, &candidate, seed, tokenizer)
}

/// Draw up to `count` distinct tasks of one level from a file.
///
/// Grammar levels sample candidates without replacement; heuristic levels
/// make `count` seeded draws and drop duplicates. Files without a grammar
/// or without eligible positions yield no tasks.
pub fn sample_tasks(
    repo_id: &str,
    file: &SourceFile,
    level: MaskLevel,
    count: usize,
    constraints: &CarveConstraints,
    registry: &GrammarRegistry,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<MaskTask>, MaskError> {
    constraints.validate()?;
    let seed = derive_seed(constraints.rng_seed, &[repo_id, &file.path, level.key()]);
    if level.is_grammar() {
        let tree = match registry.parse(file) {
            Ok(t) => t,
            Err(SyntaxError::UnsupportedLanguage(_)) => return Ok(Vec::new()),
            Err(e) => {
                log::warn!("{}: {e}", file.path);
                return Ok(Vec::new());
            }
        };
        let candidates = enumerate_candidates(&tree, &file.content, level, constraints, tokenizer)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let take = count.min(candidates.len());
        let mut picked: Vec<usize> = sample(&mut rng, candidates.len(), take).into_vec();
        picked.sort_unstable();
        return picked
            .into_iter()
            .map(|i| carve_task(repo_id, file, &candidates[i], seed, tokenizer))
            .collect();
    }
    let mut out: Vec<MaskTask> = Vec::new();
    for draw in 0..count {
        let draw_seed = derive_seed(seed, &[&draw.to_string()]);
        match carve_random(repo_id, file, level, constraints, draw_seed, tokenizer) {
            Ok(task) => {
                if !out.iter().any(|t| t.task_id == task.task_id) {
                    out.push(task);
                }
            }
            Err(MaskError::NoCandidate(_)) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
