//! Cross-file context: relevance ranking and token-budget packing.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{RepoSnapshot, SourceFile};
use crate::mask::MaskTask;
use crate::tokenize::Tokenizer;

pub const DEFAULT_MAX_TOTAL_TOKENS: usize = 32_768;
pub const DEFAULT_HEADROOM_TOKENS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub max_total_tokens: usize,
    /// Tokens reserved for the generated middle.
    pub headroom_tokens: usize,
    pub max_context_tokens: usize,
}

impl Default for TokenBudget {
    fn default() -> Self {
        TokenBudget {
            max_total_tokens: DEFAULT_MAX_TOTAL_TOKENS,
            headroom_tokens: DEFAULT_HEADROOM_TOKENS,
            max_context_tokens: DEFAULT_MAX_TOTAL_TOKENS - DEFAULT_HEADROOM_TOKENS,
        }
    }
}

impl TokenBudget {
    /// Context allowance left after the task's prefix, suffix and the
    /// generation headroom.
    pub fn for_task(
        max_total_tokens: usize,
        headroom_tokens: usize,
        prefix_tokens: usize,
        suffix_tokens: usize,
    ) -> Self {
        TokenBudget {
            max_total_tokens,
            headroom_tokens,
            max_context_tokens: max_total_tokens
                .saturating_sub(prefix_tokens)
                .saturating_sub(suffix_tokens)
                .saturating_sub(headroom_tokens),
        }
    }

    /// Budget with an explicit context allowance, clamped to the total.
    pub fn with_context(max_total_tokens: usize, max_context_tokens: usize) -> Self {
        TokenBudget {
            max_total_tokens,
            headroom_tokens: 0,
            max_context_tokens: max_context_tokens.min(max_total_tokens),
        }
    }

    /// Ceiling applied to a rendered prompt.
    pub fn prompt_ceiling(&self) -> usize {
        self.max_total_tokens.saturating_sub(self.headroom_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub path: String,
    pub content: String,
    pub token_count: usize,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub entries: Vec<ContextEntry>,
    pub total_tokens: usize,
    pub budget: TokenBudget,
}

impl ContextBundle {
    pub fn empty(budget: TokenBudget) -> Self {
        ContextBundle {
            entries: Vec::new(),
            total_tokens: 0,
            budget,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keep entries in order while they fit in `max_tokens`; the first entry
    /// that does not fit keeps its head, everything after it is dropped.
    pub fn truncated_to(&self, max_tokens: usize, tokenizer: &dyn Tokenizer) -> ContextBundle {
        let budget = TokenBudget {
            max_context_tokens: max_tokens.min(self.budget.max_context_tokens),
            ..self.budget
        };
        pack(
            self.entries
                .iter()
                .map(|e| (e.path.as_str(), e.content.as_str(), e.token_count)),
            budget,
            tokenizer,
        )
    }
}

fn pack<'a>(
    ranked: impl Iterator<Item = (&'a str, &'a str, usize)>,
    budget: TokenBudget,
    tokenizer: &dyn Tokenizer,
) -> ContextBundle {
    let mut entries = Vec::new();
    let mut used = 0usize;
    for (path, content, tokens) in ranked {
        let remaining = budget.max_context_tokens - used;
        if tokens <= remaining {
            entries.push(ContextEntry {
                path: path.to_string(),
                content: content.to_string(),
                token_count: tokens,
                truncated: false,
            });
            used += tokens;
            continue;
        }
        if remaining > 0 {
            let head = tokenizer.keep_head(content, remaining);
            let head_tokens = tokenizer.count(head);
            entries.push(ContextEntry {
                path: path.to_string(),
                content: head.to_string(),
                token_count: head_tokens,
                truncated: true,
            });
            used += head_tokens;
        }
        break;
    }
    ContextBundle {
        entries,
        total_tokens: used,
        budget,
    }
}

/// Deduplicated `[A-Za-z_][A-Za-z0-9_]*` matches.
pub fn identifier_set(text: &str) -> BTreeSet<&str> {
    let bytes = text.as_bytes();
    let mut out = BTreeSet::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_alphabetic() || b == b'_' {
            let start = i;
            i += 1;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.insert(&text[start..i]);
        } else {
            i += 1;
        }
    }
    out
}

/// Jaccard similarity of the two files' identifier sets; 0.0 when either set
/// is empty.
pub fn relevance_score(masked: &SourceFile, candidate: &SourceFile) -> f64 {
    jaccard(&identifier_set(&masked.content), &identifier_set(&candidate.content))
}

fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Number of differing directory components between two relative paths.
pub fn path_distance(a: &str, b: &str) -> usize {
    let dirs = |p: &str| -> Vec<String> {
        let mut parts: Vec<String> = p.split('/').map(str::to_string).collect();
        parts.pop();
        parts
    };
    let (da, db) = (dirs(a), dirs(b));
    let common = da.iter().zip(&db).take_while(|(x, y)| x == y).count();
    (da.len() - common) + (db.len() - common)
}

#[derive(Debug, thiserror::Error)]
pub enum ContextError {
    #[error("masked file {0} is not part of the snapshot")]
    UnknownFile(String),
}

/// Rank the snapshot's other files by relevance to the masked file.
///
/// Returns `(file, score)` pairs ordered by descending score, then path
/// distance to the masked file, then path.
pub fn rank_files<'s>(
    snapshot: &'s RepoSnapshot,
    masked_path: &str,
) -> Result<Vec<(&'s SourceFile, f64)>, ContextError> {
    let masked = snapshot
        .file(masked_path)
        .ok_or_else(|| ContextError::UnknownFile(masked_path.to_string()))?;
    let masked_ids = identifier_set(&masked.content);
    let mut scored: Vec<(&SourceFile, f64)> = snapshot
        .files
        .par_iter()
        .filter(|f| f.path != masked.path)
        .map(|f| (f, jaccard(&masked_ids, &identifier_set(&f.content))))
        .collect();
    scored.sort_by(|(fa, sa), (fb, sb)| {
        sb.total_cmp(sa)
            .then_with(|| path_distance(&fa.path, masked_path).cmp(&path_distance(&fb.path, masked_path)))
            .then_with(|| fa.path.cmp(&fb.path))
    });
    Ok(scored)
}

/// Assemble the cross-file context for a task under `budget`.
pub fn rank_and_truncate(
    snapshot: &RepoSnapshot,
    task: &MaskTask,
    budget: TokenBudget,
    tokenizer: &dyn Tokenizer,
) -> Result<ContextBundle, ContextError> {
    let ranked = rank_files(snapshot, &task.file_path)?;
    Ok(pack(
        ranked
            .iter()
            .map(|(f, _)| (f.path.as_str(), f.content.as_str(), f.token_count)),
        budget,
        tokenizer,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{MaskCandidate, MaskLevel, carve_task};
    use crate::tokenize::ApproxTokenizer;
    use proptest::prelude::*;

    fn file(path: &str, content: &str) -> SourceFile {
        SourceFile::new(path, content, &ApproxTokenizer)
    }

    fn task_for(snapshot: &RepoSnapshot, path: &str) -> MaskTask {
        let f = snapshot.file(path).unwrap();
        let cand = MaskCandidate {
            byte_range: 0..f.content.find('\n').unwrap_or(f.content.len()),
            level: MaskLevel::RandomSingleLine,
            node_kind: String::new(),
        };
        carve_task(&snapshot.repo_id, f, &cand, 0, &ApproxTokenizer).unwrap()
    }

    #[test]
    fn identical_files_score_one() {
        let a = file("a.py", "x = foo(y)\n");
        assert_eq!(relevance_score(&a, &a.clone()), 1.0);
    }

    #[test]
    fn bank_account_overlap() {
        let masked = file("main.py", "acct = BankAccount()\nacct.deposit(amount)\n");
        let other = file("bank.py", "class BankAccount:\n    deposit = balance\n");
        let s = relevance_score(&masked, &other);
        assert!((s - 2.0 / 6.0).abs() < 1e-12, "{s}");
        assert_eq!(s, relevance_score(&other, &masked));
    }

    #[test]
    fn no_identifiers_scores_zero() {
        let code = file("a.py", "x = 1\n");
        let punct = file("b.txt", "+-*/ 123 (){}\n");
        assert_eq!(relevance_score(&code, &punct), 0.0);
        assert_eq!(relevance_score(&punct, &punct), 0.0);
    }

    #[test]
    fn identifiers_follow_the_pattern() {
        let ids: Vec<_> = identifier_set("9abc x9 _y z.w é").into_iter().collect();
        assert_eq!(ids, ["_y", "abc", "w", "x9", "z"]);
    }

    #[test]
    fn path_distances() {
        assert_eq!(path_distance("a.py", "b.py"), 0);
        assert_eq!(path_distance("pkg/a.py", "pkg/b.py"), 0);
        assert_eq!(path_distance("pkg/a.py", "b.py"), 1);
        assert_eq!(path_distance("pkg/x/a.py", "pkg/y/b.py"), 2);
    }

    fn three_file_repo() -> RepoSnapshot {
        RepoSnapshot::from_files(
            "bank",
            "/nonexistent",
            vec![
                file("main.py", "acct = BankAccount()\nacct.deposit(amount)\n"),
                file("bank.py", "class BankAccount:\n    deposit = balance\n"),
                file("util.py", "def helper(amount):\n    return amount\n"),
            ],
            "true",
        )
    }

    #[test]
    fn budget_fits_all() {
        let snap = three_file_repo();
        let task = task_for(&snap, "main.py");
        let b = rank_and_truncate(
            &snap,
            &task,
            TokenBudget::with_context(10_000, 10_000),
            &ApproxTokenizer,
        )
        .unwrap();
        let paths: Vec<_> = b.entries.iter().map(|e| e.path.as_str()).collect();
        // bank.py: 2/6; util.py shares only `amount`: 1/7
        assert_eq!(paths, ["bank.py", "util.py"]);
        assert_eq!(b.total_tokens, 6 + 8);
        assert!(b.entries.iter().all(|e| !e.truncated));
    }

    #[test]
    fn zero_budget_is_empty() {
        let snap = three_file_repo();
        let task = task_for(&snap, "main.py");
        let b = rank_and_truncate(&snap, &task, TokenBudget::with_context(100, 0), &ApproxTokenizer).unwrap();
        assert!(b.is_empty());
        assert_eq!(b.total_tokens, 0);
        let tight = TokenBudget::for_task(100, 50, 40, 30);
        assert_eq!(tight.max_context_tokens, 0);
    }

    #[test]
    fn partial_budget_truncates_second_entry() {
        let snap = three_file_repo();
        let task = task_for(&snap, "main.py");
        // bank.py has 6 tokens, util.py 8; 6 + 4 fits "1.5 files"
        let b = rank_and_truncate(&snap, &task, TokenBudget::with_context(100, 10), &ApproxTokenizer).unwrap();
        assert_eq!(b.entries.len(), 2);
        assert!(!b.entries[0].truncated);
        assert!(b.entries[1].truncated);
        assert_eq!(b.entries[1].content, "def helper(amount");
        assert_eq!(b.total_tokens, 10);
    }

    #[test]
    fn third_file_dropped_after_truncation() {
        let mut files = three_file_repo().files;
        files.push(file("zz.py", "acct.deposit(amount)\n"));
        let snap = RepoSnapshot::from_files("bank", "/x", files, "true");
        let task = task_for(&snap, "main.py");
        let ranked: Vec<_> = rank_files(&snap, "main.py")
            .unwrap()
            .into_iter()
            .map(|(f, _)| f.path.clone())
            .collect();
        assert_eq!(ranked, ["zz.py", "bank.py", "util.py"]);
        let zz_tokens = snap.file("zz.py").unwrap().token_count;
        let b = rank_and_truncate(
            &snap,
            &task,
            TokenBudget::with_context(100, zz_tokens + 4),
            &ApproxTokenizer,
        )
        .unwrap();
        let paths: Vec<_> = b.entries.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, ["zz.py", "bank.py"]);
        assert!(b.entries[1].truncated);
    }

    #[test]
    fn ties_prefer_nearby_paths() {
        let snap = RepoSnapshot::from_files(
            "r",
            "/x",
            vec![
                file("pkg/main.py", "alpha\n"),
                file("a/far.py", "alpha\n"),
                file("pkg/near.py", "alpha\n"),
                file("b.py", "alpha\n"),
            ],
            "true",
        );
        let ranked: Vec<_> = rank_files(&snap, "pkg/main.py")
            .unwrap()
            .into_iter()
            .map(|(f, _)| f.path.clone())
            .collect();
        assert_eq!(ranked, ["pkg/near.py", "b.py", "a/far.py"]);
    }

    #[test]
    fn unknown_file_errors() {
        let snap = three_file_repo();
        let mut task = task_for(&snap, "main.py");
        task.file_path = "ghost.py".into();
        assert!(rank_and_truncate(&snap, &task, TokenBudget::default(), &ApproxTokenizer).is_err());
    }

    fn arb_snapshot() -> impl Strategy<Value = RepoSnapshot> {
        prop::collection::vec(("[a-d]{1,3}", "[a-z_ (),.=\n]{1,120}"), 2..8).prop_map(|files| {
            let files = files
                .into_iter()
                .enumerate()
                .map(|(i, (dir, body))| file(&format!("{dir}/f{i}.py"), &format!("x{i} = 1\n{body}")))
                .collect();
            RepoSnapshot::from_files("fuzz", "/x", files, "true")
        })
    }

    proptest! {
        #[test]
        fn bundle_invariants(snap in arb_snapshot(), pick in 0usize..100, budget in 0usize..200) {
            let path = snap.files[pick % snap.files.len()].path.clone();
            let task = task_for(&snap, &path);
            let b = rank_and_truncate(&snap, &task, TokenBudget::with_context(1000, budget), &ApproxTokenizer).unwrap();
            prop_assert!(b.total_tokens <= budget);
            prop_assert_eq!(b.total_tokens, b.entries.iter().map(|e| e.token_count).sum::<usize>());
            prop_assert!(b.entries.iter().all(|e| e.path != path));
            let again = rank_and_truncate(&snap, &task, TokenBudget::with_context(1000, budget), &ApproxTokenizer).unwrap();
            prop_assert_eq!(&b, &again);
        }

        #[test]
        fn larger_budget_is_monotone(snap in arb_snapshot(), pick in 0usize..100, small in 0usize..100, extra in 0usize..100) {
            let path = snap.files[pick % snap.files.len()].path.clone();
            let task = task_for(&snap, &path);
            let a = rank_and_truncate(&snap, &task, TokenBudget::with_context(1000, small), &ApproxTokenizer).unwrap();
            let b = rank_and_truncate(&snap, &task, TokenBudget::with_context(1000, small + extra), &ApproxTokenizer).unwrap();
            for (i, e) in a.entries.iter().enumerate() {
                prop_assert_eq!(&b.entries[i].path, &e.path);
            }
        }
    }
}
