//! Repository snapshots: file discovery, language tagging and heuristic filters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ignore::gitignore::{Gitignore, GitignoreBuilder};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::tokenize::Tokenizer;

/// File name of the optional per-repository metadata sidecar.
pub const META_SIDECAR: &str = ".repofim-meta.toml";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("repository root {path} is not readable: {source}")]
    UnreadableRoot {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid ignore pattern {pattern:?}: {message}")]
    BadIgnorePattern { pattern: String, message: String },
    #[error("invalid metadata sidecar {path}: {message}")]
    BadSidecar { path: PathBuf, message: String },
    #[error("repository {repo} has {stars} stars, below the minimum of {min}")]
    BelowMinStars { repo: String, stars: u64, min: u64 },
}

/// Language of a source file. The seven named tags are the retained
/// mainstream languages; everything else is `Other(extension)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LanguageTag {
    Python,
    CSharp,
    Cpp,
    Java,
    JavaScript,
    TypeScript,
    Php,
    Other(String),
}

impl LanguageTag {
    pub const NAMED: [LanguageTag; 7] = [
        LanguageTag::Python,
        LanguageTag::CSharp,
        LanguageTag::Cpp,
        LanguageTag::Java,
        LanguageTag::JavaScript,
        LanguageTag::TypeScript,
        LanguageTag::Php,
    ];

    pub fn as_key(&self) -> String {
        match self {
            LanguageTag::Python => "python".into(),
            LanguageTag::CSharp => "csharp".into(),
            LanguageTag::Cpp => "cpp".into(),
            LanguageTag::Java => "java".into(),
            LanguageTag::JavaScript => "javascript".into(),
            LanguageTag::TypeScript => "typescript".into(),
            LanguageTag::Php => "php".into(),
            LanguageTag::Other(ext) => format!("other:{ext}"),
        }
    }

    /// Info string for fenced code blocks.
    pub fn fence_tag(&self) -> &str {
        match self {
            LanguageTag::Python => "python",
            LanguageTag::CSharp => "csharp",
            LanguageTag::Cpp => "cpp",
            LanguageTag::Java => "java",
            LanguageTag::JavaScript => "javascript",
            LanguageTag::TypeScript => "typescript",
            LanguageTag::Php => "php",
            LanguageTag::Other(ext) => ext,
        }
    }

    /// Line comment leader used for path headers in prompts.
    pub fn line_comment(&self) -> &'static str {
        match self {
            LanguageTag::Python | LanguageTag::Php | LanguageTag::Other(_) => "#",
            _ => "//",
        }
    }

    pub fn is_named(&self) -> bool {
        !matches!(self, LanguageTag::Other(_))
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_key())
    }
}

impl From<LanguageTag> for String {
    fn from(tag: LanguageTag) -> String {
        tag.as_key()
    }
}

impl FromStr for LanguageTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "python" => LanguageTag::Python,
            "csharp" => LanguageTag::CSharp,
            "cpp" => LanguageTag::Cpp,
            "java" => LanguageTag::Java,
            "javascript" => LanguageTag::JavaScript,
            "typescript" => LanguageTag::TypeScript,
            "php" => LanguageTag::Php,
            other => match other.strip_prefix("other:") {
                Some(ext) => LanguageTag::Other(ext.to_string()),
                None => return Err(format!("unknown language tag {other:?}")),
            },
        })
    }
}

impl TryFrom<String> for LanguageTag {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Classify a file by extension. `content` does not influence the result
/// for any of the named extensions.
pub fn detect_language(path: &str, _content: &str) -> LanguageTag {
    let file_name = path.rsplit('/').next().unwrap_or(path);
    let ext = match file_name.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() => ext.to_ascii_lowercase(),
        _ => String::new(),
    };
    match ext.as_str() {
        "py" => LanguageTag::Python,
        "cs" => LanguageTag::CSharp,
        "cpp" | "cc" | "hpp" | "h" => LanguageTag::Cpp,
        "java" => LanguageTag::Java,
        "js" => LanguageTag::JavaScript,
        "ts" => LanguageTag::TypeScript,
        "php" => LanguageTag::Php,
        _ => LanguageTag::Other(ext),
    }
}

/// Convert CRLF and lone CR line endings to LF.
pub fn normalize_line_endings(text: &str) -> String {
    if !text.contains('\r') {
        return text.to_string();
    }
    text.replace("\r\n", "\n").replace('\r', "\n")
}

/// Number of LF-terminated lines plus a final unterminated line, if any.
pub fn count_lines(text: &str) -> usize {
    let terminated = text.bytes().filter(|&b| b == b'\n').count();
    if text.is_empty() || text.ends_with('\n') {
        terminated
    } else {
        terminated + 1
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub content: String,
    pub language: LanguageTag,
    pub line_count: usize,
    pub token_count: usize,
    pub sha256: String,
}

impl SourceFile {
    /// Build a file record from raw text. Line endings are normalized and all
    /// derived fields are recomputed from the normalized content.
    pub fn new(path: impl Into<String>, content: &str, tokenizer: &dyn Tokenizer) -> Self {
        let path = path.into().replace('\\', "/");
        let content = normalize_line_endings(content);
        let language = detect_language(&path, &content);
        SourceFile {
            line_count: count_lines(&content),
            token_count: tokenizer.count(&content),
            sha256: sha256_hex(content.as_bytes()),
            path,
            content,
            language,
        }
    }

    pub fn hash_matches(&self) -> bool {
        sha256_hex(self.content.as_bytes()) == self.sha256
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoMeta {
    pub stars: Option<u64>,
    pub commit: Option<String>,
    pub directory_count: usize,
}

#[derive(Debug, Default, Deserialize)]
struct Sidecar {
    stars: Option<u64>,
    commit: Option<String>,
}

/// Where a repository lives and how to test it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSource {
    pub id: String,
    pub root: PathBuf,
    pub test_command: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestFilters {
    pub max_file_bytes: u64,
    /// Applied only when the metadata sidecar provides a star count.
    pub min_stars: Option<u64>,
    /// Gitignore-style patterns relative to the repository root.
    pub ignore: Vec<String>,
}

impl Default for IngestFilters {
    fn default() -> Self {
        IngestFilters {
            max_file_bytes: 1 << 20,
            min_stars: None,
            ignore: vec![
                "__pycache__/".into(),
                "*.pyc".into(),
                ".pytest_cache/".into(),
                "node_modules/".into(),
            ],
        }
    }
}

/// Immutable view of a repository after filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSnapshot {
    pub repo_id: String,
    pub root: PathBuf,
    pub files: Vec<SourceFile>,
    pub test_command: String,
    pub meta: RepoMeta,
}

/// Repository overview counts (files, per-language files, directories).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoOverview {
    pub files: usize,
    pub python_files: usize,
    pub other_files: usize,
    pub directories: usize,
    pub stars: Option<u64>,
    pub per_language: BTreeMap<String, usize>,
}

impl RepoSnapshot {
    /// Assemble a snapshot from in-memory files. Files are sorted by path;
    /// the directory count is derived from their paths.
    pub fn from_files(
        repo_id: impl Into<String>,
        root: impl Into<PathBuf>,
        mut files: Vec<SourceFile>,
        test_command: impl Into<String>,
    ) -> Self {
        files.sort_by(|a, b| a.path.cmp(&b.path));
        files.dedup_by(|a, b| a.path == b.path);
        let directory_count = count_directories(files.iter().map(|f| f.path.as_str()));
        RepoSnapshot {
            repo_id: repo_id.into(),
            root: root.into(),
            files,
            test_command: test_command.into(),
            meta: RepoMeta {
                directory_count,
                ..RepoMeta::default()
            },
        }
    }

    pub fn file(&self, path: &str) -> Option<&SourceFile> {
        self.files
            .binary_search_by(|f| f.path.as_str().cmp(path))
            .ok()
            .map(|i| &self.files[i])
    }

    /// Digest over every (path, content hash) pair.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.repo_id.as_bytes());
        for f in &self.files {
            h.update([0u8]);
            h.update(f.path.as_bytes());
            h.update([0u8]);
            h.update(f.sha256.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// True when every file's stored hash matches its content.
    pub fn verify(&self) -> bool {
        self.files.iter().all(SourceFile::hash_matches)
    }

    pub fn overview(&self) -> RepoOverview {
        let mut per_language = BTreeMap::new();
        for f in &self.files {
            *per_language.entry(f.language.as_key()).or_insert(0) += 1;
        }
        let python_files = per_language.get("python").copied().unwrap_or(0);
        RepoOverview {
            files: self.files.len(),
            python_files,
            other_files: self.files.len() - python_files,
            directories: self.meta.directory_count,
            stars: self.meta.stars,
            per_language,
        }
    }
}

fn count_directories<'a>(paths: impl Iterator<Item = &'a str>) -> usize {
    let mut dirs = BTreeSet::new();
    dirs.insert(String::new());
    for p in paths {
        let mut acc = String::new();
        let parts: Vec<&str> = p.split('/').collect();
        for part in &parts[..parts.len().saturating_sub(1)] {
            if !acc.is_empty() {
                acc.push('/');
            }
            acc.push_str(part);
            dirs.insert(acc.clone());
        }
    }
    dirs.len()
}

fn build_matcher(root: &Path, patterns: &[String]) -> Result<Gitignore, IngestError> {
    let mut builder = GitignoreBuilder::new(root);
    for pattern in patterns {
        builder
            .add_line(None, pattern)
            .map_err(|e| IngestError::BadIgnorePattern {
                pattern: pattern.clone(),
                message: e.to_string(),
            })?;
    }
    builder.build().map_err(|e| IngestError::BadIgnorePattern {
        pattern: patterns.join(", "),
        message: e.to_string(),
    })
}

fn read_sidecar(root: &Path) -> Result<Sidecar, IngestError> {
    let path = root.join(META_SIDECAR);
    match fs::read_to_string(&path) {
        Ok(text) => toml::from_str(&text).map_err(|e| IngestError::BadSidecar {
            path,
            message: e.to_string(),
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Sidecar::default()),
        Err(e) => Err(IngestError::BadSidecar {
            path,
            message: e.to_string(),
        }),
    }
}

fn relative_slash_path(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let parts: Option<Vec<&str>> = rel.components().map(|c| c.as_os_str().to_str()).collect();
    Some(parts?.join("/"))
}

/// Read a repository from disk into a filtered, immutable snapshot.
///
/// Files that exceed `max_file_bytes`, match an ignore pattern, contain NUL
/// bytes or fail strict UTF-8 decoding are left out. Output order is
/// lexicographic by relative path.
pub fn scan_repository(
    source: &RepoSource,
    filters: &IngestFilters,
    tokenizer: &dyn Tokenizer,
) -> Result<RepoSnapshot, IngestError> {
    let root = &source.root;
    fs::read_dir(root).map_err(|e| IngestError::UnreadableRoot {
        path: root.clone(),
        source: e,
    })?;
    let sidecar = read_sidecar(root)?;
    if let (Some(min), Some(stars)) = (filters.min_stars, sidecar.stars) {
        if stars < min {
            return Err(IngestError::BelowMinStars {
                repo: source.id.clone(),
                stars,
                min,
            });
        }
    }
    let matcher = build_matcher(root, &filters.ignore)?;

    let mut candidates: Vec<(String, PathBuf)> = Vec::new();
    let walker = WalkDir::new(root).follow_links(false).into_iter().filter_entry(|e| {
        if e.depth() == 0 {
            return true;
        }
        let is_dir = e.file_type().is_dir();
        if is_dir && e.file_name() == ".git" {
            return false;
        }
        !matcher.matched_path_or_any_parents(e.path(), is_dir).is_ignore()
    });
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                warn!("skipping unreadable entry under {}: {e}", root.display());
                continue;
            }
        };
        if !entry.file_type().is_file() || entry.depth() == 0 {
            continue;
        }
        let Some(rel) = relative_slash_path(root, entry.path()) else {
            warn!("skipping non-UTF-8 path {}", entry.path().display());
            continue;
        };
        if rel == META_SIDECAR {
            continue;
        }
        match entry.metadata() {
            Ok(m) if m.len() > filters.max_file_bytes => continue,
            Ok(_) => {}
            Err(e) => {
                warn!("skipping {rel}: {e}");
                continue;
            }
        }
        candidates.push((rel, entry.path().to_path_buf()));
    }
    candidates.sort_by(|a, b| a.0.cmp(&b.0));

    let files: Vec<SourceFile> = candidates
        .par_iter()
        .filter_map(|(rel, abs)| {
            let bytes = match fs::read(abs) {
                Ok(b) => b,
                Err(e) => {
                    warn!("skipping {rel}: {e}");
                    return None;
                }
            };
            if bytes.len() as u64 > filters.max_file_bytes {
                return None;
            }
            if bytes.contains(&0) {
                warn!("skipping binary file {rel}");
                return None;
            }
            match std::str::from_utf8(&bytes) {
                Ok(text) => Some(SourceFile::new(rel.clone(), text, tokenizer)),
                Err(_) => {
                    warn!("skipping {rel}: not valid UTF-8");
                    None
                }
            }
        })
        .collect();

    let directory_count = count_directories(files.iter().map(|f| f.path.as_str()));
    Ok(RepoSnapshot {
        repo_id: source.id.clone(),
        root: root.clone(),
        files,
        test_command: source.test_command.clone(),
        meta: RepoMeta {
            stars: sidecar.stars,
            commit: sidecar.commit,
            directory_count,
        },
    })
}
