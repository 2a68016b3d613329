//! Word n-gram decontamination.
//!
//! Reference corpora are normalized (lowercased, whitespace-collapsed, split
//! on spaces) and every window of `n` consecutive words is fingerprinted
//! with 64-bit XXH3. A task is dropped when the words around and inside its
//! middle contain any indexed window.
//!
//! Fingerprints make a false drop possible when two distinct n-grams
//! collide; with `k` indexed n-grams and `q` probed windows the expected
//! number of collisions is about `k * q / 2^64`. A planted exact match is
//! never missed. Building with `exact` keeps the raw n-grams as well, so a
//! hit must also match as a string.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::mask::MaskTask;

pub const DEFAULT_N: usize = 20;
/// Words of surrounding prefix/suffix included on each side of the middle.
pub const CONTEXT_WINDOW_WORDS: usize = 40;

const MAGIC: &[u8; 8] = b"RFNGIDX1";
const HASH_XXH3_64: u32 = 1;
const FINGERPRINT_FILE: &str = "fingerprints.bin";
const SOURCES_FILE: &str = "sources.json";

#[derive(Debug, thiserror::Error)]
pub enum DecontamError {
    #[error("n-gram size must be at least 1")]
    ZeroN,
    #[error("cannot read corpus {path}: {source}")]
    UnreadableCorpus {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("index I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed index file {path}: {message}")]
    BadIndex { path: PathBuf, message: String },
}

/// Lowercased, whitespace-separated words.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn fingerprint(words: &[String]) -> u64 {
    xxh3_64(words.join(" ").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramIndex {
    n: usize,
    /// Sorted and deduplicated.
    fingerprints: Vec<u64>,
    source_labels: Vec<String>,
    exact: Option<HashSet<String>>,
}

impl NGramIndex {
    pub fn empty(n: usize) -> Self {
        NGramIndex {
            n,
            fingerprints: Vec::new(),
            source_labels: Vec::new(),
            exact: None,
        }
    }

    /// Index the given texts directly.
    pub fn from_texts<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        n: usize,
        exact: bool,
    ) -> Result<Self, DecontamError> {
        if n == 0 {
            return Err(DecontamError::ZeroN);
        }
        let mut fps = Vec::new();
        let mut raw = exact.then(HashSet::new);
        for t in texts {
            add_windows(t, n, &mut fps, raw.as_mut());
        }
        fps.sort_unstable();
        fps.dedup();
        Ok(NGramIndex {
            n,
            fingerprints: fps,
            source_labels: Vec::new(),
            exact: raw,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.fingerprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fingerprints.is_empty()
    }

    pub fn source_labels(&self) -> &[String] {
        &self.source_labels
    }

    fn contains_window(&self, window: &[String]) -> bool {
        if self.fingerprints.binary_search(&fingerprint(window)).is_err() {
            return false;
        }
        match &self.exact {
            Some(raw) => raw.contains(&window.join(" ")),
            None => true,
        }
    }

    /// True if any n-word window of `words` is indexed.
    pub fn matches_words(&self, words: &[String]) -> bool {
        if self.fingerprints.is_empty() || words.len() < self.n {
            return false;
        }
        words.windows(self.n).any(|w| self.contains_window(w))
    }

    /// Write `fingerprints.bin` (header: magic, n, hash id, count; then the
    /// sorted little-endian fingerprints) and `sources.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), DecontamError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DecontamError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut buf = Vec::with_capacity(24 + 8 * self.fingerprints.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.n as u32).to_le_bytes());
        buf.extend_from_slice(&HASH_XXH3_64.to_le_bytes());
        buf.extend_from_slice(&(self.fingerprints.len() as u64).to_le_bytes());
        for fp in &self.fingerprints {
            buf.extend_from_slice(&fp.to_le_bytes());
        }
        let fp_path = dir.join(FINGERPRINT_FILE);
        fs::write(&fp_path, buf).map_err(io(&fp_path))?;
        let src_path = dir.join(SOURCES_FILE);
        let labels = serde_json::to_vec_pretty(&self.source_labels).expect("labels serialize");
        fs::write(&src_path, labels).map_err(io(&src_path))?;
        Ok(())
    }

    pub fn exists_in(dir: &Path) -> bool {
        dir.join(FINGERPRINT_FILE).is_file()
    }

    pub fn load(dir: &Path) -> Result<Self, DecontamError> {
        let fp_path = dir.join(FINGERPRINT_FILE);
        let bytes = fs::read(&fp_path).map_err(|source| DecontamError::Io {
            path: fp_path.clone(),
            source,
        })?;
        let bad = |message: &str| DecontamError::BadIndex {
            path: fp_path.clone(),
            message: message.to_string(),
        };
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(bad("missing header"));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let hash_id = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        if n == 0 {
            return Err(bad("n is zero"));
        }
        if hash_id != HASH_XXH3_64 {
            return Err(bad(&format!("unknown hash function id {hash_id}")));
        }
        if bytes.len() != 24 + 8 * count {
            return Err(bad("fingerprint count does not match file length"));
        }
        let fingerprints: Vec<u64> = bytes[24..]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if fingerprints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("fingerprints are not strictly sorted"));
        }
        let src_path = dir.join(SOURCES_FILE);
        let source_labels = match fs::read(&src_path) {
            Ok(b) => serde_json::from_slice(&b).map_err(|e| DecontamError::BadIndex {
                path: src_path,
                message: e.to_string(),
            })?,
            Err(_) => Vec::new(),
        };
        Ok(NGramIndex {
            n,
            fingerprints,
            source_labels,
            exact: None,
        })
    }
}

fn add_windows(text: &str, n: usize, out: &mut Vec<u64>, raw: Option<&mut HashSet<String>>) {
    let words = normalize_words(text);
    if words.len() < n {
        return;
    }
    match raw {
        Some(raw) => {
            for w in words.windows(n) {
                let joined = w.join(" ");
                out.push(xxh3_64(joined.as_bytes()));
                raw.insert(joined);
            }
        }
        None => out.extend(words.windows(n).map(fingerprint)),
    }
}

#[derive(Deserialize)]
struct TextRecord {
    text: Option<String>,
}

fn corpus_texts(path: &Path) -> Result<Vec<String>, DecontamError> {
    let unreadable = |source| DecontamError::UnreadableCorpus {
        path: path.to_path_buf(),
        source,
    };
    let is_jsonl = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    );
    if !is_jsonl {
        return fs::read_to_string(path).map(|t| vec![t]).map_err(unreadable);
    }
    let reader = BufReader::new(fs::File::open(path).map_err(unreadable)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(unreadable)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TextRecord = serde_json::from_str(&line).map_err(|e| DecontamError::BadRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        match rec.text {
            Some(t) => out.push(t),
            None => {
                return Err(DecontamError::BadRecord {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "record has no `text` field".into(),
                });
            }
        }
    }
    Ok(out)
}

/// Index every `n`-word window of the given corpus files. Plain files are
/// indexed whole; `.jsonl` files contribute the `text` field of each record.
/// Any unreadable file fails the whole build.
pub fn build_ngram_index(corpus_paths: &[PathBuf], n: usize, exact: bool) -> Result<NGramIndex, DecontamError> {
    if n == 0 {
        return Err(DecontamError::ZeroN);
    }
    let shards: Vec<(Vec<u64>, Option<HashSet<String>>)> = corpus_paths
        .par_iter()
        .map(|p| {
            let mut fps = Vec::new();
            let mut raw = exact.then(HashSet::new);
            for text in corpus_texts(p)? {
                add_windows(&text, n, &mut fps, raw.as_mut());
            }
            Ok((fps, raw))
        })
        .collect::<Result<_, DecontamError>>()?;
    let mut fingerprints = Vec::new();
    let mut raw_all = exact.then(HashSet::new);
    for (fps, raw) in shards {
        fingerprints.extend(fps);
        if let (Some(all), Some(raw)) = (raw_all.as_mut(), raw) {
            all.extend(raw);
        }
    }
    fingerprints.sort_unstable();
    fingerprints.dedup();
    Ok(NGramIndex {
        n,
        fingerprints,
        source_labels: corpus_paths.iter().map(|p| p.display().to_string()).collect(),
        exact: raw_all,
    })
}

/// Anything with a prefix/middle/suffix split.
pub trait FimParts {
    fn fim_parts(&self) -> (&str, &str, &str);
}

impl FimParts for MaskTask {
    fn fim_parts(&self) -> (&str, &str, &str) {
        (&self.prefix, &self.middle, &self.suffix)
    }
}

/// Normalized words of the middle plus up to `window` words on each side.
pub fn probe_words(prefix: &str, middle: &str, suffix: &str, window: usize) -> Vec<String> {
    let text = format!("{prefix}{middle}{suffix}");
    let mid = prefix.len()..prefix.len() + middle.len();
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    let first = spans.partition_point(|&(_, e)| e <= mid.start);
    let last = spans.partition_point(|&(s, _)| s < mid.end).max(first);
    let lo = first.saturating_sub(window);
    let hi = (last + window).min(spans.len());
    spans[lo..hi].iter().map(|&(s, e)| text[s..e].to_lowercase()).collect()
}

pub fn is_contaminated(parts: (&str, &str, &str), index: &NGramIndex) -> bool {
    let (p, m, s) = parts;
    index.matches_words(&probe_words(p, m, s, CONTEXT_WINDOW_WORDS))
}

/// Split tasks into (kept, dropped), preserving order within each.
pub fn filter_tasks<T: FimParts + Send + Sync>(tasks: Vec<T>, index: &NGramIndex) -> (Vec<T>, Vec<T>) {
    let flags: Vec<bool> = tasks
        .par_iter()
        .map(|t| is_contaminated(t.fim_parts(), index))
        .collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (t, hit) in tasks.into_iter().zip(flags) {
        if hit {
            dropped.push(t);
        } else {
            kept.push(t);
        }
    }
    (kept, dropped)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecontamSummary {
    pub n: usize,
    pub index_size: usize,
    pub kept: usize,
    pub dropped: usize,
}
