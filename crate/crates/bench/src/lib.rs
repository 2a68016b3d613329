//! Synthetic inputs shared by the benchmarks.

use std::path::PathBuf;

use repofim_core::ingest::RepoMeta;
use repofim_core::{RepoSnapshot, SourceFile, Tokenizer};

/// A Python module with `functions` small functions and a class every
/// fifth function.
pub fn synthetic_module(tag: usize, functions: usize) -> String {
    let mut out = String::from("import math\n\n\n");
    for f in 0..functions {
        if f % 5 == 0 {
            out.push_str(&format!(
                "class Node{tag}_{f}:\n    def __init__(self, value):\n        self.value = value\n\n    \
                 def scaled(self, k):\n        return Node{tag}_{f}(self.value * k)\n\n\n"
            ));
        }
        out.push_str(&format!("def compute_{tag}_{f}(items, limit={f}):\n    total = 0\n"));
        for l in 0..(3 + f % 7) {
            out.push_str(&format!(
                "    for item in items[:{l}]:\n        total += math.floor(item * {}) % (limit + 1)\n",
                l + f
            ));
        }
        out.push_str("    return total\n\n\n");
    }
    out
}

pub fn synthetic_snapshot(files: usize, functions: usize, tokenizer: &dyn Tokenizer) -> RepoSnapshot {
    RepoSnapshot {
        repo_id: "synthetic".into(),
        root: PathBuf::from("/nonexistent"),
        files: (0..files)
            .map(|i| SourceFile::new(format!("pkg/mod_{i:03}.py"), &synthetic_module(i, functions), tokenizer))
            .collect(),
        test_command: "true".into(),
        meta: RepoMeta::default(),
    }
}
