#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use repofim_core::{IngestFilters, PipelineConfig, RepoSnapshot, RepoSource, default_tokenizer, scan_repository};

pub const FIXTURE_REPOS: [&str; 3] = ["bank", "geometry", "textkit"];
pub const TEST_COMMAND: &str = "python3 -m unittest discover -s tests -q";

pub fn fixture_root(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/repos")
        .join(name)
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn snapshot(name: &str) -> RepoSnapshot {
    let source = RepoSource {
        id: name.to_string(),
        root: fixture_root(name),
        test_command: TEST_COMMAND.to_string(),
    };
    scan_repository(&source, &IngestFilters::default(), default_tokenizer().as_ref()).unwrap()
}

/// Pipeline config over all fixture repositories, writing into `out`.
/// `extra` is appended verbatim to the TOML document.
pub fn fixture_config_toml(out: &Path, seed: u64, extra: &str) -> String {
    let mut doc = format!("seed = {seed}\nout_dir = {:?}\n", out.display().to_string());
    for name in FIXTURE_REPOS {
        doc.push_str(&format!(
            "\n[[repos]]\nid = {name:?}\npath = {:?}\ntest_command = {TEST_COMMAND:?}\n",
            fixture_root(name).display().to_string()
        ));
    }
    doc.push('\n');
    doc.push_str(extra);
    doc
}

pub fn write_config(dir: &Path, seed: u64, extra: &str) -> PathBuf {
    let out = dir.join("out");
    let path = dir.join("repofim.toml");
    fs::write(&path, fixture_config_toml(&out, seed, extra)).unwrap();
    path
}

pub fn load_config(dir: &Path, seed: u64, extra: &str) -> PipelineConfig {
    PipelineConfig::load(&write_config(dir, seed, extra)).unwrap()
}
