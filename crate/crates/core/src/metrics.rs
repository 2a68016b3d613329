//! Scoring and reporting: edit similarity, Pass@k, per-category reports and
//! dataset statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::exec::ExecStatus;
use crate::ingest::{LanguageTag, RepoOverview};
use crate::mask::MaskLevel;

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `100 * (1 - lev(g, r) / max(|g|, |r|))` over characters; two empty
/// strings score 100.
pub fn edit_similarity(generated: &str, reference: &str) -> f64 {
    let longest = generated.chars().count().max(reference.chars().count());
    if longest == 0 {
        return 100.0;
    }
    100.0 * (1.0 - levenshtein(generated, reference) as f64 / longest as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("pass@k needs 0 <= c <= n and 1 <= k <= n (got n={n}, c={c}, k={k})")]
    PassAtK { n: u64, c: u64, k: u64 },
}

/// Unbiased pass@k estimate `1 - C(n-c, k) / C(n, k)`, computed as
/// `1 - prod_{i=n-c+1..=n} (1 - k/i)`.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, MetricsError> {
    if c > n || k == 0 || k > n {
        return Err(MetricsError::PassAtK { n, c, k });
    }
    if c == 0 {
        return Ok(0.0);
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut miss = 1.0f64;
    for i in (n - c + 1)..=n {
        miss *= 1.0 - k as f64 / i as f64;
    }
    Ok(1.0 - miss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub task_id: String,
    pub level: MaskLevel,
    pub language: LanguageTag,
    pub es: f64,
    pub exact: bool,
    pub status: ExecStatus,
}

impl ScoreRecord {
    /// Score one completion. A missing `generated` text scores ES 0 and is
    /// left out of ES means by its status.
    pub fn new(
        task_id: impl Into<String>,
        level: MaskLevel,
        language: LanguageTag,
        generated: Option<&str>,
        reference: &str,
        status: ExecStatus,
    ) -> Self {
        let (es, exact) = match generated {
            Some(g) if g == reference => (100.0, true),
            Some(g) => (edit_similarity(g, reference), false),
            None => (0.0, false),
        };
        ScoreRecord {
            task_id: task_id.into(),
            level,
            language,
            es,
            exact,
            status,
        }
    }

    fn counts_for_es(&self) -> bool {
        !matches!(self.status, ExecStatus::GenerationError | ExecStatus::HarnessError)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    #[default]
    Level,
    Language,
}

impl std::str::FromStr for GroupBy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "level" => Ok(GroupBy::Level),
            "language" => Ok(GroupBy::Language),
            _ => Err(format!("unknown grouping {s:?} (expected level or language)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageMode {
    #[default]
    Macro,
    Micro,
}

impl std::str::FromStr for AverageMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "macro" => Ok(AverageMode::Macro),
            "micro" => Ok(AverageMode::Micro),
            _ => Err(format!("unknown average {s:?} (expected macro or micro)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub endpoint: String,
    pub mode: String,
    pub max_total_tokens: usize,
    pub tokenizer: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: String,
    /// Scored tasks, harness errors excluded.
    pub count: usize,
    pub passed: usize,
    pub es_count: usize,
    pub generation_errors: usize,
    pub harness_errors: usize,
    pub mean_es: Option<f64>,
    pub pass_at_1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub mode: AverageMode,
    pub mean_es: Option<f64>,
    pub pass_at_1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metadata: ReportMetadata,
    pub group_by: GroupBy,
    pub rows: Vec<ReportRow>,
    pub average: AverageRow,
    pub conventions: Vec<String>,
}

pub const CONVENTIONS: [&str; 3] = [
    "generation errors count as failures for Pass@1 and are excluded from ES",
    "harness errors are excluded from both ES and Pass@1 and reported separately",
    "ES = 100 * (1 - levenshtein / max length), over characters",
];

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn build_row(group: String, records: &[&ScoreRecord]) -> ReportRow {
    let scored: Vec<&&ScoreRecord> = records
        .iter()
        .filter(|r| r.status != ExecStatus::HarnessError)
        .collect();
    let passed = scored.iter().filter(|r| r.status == ExecStatus::Pass).count();
    let es_values: Vec<f64> = records.iter().filter(|r| r.counts_for_es()).map(|r| r.es).collect();
    ReportRow {
        group,
        count: scored.len(),
        passed,
        es_count: es_values.len(),
        generation_errors: records
            .iter()
            .filter(|r| r.status == ExecStatus::GenerationError)
            .count(),
        harness_errors: records.len() - scored.len(),
        mean_es: mean(es_values.into_iter()),
        pass_at_1: (!scored.is_empty()).then(|| 100.0 * passed as f64 / scored.len() as f64),
    }
}

/// Aggregate score records into one row per category plus an average row.
///
/// Records are summed in task-id order so the result does not depend on the
/// order they arrive in. Level grouping always lists the six benchmark
/// categories (and `Class` when present). The macro average is taken over
/// the benchmark categories that have data; `Class` is shown but not averaged.
pub fn aggregate_report(
    records: &[ScoreRecord],
    metadata: ReportMetadata,
    group_by: GroupBy,
    average: AverageMode,
) -> Report {
    let mut sorted: Vec<&ScoreRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.task_id.cmp(&b.task_id));

    let mut groups: BTreeMap<String, Vec<&ScoreRecord>> = BTreeMap::new();
    let order: Vec<String> = match group_by {
        GroupBy::Level => {
            for r in &sorted {
                groups.entry(r.level.label().to_string()).or_default().push(r);
            }
            let mut levels: Vec<MaskLevel> = MaskLevel::BENCHMARK.to_vec();
            if groups.contains_key(MaskLevel::Class.label()) {
                levels.push(MaskLevel::Class);
            }
            levels.iter().map(|l| l.label().to_string()).collect()
        }
        GroupBy::Language => {
            for r in &sorted {
                groups.entry(r.language.as_key()).or_default().push(r);
            }
            groups.keys().cloned().collect()
        }
    };
    let rows: Vec<ReportRow> = order
        .into_iter()
        .map(|g| {
            let recs = groups.get(&g).map(Vec::as_slice).unwrap_or(&[]);
            build_row(g, recs)
        })
        .collect();

    let avg = match average {
        AverageMode::Macro => {
            let averaged: Vec<&ReportRow> = rows
                .iter()
                .filter(|r| group_by == GroupBy::Language || r.group != MaskLevel::Class.label())
                .collect();
            AverageRow {
                mode: average,
                mean_es: mean(averaged.iter().filter_map(|r| r.mean_es)),
                pass_at_1: mean(averaged.iter().filter_map(|r| r.pass_at_1)),
            }
        }
        AverageMode::Micro => {
            let all = build_row(String::new(), &sorted);
            AverageRow {
                mode: average,
                mean_es: all.mean_es,
                pass_at_1: all.pass_at_1,
            }
        }
    };
    Report {
        metadata,
        group_by,
        rows,
        average: avg,
        conventions: CONVENTIONS.iter().map(|s| s.to_string()).collect(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Report {
    pub fn to_text(&self) -> String {
        let m = &self.metadata;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "endpoint: {}  mode: {}  max_total_tokens: {}  tokenizer: {}  seed: {}",
            m.endpoint, m.mode, m.max_total_tokens, m.tokenizer, m.seed
        );
        for c in &self.conventions {
            let _ = writeln!(out, "note: {c}");
        }
        let head = match self.group_by {
            GroupBy::Level => "Category",
            GroupBy::Language => "Language",
        };
        let width = self
            .rows
            .iter()
            .map(|r| r.group.len())
            .chain([head.len(), 12])
            .max()
            .unwrap_or(12);
        let _ = writeln!(
            out,
            "{head:<width$}  {:>6}  {:>7}  {:>7}  {:>9}  {:>9}",
            "N", "ES", "Pass@1", "GenErr", "HarnErr"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>7}  {:>7}  {:>9}  {:>9}",
                r.group,
                r.count,
                opt(r.mean_es),
                opt(r.pass_at_1),
                r.generation_errors,
                r.harness_errors
            );
        }
        let label = match self.average.mode {
            AverageMode::Macro => "Avg. (macro)",
            AverageMode::Micro => "Avg. (micro)",
        };
        let _ = writeln!(
            out,
            "{label:<width$}  {:>6}  {:>7}  {:>7}",
            "",
            opt(self.average.mean_es),
            opt(self.average.pass_at_1)
        );
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,count,mean_es,pass_at_1,generation_errors,harness_errors\n");
        let num = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&r.group),
                r.count,
                num(r.mean_es),
                num(r.pass_at_1),
                r.generation_errors,
                r.harness_errors
            );
        }
        let avg = match self.average.mode {
            AverageMode::Macro => "avg_macro",
            AverageMode::Micro => "avg_micro",
        };
        let _ = writeln!(
            out,
            "{avg},,{},{},,",
            num(self.average.mean_es),
            num(self.average.pass_at_1)
        );
        out
    }
}

/// Token counts of one task and its context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTokenCounts {
    pub level: MaskLevel,
    pub context: usize,
    pub prefix: usize,
    pub middle: usize,
    pub suffix: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

impl Summary {
    pub fn of(values: &[usize]) -> Option<Summary> {
        let min = *values.iter().min()?;
        let max = *values.iter().max()?;
        let sum: u128 = values.iter().map(|&v| v as u128).sum();
        Some(Summary {
            min,
            max,
            mean: sum as f64 / values.len() as f64,
        })
    }

    /// `min/max/mean` cell: values of 1000 and above print as `x.yK`,
    /// smaller means carry one decimal.
    pub fn cell(&self) -> String {
        format!(
            "{}/{}/{}",
            format_count(self.min as f64, false),
            format_count(self.max as f64, false),
            format_count(self.mean, true)
        )
    }
}

fn format_count(v: f64, is_mean: bool) -> String {
    if v >= 1000.0 {
        format!("{:.1}K", v / 1000.0)
    } else if is_mean {
        format!("{v:.1}")
    } else {
        format!("{}", v as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub level: MaskLevel,
    pub count: usize,
    pub context: Summary,
    pub prefix: Summary,
    pub middle: Summary,
    pub suffix: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverviewRow {
    pub repositories: usize,
    pub directories: Option<Summary>,
    pub stars: Option<Summary>,
    pub files: Option<Summary>,
    pub python_files: Option<Summary>,
    pub other_files: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub tokenizer: String,
    /// Categories with at least one task, in report column order.
    pub rows: Vec<StatsRow>,
    pub overview: Option<OverviewRow>,
}

/// Per-category min/max/mean token statistics. Categories without tasks
/// are omitted.
pub fn dataset_stats(tasks: &[TaskTokenCounts], tokenizer: &str) -> StatsTable {
    let mut levels: Vec<MaskLevel> = MaskLevel::BENCHMARK.to_vec();
    levels.push(MaskLevel::Class);
    let rows = levels
        .into_iter()
        .filter_map(|level| {
            let of: Vec<&TaskTokenCounts> = tasks.iter().filter(|t| t.level == level).collect();
            let col = |f: fn(&TaskTokenCounts) -> usize| Summary::of(&of.iter().map(|t| f(t)).collect::<Vec<_>>());
            Some(StatsRow {
                level,
                count: of.len(),
                context: col(|t| t.context)?,
                prefix: col(|t| t.prefix)?,
                middle: col(|t| t.middle)?,
                suffix: col(|t| t.suffix)?,
            })
        })
        .collect();
    StatsTable {
        tokenizer: tokenizer.to_string(),
        rows,
        overview: None,
    }
}

pub fn overview_row(repos: &[RepoOverview]) -> OverviewRow {
    let col = |f: fn(&RepoOverview) -> usize| Summary::of(&repos.iter().map(f).collect::<Vec<_>>());
    let stars: Vec<usize> = repos.iter().filter_map(|r| r.stars.map(|s| s as usize)).collect();
    OverviewRow {
        repositories: repos.len(),
        directories: col(|r| r.directories),
        stars: Summary::of(&stars),
        files: col(|r| r.files),
        python_files: col(|r| r.python_files),
        other_files: col(|r| r.other_files),
    }
}

impl StatsTable {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "token counts by {} (min/max/mean)", self.tokenizer);
        let mut table: Vec<Vec<String>> = vec![
            vec![String::new()],
            vec!["|Samples|".into()],
            vec!["Context Tokens".into()],
            vec!["Prefix Tokens".into()],
            vec!["Middle Tokens".into()],
            vec!["Suffix Tokens".into()],
        ];
        for r in &self.rows {
            table[0].push(r.level.label().into());
            table[1].push(r.count.to_string());
            table[2].push(r.context.cell());
            table[3].push(r.prefix.cell());
            table[4].push(r.middle.cell());
            table[5].push(r.suffix.cell());
        }
        write_table(&mut out, &table);
        if let Some(o) = &self.overview {
            let cell = |s: &Option<Summary>| s.map(|s| s.cell()).unwrap_or_else(|| "-".into());
            let ov = vec![
                vec![
                    String::new(),
                    "|Repositories|".into(),
                    "|Directories|".into(),
                    "|Stars|".into(),
                    "|Files|".into(),
                    "|Python Files|".into(),
                    "|Other Files|".into(),
                ],
                vec![
                    "Repository Overview".into(),
                    o.repositories.to_string(),
                    cell(&o.directories),
                    cell(&o.stars),
                    cell(&o.files),
                    cell(&o.python_files),
                    cell(&o.other_files),
                ],
            ];
            out.push('\n');
            write_table(&mut out, &ov);
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("stats serialize");
        s.push('\n');
        s
    }
}

fn write_table(out: &mut String, rows: &[Vec<String>]) {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                if i == 0 {
                    format!("{cell:<w$}", w = widths[i])
                } else {
                    format!("{cell:>w$}", w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
}
