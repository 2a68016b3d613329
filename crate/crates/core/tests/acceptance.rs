//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::thread;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repofim_core::client::{FimOrder, PromptMode, render_chat_prompt, render_fim_prompt};
use repofim_core::decontam::is_contaminated;
use repofim_core::pipeline::{IngestRecord, TaskMeta, read_jsonl, to_jsonl};
use repofim_core::{
    BenchTask, CarveConstraints, ExecStatus, GrammarRegistry, IngestFilters, LanguageTag, MaskLevel, MaskTask,
    ModelEndpoint, NGramIndex, RepoSnapshot, RepoSource, ResultRecord, SandboxSpec, Stage, TokenBudget,
    default_tokenizer, edit_similarity, pass_at_k, rank_and_truncate, run_pipeline, run_tests, sample_tasks,
    scan_repository,
};

type Verdict = Result<String, String>;

fn check(cond: bool, detail: String) -> Verdict {
    if cond { Ok(detail) } else { Err(detail) }
}

fn all_levels_toml(samples: usize, workers: usize) -> String {
    format!(
        "[generate]\nlevels = [\"random_span\", \"random_single_line\", \"random_multi_line\", \"expression\", \
         \"statement\", \"function\", \"class\"]\nsamples_per_file = {samples}\n\n[sandbox]\nworkers = {workers}\n"
    )
}

fn digest(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(fs::read(path).unwrap_or_default()))
}

/// Tasks over every fixture repository at every mask level.
fn construction_tasks() -> Result<(Vec<BenchTask>, Vec<IngestRecord>, f64), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = common::load_config(dir.path(), 11, &all_levels_toml(60, 4));
    let start = Instant::now();
    run_pipeline(&cfg, &[Stage::Ingest, Stage::Generate]).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let tasks = read_jsonl(&cfg.out_dir.join("tasks.jsonl"))?;
    let ingest = read_jsonl(&cfg.out_dir.join("ingest.jsonl"))?;
    Ok((tasks, ingest, secs))
}

fn criterion_1(tasks: &[BenchTask], ingest: &[IngestRecord], secs: f64) -> Verdict {
    let roots: BTreeMap<&str, &RepoSnapshot> = ingest.iter().map(|r| (r.repo_id.as_str(), &r.snapshot)).collect();
    let mut exact = 0usize;
    let mut levels = BTreeSet::new();
    for t in tasks {
        levels.insert(t.level);
        let stitched = format!("{}{}{}", t.prefix, t.middle, t.suffix);
        let on_disk = fs::read(roots[t.repo.as_str()].root.join(&t.file_path)).unwrap_or_default();
        if stitched.as_bytes() == on_disk.as_slice() {
            exact += 1;
        }
    }
    let detail = format!(
        "{exact}/{} tasks byte-exact over {} repos, {} levels, {secs:.1}s",
        tasks.len(),
        ingest.len(),
        levels.len()
    );
    check(
        ingest.len() >= 3 && tasks.len() >= 1000 && exact == tasks.len() && levels.len() == 7 && secs < 60.0,
        detail,
    )
}

fn criterion_2(tasks: &[BenchTask], ingest: &[IngestRecord]) -> Verdict {
    let registry = GrammarRegistry::default();
    let whitelist = CarveConstraints::default().whitelist;
    let files: BTreeMap<(&str, &str), _> = ingest
        .iter()
        .flat_map(|r| {
            r.snapshot
                .files
                .iter()
                .map(move |f| ((r.repo_id.as_str(), f.path.as_str()), f))
        })
        .collect();
    let mut trees = BTreeMap::new();
    let mut checked = 0usize;
    let mut sound = 0usize;
    for t in tasks.iter().filter(|t| t.level.is_grammar()) {
        checked += 1;
        let key = (t.repo.as_str(), t.file_path.as_str());
        let tree = trees
            .entry(key)
            .or_insert_with(|| registry.parse(files[&key]).expect("fixture parses"));
        let range = t.meta.byte_range[0]..t.meta.byte_range[1];
        let kinds = whitelist.kinds(&t.language, t.level);
        let hit = tree
            .nodes
            .iter()
            .any(|n| n.range == range && n.matches(kinds).is_some());
        if hit && t.middle.len() == range.len() {
            sound += 1;
        }
    }
    check(
        checked >= 500 && sound == checked,
        format!("{sound}/{checked} grammar tasks re-parse to a whitelisted node"),
    )
}

fn criterion_3() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = common::load_config(dir.path(), 3, &all_levels_toml(4, 4));
    let start = Instant::now();
    run_pipeline(
        &cfg,
        &[
            Stage::Ingest,
            Stage::Generate,
            Stage::Decontaminate,
            Stage::Evaluate,
            Stage::Report,
        ],
    )
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let results: Vec<ResultRecord> = read_jsonl(&cfg.out_dir.join("results.jsonl"))?;
    let mut by_level: BTreeMap<MaskLevel, (usize, usize, f64)> = BTreeMap::new();
    for r in &results {
        let e = by_level.entry(r.level).or_default();
        e.0 += 1;
        e.1 += usize::from(r.status == ExecStatus::Pass);
        e.2 += r.es;
    }
    let mut ok = by_level.len() == 7 && secs < 600.0;
    let mut cells = Vec::new();
    for (level, (n, pass, es)) in &by_level {
        let p1 = 100.0 * *pass as f64 / *n as f64;
        let mean_es = es / *n as f64;
        ok &= p1 == 100.0 && mean_es == 100.0;
        cells.push(format!("{} {p1:.1}/{mean_es:.1}", level.label()));
    }
    let report = fs::read_to_string(cfg.out_dir.join("report.json")).unwrap_or_default();
    ok &= !report.is_empty();
    check(
        ok,
        format!(
            "{} tasks, Pass@1/ES per level [{}], {secs:.1}s with 4 workers",
            results.len(),
            cells.join(", ")
        ),
    )
}

fn criterion_4() -> Verdict {
    let snap = common::snapshot("bank");
    let file = snap.file("bank/account.py").expect("fixture file");
    let constraints = CarveConstraints::default();
    let task = sample_tasks(
        "bank",
        file,
        MaskLevel::Function,
        1,
        &constraints,
        &GrammarRegistry::default(),
        default_tokenizer().as_ref(),
    )
    .map_err(|e| e.to_string())?
    .remove(0);
    let planted = format!("{}\nimport time\ntime.sleep(200)\n", task.original());
    let outcome = run_tests(&snap, &task, &planted, &SandboxSpec::default());
    check(
        outcome.status == ExecStatus::Timeout && (120.0..=125.0).contains(&outcome.duration_seconds),
        format!("status {:?}, duration {:.2}s", outcome.status, outcome.duration_seconds),
    )
}

fn brute_force_pass_at_k(n: u64, c: u64, k: u64) -> f64 {
    let mut total = 0u64;
    let mut hit = 0u64;
    for mask in 0u32..(1 << n) {
        if u64::from(mask.count_ones()) != k {
            continue;
        }
        total += 1;
        if mask & ((1u32 << c) - 1) != 0 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

fn criterion_5() -> Verdict {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in 1..=8 {
        for c in 0..=n {
            for k in 1..=n {
                let got = pass_at_k(n, c, k).map_err(|e| e.to_string())?;
                worst = worst.max((got - brute_force_pass_at_k(n, c, k)).abs());
                cases += 1;
            }
        }
    }
    check(worst < 1e-12, format!("{cases} cases, max abs error {worst:e}"))
}

fn reference_levenshtein(a: &[char], b: &[char]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

fn random_string(rng: &mut ChaCha8Rng, alphabet: &[char]) -> Vec<char> {
    let len = rng.random_range(0..=200);
    (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

fn criterion_6() -> Verdict {
    let alphabets: [Vec<char>; 3] = [
        "ab".chars().collect(),
        "abcdefghij (){}:=\n".chars().collect(),
        "aéλ中🙂 \t".chars().collect(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let alpha = &alphabets[i % 3];
        let a = random_string(&mut rng, alpha);
        let b = if i % 4 == 0 {
            let mut b = a.clone();
            for _ in 0..rng.random_range(0..5) {
                if !b.is_empty() {
                    let at = rng.random_range(0..b.len());
                    b[at] = *alpha.choose(&mut rng).unwrap();
                }
            }
            b
        } else {
            random_string(&mut rng, alpha)
        };
        let longest = a.len().max(b.len());
        let expected = if longest == 0 {
            100.0
        } else {
            100.0 * (1.0 - reference_levenshtein(&a, &b) as f64 / longest as f64)
        };
        let sa: String = a.iter().collect();
        let sb: String = b.iter().collect();
        worst = worst.max((edit_similarity(&sa, &sb) - expected).abs());
    }
    check(worst <= 1e-9, format!("10000 pairs, max abs deviation {worst:e}"))
}

fn criterion_7(tasks: &[BenchTask]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let docs: Vec<Vec<String>> = (0..40)
        .map(|_| (0..400).map(|_| format!("zq{}", rng.random_range(0..3000))).collect())
        .collect();
    let texts: Vec<String> = docs.iter().map(|d| d.join(" ")).collect();
    let index = NGramIndex::from_texts(texts.iter().map(String::as_str), 20, false).map_err(|e| e.to_string())?;

    let plant = |t: &BenchTask, run: &[String], i: usize| -> (String, String, String) {
        let words = run.join(" ");
        if i.is_multiple_of(2) {
            (t.prefix.clone(), format!("{} {words} ", t.middle), t.suffix.clone())
        } else {
            (format!("{} {words} ", t.prefix), t.middle.clone(), t.suffix.clone())
        }
    };
    let sample: Vec<&BenchTask> = tasks.iter().step_by((tasks.len() / 250).max(1)).take(250).collect();
    let mut planted20 = 0;
    let mut dropped20 = 0;
    let mut planted19 = 0;
    let mut dropped19 = 0;
    let mut clean_dropped = 0;
    for (i, t) in sample.iter().enumerate() {
        let doc = &docs[rng.random_range(0..docs.len())];
        let at = rng.random_range(0..doc.len() - 20);
        let (p, m, s) = plant(t, &doc[at..at + 20], i);
        planted20 += 1;
        dropped20 += usize::from(is_contaminated((&p, &m, &s), &index));
        let (p, m, s) = plant(t, &doc[at..at + 19], i);
        planted19 += 1;
        dropped19 += usize::from(is_contaminated((&p, &m, &s), &index));
        clean_dropped += usize::from(is_contaminated((&t.prefix, &t.middle, &t.suffix), &index));
    }
    check(
        planted20 >= 200 && dropped20 == planted20 && dropped19 == 0 && clean_dropped == 0,
        format!(
            "20-word plants dropped {dropped20}/{planted20}, 19-word plants dropped {dropped19}/{planted19}, \
             unplanted dropped {clean_dropped}"
        ),
    )
}

fn synthetic_python(rng: &mut ChaCha8Rng, target_bytes: usize) -> String {
    let mut out = String::from("import os\n\n");
    let mut f = 0;
    while out.len() < target_bytes {
        if f % 5 == 0 {
            out.push_str(&format!(
                "class Holder{f}:\n    def get(self, v{f}):\n        return v{f} * {f}\n\n"
            ));
        }
        out.push_str(&format!("def step_{f}(alpha, beta):\n"));
        for l in 0..rng.random_range(2..12) {
            let a = rng.random_range(0..100);
            out.push_str(&format!(
                "    alpha = alpha + beta * {a} - len(str(alpha)) // {}\n",
                l + 1
            ));
        }
        out.push_str(&format!("    return alpha if alpha > {f} else beta\n\n"));
        f += 1;
    }
    out
}

fn criterion_8() -> Verdict {
    let tok = default_tokenizer();
    let tok = tok.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut snapshots: Vec<RepoSnapshot> = common::FIXTURE_REPOS.iter().map(|r| common::snapshot(r)).collect();
    for r in 0..4 {
        let root = scratch.path().join(format!("synthetic{r}"));
        fs::create_dir_all(root.join("pkg")).map_err(|e| e.to_string())?;
        for f in 0..4 {
            let size = [2_000, 40_000, 160_000, 400_000][(r + f) % 4];
            fs::write(root.join(format!("pkg/mod{f}.py")), synthetic_python(&mut rng, size))
                .map_err(|e| e.to_string())?;
        }
        let source = RepoSource {
            id: format!("synthetic{r}"),
            root,
            test_command: "true".into(),
        };
        snapshots.push(scan_repository(&source, &IngestFilters::default(), tok).map_err(|e| e.to_string())?);
    }
    let registry = GrammarRegistry::default();
    let mut pool: Vec<(usize, MaskTask)> = Vec::new();
    for (si, snap) in snapshots.iter().enumerate() {
        for file in snap.files.iter().filter(|f| f.language == LanguageTag::Python) {
            for level in MaskLevel::ALL {
                let constraints = CarveConstraints {
                    rng_seed: rng.random(),
                    ..CarveConstraints::default()
                };
                let tasks = sample_tasks(&snap.repo_id, file, level, 3, &constraints, &registry, tok)
                    .map_err(|e| e.to_string())?;
                pool.extend(tasks.into_iter().map(|t| (si, t)));
            }
        }
    }
    let presets = ["qwen", "starcoder", "deepseek", "codellama"];
    let mut worst = 0usize;
    let mut violations = 0usize;
    let mut over_32k = 0usize;
    let mut combos = 0usize;
    while combos < 1000 {
        let (si, task) = &pool[rng.random_range(0..pool.len())];
        let (total, headroom) = if rng.random_bool(0.5) {
            (32_768, 512)
        } else {
            (rng.random_range(4_096..=32_768), rng.random_range(0..=1_024))
        };
        let budget = TokenBudget::for_task(total, headroom, tok.count(&task.prefix), tok.count(&task.suffix));
        let bundle = rank_and_truncate(&snapshots[*si], task, budget, tok).map_err(|e| e.to_string())?;
        let endpoint = ModelEndpoint {
            mode: if combos.is_multiple_of(2) {
                PromptMode::Fim
            } else {
                PromptMode::Chat
            },
            marker_preset: Some(presets[combos % presets.len()].into()),
            order: if rng.random_bool(0.5) {
                FimOrder::Psm
            } else {
                FimOrder::Spm
            },
            ..ModelEndpoint::default()
        };
        let rendering = if endpoint.mode == PromptMode::Fim {
            render_fim_prompt(task, &bundle, &endpoint, tok)
        } else {
            render_chat_prompt(task, &bundle, &endpoint, tok)
        }
        .map_err(|e| e.to_string())?;
        let recount = match (&rendering.text, &rendering.messages) {
            (Some(text), _) => tok.count(text),
            (None, Some(messages)) => messages.iter().map(|m| tok.count(&m.content)).sum(),
            (None, None) => usize::MAX,
        };
        worst = worst.max(recount);
        violations += usize::from(recount > budget.prompt_ceiling() || recount != rendering.token_count);
        over_32k += usize::from(recount > 32_768);
        combos += 1;
    }
    check(
        violations == 0 && over_32k == 0,
        format!("{combos} combinations, largest rendering {worst} tokens, {violations} over budget"),
    )
}

fn hand_task(id: &str, level: MaskLevel, context: usize, prefix: usize, middle: usize, suffix: usize) -> BenchTask {
    BenchTask {
        schema: 1,
        id: id.into(),
        repo: "bank".into(),
        file_path: "bank/account.py".into(),
        level,
        language: LanguageTag::Python,
        prefix: "p".into(),
        middle: "m".into(),
        suffix: "s".into(),
        context: Vec::new(),
        tests_cmd: common::TEST_COMMAND.into(),
        meta: TaskMeta {
            seed: 0,
            byte_range: [1, 2],
            node_kind: String::new(),
            tokenizer: "approx-word-punct".into(),
            prefix_tokens: prefix,
            middle_tokens: middle,
            suffix_tokens: suffix,
            context_tokens: context,
            context_truncated: false,
            max_total_tokens: 32_768,
            headroom_tokens: 512,
            max_context_tokens: 32_256,
        },
    }
}

fn criterion_9() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = common::load_config(dir.path(), 9, "");
    run_pipeline(&cfg, &[Stage::Ingest]).map_err(|e| e.to_string())?;
    let tasks = [
        hand_task("t1", MaskLevel::Expression, 1200, 10, 4, 30),
        hand_task("t2", MaskLevel::Expression, 1800, 25, 7, 0),
        hand_task("t3", MaskLevel::Function, 950, 300, 88, 1460),
    ];
    fs::write(cfg.out_dir.join("tasks.clean.jsonl"), to_jsonl(&tasks)).map_err(|e| e.to_string())?;
    run_pipeline(&cfg, &[Stage::Stats]).map_err(|e| e.to_string())?;
    let text = fs::read_to_string(cfg.out_dir.join("stats.txt")).map_err(|e| e.to_string())?;

    // Expression: context {1200, 1800}, prefix {10, 25}, middle {4, 7}, suffix {30, 0}.
    // Function: a single task, so min = max = mean.
    // Overview: stars {120, 45, 8}, eight Python files and three directories per repository.
    let expected: [(&str, &[&str]); 6] = [
        ("|Samples|", &["2", "1"]),
        ("Context Tokens", &["1.2K/1.8K/1.5K", "950/950/950.0"]),
        ("Prefix Tokens", &["10/25/17.5", "300/300/300.0"]),
        ("Middle Tokens", &["4/7/5.5", "88/88/88.0"]),
        ("Suffix Tokens", &["0/30/15.0", "1.5K/1.5K/1.5K"]),
        (
            "Repository Overview",
            &["3", "3/3/3.0", "8/120/57.7", "8/8/8.0", "8/8/8.0", "0/0/0.0"],
        ),
    ];
    let mut mismatches = Vec::new();
    for (label, cells) in expected {
        let line = text.lines().find(|l| l.trim_start().starts_with(label));
        let got: Vec<&str> = line
            .map(|l| l.trim_start()[label.len()..].split_whitespace().collect())
            .unwrap_or_default();
        if got != cells {
            mismatches.push(format!("{label}: got {got:?}"));
        }
    }
    let header_ok = text
        .lines()
        .any(|l| l.split_whitespace().collect::<Vec<_>>() == ["Expression", "Function"]);
    if !header_ok {
        mismatches.push("header row does not list exactly Expression and Function".into());
    }
    check(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "all hand-computed rows reproduced".into()
        } else {
            mismatches.join("; ")
        },
    )
}

fn criterion_10() -> Verdict {
    let qa = common::fixture_dir().join("qa.jsonl");
    let reference = common::fixture_dir().join("reference.jsonl");
    let extra = format!(
        "[decontam]\ncorpora = [{:?}]\n\n[corpus]\nvariants = [\"cross_file\", \"in_file\"]\nqa_path = {:?}\n\n\
         [sandbox]\nworkers = 4\n",
        reference.display().to_string(),
        qa.display().to_string()
    );
    let artifacts = [
        "tasks.jsonl",
        "tasks.clean.jsonl",
        "corpus.jsonl",
        "report.txt",
        "report.json",
        "report.csv",
        "stats.txt",
        "stats.json",
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = common::load_config(dir.path(), 10, &extra);
        run_pipeline(&cfg, &Stage::ALL).map_err(|e| e.to_string())?;
        let hashes: Vec<String> = artifacts.iter().map(|a| digest(&cfg.out_dir.join(a))).collect();
        let dropped = read_jsonl::<BenchTask>(&cfg.out_dir.join("tasks.dropped.jsonl"))?.len();
        runs.push((hashes, dropped));
    }
    let differing: Vec<&str> = artifacts
        .iter()
        .zip(runs[0].0.iter().zip(&runs[1].0))
        .filter(|(_, (a, b))| a != b)
        .map(|(n, _)| *n)
        .collect();
    check(
        differing.is_empty(),
        format!(
            "{} artifacts compared, differing: {:?} ({} tasks decontaminated per run)",
            artifacts.len(),
            differing,
            runs[0].1
        ),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let timeout = thread::spawn(criterion_4);

    let construction = construction_tasks();
    let mut verdicts: BTreeMap<u32, (&str, Verdict)> = BTreeMap::new();
    match &construction {
        Ok((tasks, ingest, secs)) => {
            verdicts.insert(1, ("round-trip construction", criterion_1(tasks, ingest, *secs)));
            verdicts.insert(2, ("grammar soundness", criterion_2(tasks, ingest)));
            verdicts.insert(7, ("decontamination", criterion_7(tasks)));
        }
        Err(e) => {
            for (n, name) in [
                (1, "round-trip construction"),
                (2, "grammar soundness"),
                (7, "decontamination"),
            ] {
                verdicts.insert(n, (name, Err(format!("construction failed: {e}"))));
            }
        }
    }
    verdicts.insert(3, ("oracle evaluation", criterion_3()));
    verdicts.insert(5, ("pass@k estimator", criterion_5()));
    verdicts.insert(6, ("edit similarity", criterion_6()));
    verdicts.insert(8, ("budget safety", criterion_8()));
    verdicts.insert(9, ("stats reporting", criterion_9()));
    verdicts.insert(10, ("end-to-end determinism", criterion_10()));
    let v4 = timeout.join().unwrap_or_else(|_| Err("timeout check panicked".into()));
    verdicts.insert(4, ("timeout contract", v4));

    let mut failed = 0;
    for (n, (name, verdict)) in &verdicts {
        match verdict {
            Ok(detail) => println!("criterion {n:>2}: PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2}: FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        verdicts.len() - failed,
        verdicts.len(),
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
