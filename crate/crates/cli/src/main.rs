use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use repofim_core::pipeline::parse_stages;
use repofim_core::{AverageMode, GroupBy, PipelineConfig, PipelineError, Stage, run_pipeline};

/// Build executable fill-in-the-middle benchmarks from repositories with
/// test suites, evaluate completion endpoints against them, and emit
/// training corpora.
#[derive(Debug, Parser)]
#[command(name = "repofim", version)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "repofim.toml")]
    config: PathBuf,

    /// Override the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Endpoint profile to evaluate (`oracle` is always available).
    #[arg(long, global = true)]
    endpoint: Option<String>,

    /// Keep sandbox working copies for inspection.
    #[arg(long, global = true)]
    keep_workdirs: bool,

    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Snapshot the configured repositories.
    Ingest,
    /// Carve masked tasks and attach repository context.
    Generate,
    /// Drop tasks that overlap the reference corpora.
    Decontaminate(DecontamArgs),
    /// Query the endpoint and run each repository's tests.
    Evaluate,
    /// Aggregate evaluation results into report tables.
    Report(ReportArgs),
    /// Emit the instruction-tuning corpus.
    Corpus,
    /// Summarize token counts of the benchmark tasks.
    Stats,
    /// Run several stages in order.
    Run {
        /// Comma-separated stages, or `all`.
        #[arg(long, default_value = "all")]
        stages: String,
        #[command(flatten)]
        decontam: DecontamArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
}

#[derive(Debug, Args)]
struct DecontamArgs {
    /// Directory holding a persisted n-gram index.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Window length in words.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Row grouping: level or language.
    #[arg(long)]
    group_by: Option<GroupBy>,
    /// Average over categories (macro) or over tasks (micro).
    #[arg(long)]
    avg: Option<AverageMode>,
}

impl DecontamArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(dir) = &self.index {
            cfg.decontam.index_dir = Some(dir.clone());
        }
        if let Some(n) = self.n {
            cfg.decontam.n = n;
        }
    }
}

impl ReportArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(g) = self.group_by {
            cfg.report.group_by = g;
        }
        if let Some(a) = self.avg {
            cfg.report.average = a;
        }
    }
}

fn stages_and_overrides(cli: &Cli, cfg: &mut PipelineConfig) -> Result<Vec<Stage>, String> {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(name) = &cli.endpoint {
        cfg.evaluate.endpoint = name.clone();
    }
    if cli.keep_workdirs {
        cfg.sandbox.spec.keep_workdirs = true;
    }
    Ok(match &cli.command {
        Command::Ingest => vec![Stage::Ingest],
        Command::Generate => vec![Stage::Generate],
        Command::Decontaminate(d) => {
            d.apply(cfg);
            vec![Stage::Decontaminate]
        }
        Command::Evaluate => vec![Stage::Evaluate],
        Command::Report(r) => {
            r.apply(cfg);
            vec![Stage::Report]
        }
        Command::Corpus => vec![Stage::Corpus],
        Command::Stats => vec![Stage::Stats],
        Command::Run {
            stages,
            decontam,
            report,
        } => {
            decontam.apply(cfg);
            report.apply(cfg);
            parse_stages(stages)?
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let mut cfg = match PipelineConfig::load(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let stages = match stages_and_overrides(&cli, &mut cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    match run_pipeline(&cfg, &stages) {
        Ok(summary) => {
            for stage in &summary.skipped {
                log::info!("{stage} was already up to date");
            }
            for (stage, name) in [(Stage::Report, "report.txt"), (Stage::Stats, "stats.txt")] {
                if stages.contains(&stage) {
                    if let Ok(text) = fs::read_to_string(cfg.out_dir.join(name)) {
                        print!("{text}");
                    }
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            report_exit(&e)
        }
    }
}

fn report_exit(e: &PipelineError) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
