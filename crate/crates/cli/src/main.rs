use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use codereasoner::pipeline::{run_stage, PipelineConfig, PipelineError, Stage, StageArgs};

/// Synthesize, filter and score code-reasoning data, and demo the GRPO objective.
#[derive(Parser)]
#[command(name = "codereasoner", version)]
struct Cli {
    /// Pipeline config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Input file (defaults to the stage's usual input under out_dir).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Output file (defaults to the stage's usual output under out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker pool size.
    #[arg(long)]
    jobs: Option<usize>,
    /// Only process the first N input records.
    #[arg(long)]
    limit: Option<usize>,
    /// Recompute even if the output is up to date.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone, Default)]
struct PromptArgs {
    /// Write the prompts this stage would send as JSONL, then stop.
    #[arg(long)]
    emit_prompts: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample generation constraints for every catalog method.
    Catalog(Common),
    /// Ask the teacher for one test case per constraint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prompts: PromptArgs,
    },
    /// Execute cases and keep those that run cleanly with short output.
    Filter(Common),
    /// Add type-aware input mutants of validated cases.
    Mutate(Common),
    /// Collect teacher reasoning traces and keep those that pass execution checks.
    Distill {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prompts: PromptArgs,
        /// Also require the answer to be correct (default from config).
        #[arg(long, overrides_with = "no_strict")]
        strict: bool,
        /// Accept any trace whose code runs.
        #[arg(long, overrides_with = "strict")]
        no_strict: bool,
    },
    /// Drop cases sharing an n-gram with the configured test sets.
    Decontam {
        #[command(flatten)]
        common: Common,
        /// N-gram size in tokens.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the toy policy and write its statistics curve as CSV.
    GrpoDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Score predictions on benchmark tasks.
    Eval {
        #[command(flatten)]
        common: Common,
        /// JSONL of {task_id, prediction}.
        #[arg(long, conflicts_with = "use_gold")]
        predictions: Option<PathBuf>,
        /// Score the gold answers (a consistency check).
        #[arg(long)]
        use_gold: bool,
    },
    /// Trace validated cases and derive benchmark tasks from them.
    Trace(Common),
}

fn stage_args(common: Common) -> StageArgs {
    StageArgs {
        input: common.input,
        output: common.out,
        seed: common.seed,
        jobs: common.jobs,
        limit: common.limit,
        force: common.force,
        ..StageArgs::default()
    }
}

fn dispatch(command: Command) -> (Stage, StageArgs) {
    match command {
        Command::Catalog(c) => (Stage::Catalog, stage_args(c)),
        Command::Generate { common, prompts } => (
            Stage::Generate,
            StageArgs {
                emit_prompts: prompts.emit_prompts,
                ..stage_args(common)
            },
        ),
        Command::Filter(c) => (Stage::Filter, stage_args(c)),
        Command::Mutate(c) => (Stage::Mutate, stage_args(c)),
        Command::Distill {
            common,
            prompts,
            strict,
            no_strict,
        } => (
            Stage::Distill,
            StageArgs {
                emit_prompts: prompts.emit_prompts,
                strict: if strict {
                    Some(true)
                } else if no_strict {
                    Some(false)
                } else {
                    None
                },
                ..stage_args(common)
            },
        ),
        Command::Decontam { common, n } => (Stage::Decontam, StageArgs { n, ..stage_args(common) }),
        Command::GrpoDemo { common, iters } => (Stage::GrpoDemo, StageArgs { iters, ..stage_args(common) }),
        Command::Eval {
            common,
            predictions,
            use_gold,
        } => (
            Stage::Eval,
            StageArgs {
                predictions,
                use_gold,
                ..stage_args(common)
            },
        ),
        Command::Trace(c) => (Stage::Trace, stage_args(c)),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let cfg = PipelineConfig::default();
            cfg.validate()?;
            cfg
        }
    };
    let (stage, args) = dispatch(cli.command);
    let outcome = run_stage(stage, &cfg, &args)?;
    if outcome.skipped {
        println!("{stage}: up to date ({})", outcome.output.display());
    } else {
        let counts: Vec<String> = outcome.stats.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{stage}: wrote {} [{}]", outcome.output.display(), counts.join(" "));
    }
    for note in &outcome.notes {
        println!("{}", note.trim_end());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
