use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use radbench::benchmark::MetricReport;
use radbench::config::RunConfig;
use radbench::pipeline::{self, Run};

/// Anatomy-conditioned report retrieval workbench.
#[derive(Debug, Parser)]
#[command(name = "radbench", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "configs/synthetic.toml")]
    config: PathBuf,

    /// Override a config key, e.g. `--set train.steps=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus into the run directory.
    GenSynthetic,
    /// Split reports into per-anatomy regional findings.
    Decompose,
    /// Build global and per-condition relevance matrices.
    Score,
    /// Train encoders (stage 1) and the fusion head (stage 2).
    Train,
    /// Evaluate the checkpoint on the test split.
    Eval,
    /// gen-synthetic (when no corpus path is set), decompose, score, train, eval.
    All,
    /// Rank every other report for one query image.
    Retrieve {
        #[arg(long)]
        query_id: String,
        /// Anatomy to condition on.
        #[arg(long)]
        condition: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Print the run directory for this config.
    RunDir,
}

fn print_metrics(report: &MetricReport) {
    println!("{:<12} {:<14} {:>4} {:>8} {:>8} {:>8}", "task", "condition", "k", "recall", "ndcg", "queries");
    for r in &report.records {
        println!(
            "{:<12} {:<14} {:>4} {:>8.2} {:>8.2} {:>8}",
            r.task.as_str(),
            r.condition.as_deref().unwrap_or("-"),
            r.k,
            100.0 * r.recall,
            100.0 * r.ndcg,
            r.num_queries
        );
    }
    for c in &report.skipped_conditions {
        println!("skipped condition {c}: no test queries");
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = RunConfig::load(&cli.config, &cli.overrides)
        .with_context(|| format!("loading config {}", cli.config.display()))?;
    let run = Run::new(config);
    match cli.command {
        Command::GenSynthetic => {
            let path = pipeline::cmd_gen_synthetic(&run)?;
            println!("{}", path.display());
        }
        Command::Decompose => {
            let counts = pipeline::cmd_decompose(&run)?;
            println!("reports\t{}", counts.reports);
            for (anatomy, n) in &counts.per_anatomy {
                println!("{anatomy}\t{n}");
            }
            println!("total\t{}", counts.total);
        }
        Command::Score => {
            for path in pipeline::cmd_score(&run)? {
                println!("{}", path.display());
            }
        }
        Command::Train => {
            let t = pipeline::cmd_train(&run)?;
            println!("stage1 loss {:.4} -> {:.4}", t.stage1_initial, t.stage1_final);
            println!("stage2 loss {:.4} -> {:.4}", t.stage2_initial, t.stage2_final);
            println!("{}", run.path(pipeline::CHECKPOINT_FILE).display());
        }
        Command::Eval => print_metrics(&pipeline::cmd_eval(&run)?),
        Command::All => print_metrics(&pipeline::cmd_all(&run)?),
        Command::Retrieve {
            query_id,
            condition,
            k,
        } => {
            let r = pipeline::cmd_retrieve(&run, &query_id, condition.as_deref(), k)?;
            for (i, (id, score)) in r.ranked_ids.iter().zip(&r.scores).enumerate() {
                println!("{}\t{id}\t{score:.6}", i + 1);
            }
        }
        Command::RunDir => println!("{}", run.dir.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RADBENCH_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
