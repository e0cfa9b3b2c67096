use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use discedge::compare::{compare_dir, render_table};
use discedge::live::spawn_live_cluster;
use discedge::{run_live, run_sim, Report, ScenarioConfig};
use discedge_core::manager::PolicyMode;
use discedge_core::tokenizer::build_vocab_entries;
use discedge_core::context::ROLE_MARKERS;
use discedge_server::{load_config, RunningNode};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "discedge", version, about = "Edge context management for roaming LLM clients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one edge node from a YAML config file
    Node {
        #[arg(long)]
        config: PathBuf,
    },
    /// Replay a scenario and write a metrics report
    Run(RunArgs),
    /// Compare the modes of a report directory
    Compare { report: PathBuf },
    /// Vocabulary tools
    Vocab {
        #[command(subcommand)]
        command: VocabCommand,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Virtual-clock simulation (default)
    #[arg(long, conflicts_with = "live")]
    sim: bool,
    /// Real sockets on localhost
    #[arg(long)]
    live: bool,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum VocabCommand {
    /// Build a vocabulary from the most frequent words of a text corpus
    Build {
        corpus: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 8000)]
        size: usize,
    },
}

async fn run(args: RunArgs) -> Result<ExitCode> {
    let mut config = ScenarioConfig::load(&args.scenario)?;
    config.apply_env()?;
    let report: Report = if args.live {
        if config.harness.endpoints.is_empty() {
            let exe = std::env::current_exe()?;
            let cluster = spawn_live_cluster(&config, &exe, &args.out.join("nodes")).await?;
            run_live(&config, cluster.endpoints.clone()).await?
        } else {
            run_live(&config, config.harness.endpoints.clone()).await?
        }
    } else {
        let config = config.clone();
        tokio::task::spawn_blocking(move || run_sim(&config)).await??
    };
    report.write(&args.out)?;
    if report.modes.len() > 1 {
        let rows = compare_dir(&args.out)?;
        println!("{}", render_table(&rows));
    }
    let failed = report.failures().count();
    println!("report written to {} ({} turns, {failed} failed)", args.out.display(), report.turns.len());
    if failed > 0 && config.harness.policy.mode == PolicyMode::Strong {
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn vocab_build(corpus: PathBuf, output: PathBuf, size: usize) -> Result<()> {
    let text = std::fs::read_to_string(&corpus).with_context(|| format!("reading {}", corpus.display()))?;
    let entries = build_vocab_entries(&text, size, &ROLE_MARKERS);
    if entries.len() <= ROLE_MARKERS.len() {
        bail!("corpus {} yields no entries", corpus.display());
    }
    let mut body = entries.join("\n");
    body.push('\n');
    std::fs::write(&output, body).with_context(|| format!("writing {}", output.display()))?;
    println!("{} entries written to {}", entries.len(), output.display());
    Ok(())
}

#[tokio::main]
async fn main() -> Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Node { config } => {
            let node = RunningNode::start(load_config(&config)?).await?;
            node.run_until_ctrl_c().await;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => run(args).await,
        Command::Compare { report } => {
            let rows = compare_dir(&report)?;
            println!("{}", render_table(&rows));
            Ok(ExitCode::SUCCESS)
        }
        Command::Vocab { command: VocabCommand::Build { corpus, output, size } } => {
            vocab_build(corpus, output, size)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
