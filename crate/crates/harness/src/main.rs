use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use framecache_harness::{render_checks, run_scenario, write_outcome, RunConfig, Scenario};

#[derive(Parser)]
#[command(name = "framecache", about = "Inter-frame layer caching experiments")]
struct Cli {
    /// Worker threads for independent runs within a scenario.
    #[arg(long, global = true, env = "FRAMECACHE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenarios listed in a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run only this scenario.
        #[arg(long)]
        scenario: Option<String>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    let Command::Run {
        config,
        out,
        seed,
        scenario,
    } = cli.command;
    let mut cfg = RunConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let scenarios = match scenario {
        Some(name) => vec![Scenario::parse(&name)?],
        None if cfg.scenarios.is_empty() => Scenario::ALL.to_vec(),
        None => cfg.scenarios.clone(),
    };
    let dir = out.or_else(|| cfg.output_dir.clone());
    let mut ok = true;
    for s in scenarios {
        let outcome = run_scenario(&cfg, s)?;
        // Per-frame tables go to files only.
        for t in outcome
            .tables
            .iter()
            .filter(|t| !t.name.ends_with("_frames"))
        {
            println!("{}", t.to_text());
        }
        print!("{}", render_checks(&outcome));
        println!();
        ok &= outcome.passed();
        if let Some(dir) = &dir {
            write_outcome(&outcome, dir)?;
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more scenario checks failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
