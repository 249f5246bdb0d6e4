use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ddm_core::harness::{self, RunConfig, ARTIFACT_FILE, SWEEP_CSV, SWEEP_LONG, TRACE_FILE};
use ddm_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ddm-lab", version, about = "Discrete diffusion sampler distillation lab")]
struct Cli {
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Fill the `seconds` column of sweep output (makes it non-reproducible).
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distill a student sampler and write the artifact and loss trace.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Draw terminal samples from a trained artifact as JSON lines.
    Sample {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `resolved_config.json` next to the artifact.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate plain and learned samplers across the NFE list.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-check an artifact's invariants and provenance.
    Verify {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Train { config } => {
            let resolved = RunConfig::load(&config, cli.seed)?;
            let out = harness::cmd_train(&resolved)?;
            print!("{}", harness::summarize_trace(&out.trace));
            println!("wrote {}", out.dir.join(ARTIFACT_FILE).display());
            println!("wrote {}", out.dir.join(TRACE_FILE).display());
        }
        Command::Sample {
            artifact,
            n,
            out,
            config,
        } => {
            let (art, resolved) = harness::load_artifact(&artifact, config.as_deref(), cli.seed)?;
            if art.provenance_mismatch {
                eprintln!("warning: artifact was trained under a different configuration");
            }
            harness::cmd_sample(&art, &resolved, n, &out)?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::Sweep { config } => {
            let resolved = RunConfig::load(&config, cli.seed)?;
            let out = harness::cmd_sweep(&resolved, cli.timing)?;
            print!("{}", out.report.to_csv());
            for note in &out.notes {
                println!("trend: {note}");
            }
            println!("wrote {}", out.dir.join(SWEEP_CSV).display());
            println!("wrote {}", out.dir.join(SWEEP_LONG).display());
        }
        Command::Verify { artifact, config } => {
            for line in harness::cmd_verify(&artifact, config.as_deref())? {
                println!("{line}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
