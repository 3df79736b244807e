use std::path::PathBuf;
use std::process::ExitCode;

use basfuzz::harness::{self, RunConfig, Workbench};
use basfuzz::metrics::{read_reports, write_summary_json};
use basfuzz::search::AblationMode;
use basfuzz::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "basfuzz", version, about = "Beam-annealing fuzzer for text models")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "basfuzz.toml")]
    config: PathBuf,
    /// Master RNG seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuzz every seed in the dataset.
    Fuzz,
    /// Re-query successful variants from a previous run against the configured threat model.
    Replay {
        #[arg(long)]
        reports: PathBuf,
    },
    /// Run each ablation mode over the same seeds.
    Ablate {
        /// Modes to run; defaults to all.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<AblationMode>,
    },
    /// Exhaustively score every variant with at most `max_subs` substitutions.
    Oracle {
        #[arg(long)]
        seed_id: String,
        #[arg(long, default_value_t = 1)]
        max_subs: usize,
    },
    /// Recompute the summary for an existing reports file.
    Summarize {
        #[arg(long)]
        reports: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_THREAT: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_threat() { EXIT_THREAT } else { EXIT_CONFIG })
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(p) = cli.parallel {
        cfg.parallel = p;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    let bench = Workbench::from_config(&cfg)?;
    let status = |threat_failure: bool| {
        if threat_failure {
            ExitCode::from(EXIT_THREAT)
        } else {
            ExitCode::SUCCESS
        }
    };

    match cli.command {
        Command::Fuzz => {
            let out = harness::run(&bench, cfg.seed, cfg.parallel, &cfg.out)?;
            print_json(&out.summary);
            Ok(status(out.threat_failure()))
        }
        Command::Replay { reports } => {
            let source = read_reports(&reports)?;
            let out = harness::replay(&bench, &source, &cfg.out)?;
            print_json(&out.summary);
            Ok(status(out.threat_failure()))
        }
        Command::Ablate { modes } => {
            let modes = if modes.is_empty() { AblationMode::ALL.to_vec() } else { modes };
            let results = harness::ablate(&bench, &modes, cfg.seed, cfg.parallel, &cfg.out)?;
            for (mode, r) in &results {
                println!("{mode}: s_rate={:.2} n_suc={}/{}", r.summary.s_rate, r.summary.n_suc, r.summary.n);
            }
            Ok(status(results.values().any(|r| r.threat_failure())))
        }
        Command::Oracle { seed_id, max_subs } => {
            let seed = bench.seed(&seed_id)?;
            let result = harness::brute_force_oracle(&bench, seed, max_subs)?;
            print_json(&result);
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize { reports } => {
            let reports = read_reports(&reports)?;
            let summary = bench.summarize(&reports);
            std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
            write_summary_json(cfg.out.join("summary.json"), &summary)?;
            print_json(&summary);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}
