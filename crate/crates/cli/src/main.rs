use std::path::PathBuf;
use std::process::ExitCode;

use adamrel_cli::{presets, run, Invocation, Kind};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adamrel",
    version,
    about = "Adam / Adam-Rel experiments: theory curves, PPO and DQN runs, analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form update size against t after a gradient jump of k.
    TheoryCurve(Common),
    /// Train PPO, one run per seed.
    TrainPpo(Common),
    /// Train DQN, one run per seed.
    TrainDqn(Common),
    /// Chunk profile of a finished training run.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Output directory of a train-ppo or train-dqn run.
        run: Option<PathBuf>,
    },
    /// IQM and bootstrap interval of the per-seed returns of several runs.
    Compare {
        #[command(flatten)]
        common: Common,
        runs: Vec<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines; a manifest works too.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override a single key, e.g. `--set optimizer.learning_rate=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Common {
    fn invocation(self, inputs: Vec<PathBuf>) -> (Invocation, PathBuf) {
        let inv = Invocation {
            config: self.config,
            preset: self.preset,
            seeds: self.seed,
            sets: self.sets,
            inputs,
        };
        (inv, self.out)
    }
}

fn main() -> ExitCode {
    let (kind, common, inputs) = match Cli::parse().command {
        Command::TheoryCurve(c) => (Kind::TheoryCurve, c, vec![]),
        Command::TrainPpo(c) => (Kind::TrainPpo, c, vec![]),
        Command::TrainDqn(c) => (Kind::TrainDqn, c, vec![]),
        Command::Analyze { common, run } => (Kind::Analyze, common, run.into_iter().collect()),
        Command::Compare { common, runs } => (Kind::Compare, common, runs),
        Command::Presets => {
            for p in presets::PRESETS {
                println!("{:<30} {:<13} {}", p.name, p.kind.name(), p.summary);
            }
            return ExitCode::SUCCESS;
        }
    };
    let (inv, out) = common.invocation(inputs);
    match run::run(kind, &inv, &out) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            println!("wrote {} files to {}", report.files.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error ({}): {e:#}", run::error_kind(&e));
            ExitCode::FAILURE
        }
    }
}
