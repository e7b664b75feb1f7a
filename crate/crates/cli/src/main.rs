mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::UsageError;

#[derive(Parser)]
#[command(name = "rcppo", version, about = "Reverse curriculum PPO on a seedable gridworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations as JSON lines.
    DemoGen {
        #[arg(long)]
        level: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a start-state curriculum from a demo file.
    BuildCurriculum {
        #[arg(long)]
        demos: PathBuf,
        /// none, fixed:N or exp
        #[arg(long, default_value = "none")]
        combine: String,
        /// Build a random-walk curriculum from the demos' goal states.
        #[arg(long)]
        random_walk: bool,
        /// Random-walk stages (defaults to max demo length - 1).
        #[arg(long)]
        stages: Option<usize>,
        /// Random-walk action set: task, nav or all.
        #[arg(long, default_value = "task")]
        walk_actions: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy (baseline PPO or RCPPO).
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint (or the expert / a random policy) on fresh seeds.
    Eval {
        #[arg(long)]
        level: String,
        #[arg(long, required_unless_present = "policy")]
        checkpoint: Option<PathBuf>,
        /// net, expert or random
        #[arg(long)]
        policy: Option<String>,
        #[arg(long, default_value_t = 128)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tables: random-walk goal rates, demo lengths, run summaries.
    Stats {
        #[command(subcommand)]
        table: StatsCommand,
    },
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Goal rate of k random steps from k expert steps before success.
    Randwalk {
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<String>,
        /// Inclusive range `a..b` or a single k.
        #[arg(long, default_value = "1..5")]
        k: String,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// task, nav or all
        #[arg(long, default_value = "task")]
        actions: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean and max demo length, from a file or freshly generated per level.
    Demos {
        #[arg(long, conflicts_with = "levels")]
        file: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required_unless_present = "file")]
        levels: Vec<String>,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Frames-to-accuracy for training logs (run directories or log.csv files).
    Summary {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.95,0.99")]
        targets: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// key=value file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    level: Option<String>,
    /// ppo, rcppo or rcppo_randomwalk
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<u64>,
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long)]
    curriculum: Option<PathBuf>,
    #[arg(long)]
    n_demos: Option<usize>,
    #[arg(long)]
    combine: Option<String>,
    #[arg(long)]
    walk_actions: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single fixed stream ordering (runs are always sequential; recorded in the echo).
    #[arg(long)]
    deterministic: bool,
    #[arg(long = "scheduler.mode")]
    scheduler_mode: Option<String>,
    #[arg(long = "scheduler.threshold")]
    scheduler_threshold: Option<f64>,
    #[arg(long = "scheduler.window")]
    scheduler_window: Option<usize>,
    #[arg(long = "scheduler.min_episodes")]
    scheduler_min_episodes: Option<usize>,
    #[arg(long = "scheduler.epsilon")]
    scheduler_epsilon: Option<f64>,
    #[arg(long = "scheduler.smoothing")]
    scheduler_smoothing: Option<f64>,
    /// Any other config key, e.g. `--set lr=0.0005`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl TrainArgs {
    fn overrides(&self) -> anyhow::Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("level", self.level.clone());
        put("mode", self.mode.clone());
        put("seed", self.seed.map(|x| x.to_string()));
        put("frames", self.frames.map(|x| x.to_string()));
        put("demos", path(&self.demos));
        put("curriculum", path(&self.curriculum));
        put("n_demos", self.n_demos.map(|x| x.to_string()));
        put("combine", self.combine.clone());
        put("walk_actions", self.walk_actions.clone());
        put("out", path(&self.out));
        put("deterministic", self.deterministic.then(|| "true".to_string()));
        put("scheduler.mode", self.scheduler_mode.clone());
        put("scheduler.threshold", self.scheduler_threshold.map(|x| x.to_string()));
        put("scheduler.window", self.scheduler_window.map(|x| x.to_string()));
        put(
            "scheduler.min_episodes",
            self.scheduler_min_episodes.map(|x| x.to_string()),
        );
        put("scheduler.epsilon", self.scheduler_epsilon.map(|x| x.to_string()));
        put("scheduler.smoothing", self.scheduler_smoothing.map(|x| x.to_string()));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| config::usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::DemoGen { level, n, seed, out } => commands::demo_gen(&level, n, seed, &out),
        Command::BuildCurriculum {
            demos,
            combine,
            random_walk,
            stages,
            walk_actions,
            seed,
            out,
        } => commands::build_curriculum(&demos, &combine, random_walk, stages, &walk_actions, seed, &out),
        Command::Train(args) => {
            let overrides = args.overrides()?;
            let cfg = config::RunConfig::resolve(args.config.as_deref(), &overrides)?;
            commands::train(&cfg)
        }
        Command::Eval {
            level,
            checkpoint,
            policy,
            episodes,
            seed,
        } => commands::eval(&level, checkpoint.as_deref(), policy.as_deref(), episodes, seed),
        Command::Stats { table } => match table {
            StatsCommand::Randwalk {
                levels,
                k,
                trials,
                seed,
                actions,
                out,
            } => commands::stats_randwalk(&levels, &k, trials, seed, &actions, out.as_deref()),
            StatsCommand::Demos {
                file,
                levels,
                n,
                seed,
                out,
            } => commands::stats_demos(file.as_deref(), &levels, n, seed, out.as_deref()),
            StatsCommand::Summary { runs, targets, out } => commands::stats_summary(&runs, &targets, out.as_deref()),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
