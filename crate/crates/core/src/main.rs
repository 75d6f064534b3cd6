use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use microswim::distill::{Selection, DEFAULT_MIN_DELTA_DEG};
use microswim::harness::analysis::{DEFAULT_BIN_WIDTH, DEFAULT_WINDOW};
use microswim::harness::commands::{
    analyze_command, distill_command, eval_command, field_probe_command, run_math_command, train_command,
};
use microswim::harness::config::RunConfig;
use microswim::sac::EvalMode;

/// Simulated helical microrobot with a soft actor-critic controller.
#[derive(Parser)]
#[command(name = "microswim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set sac.total_steps=5000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        Ok(RunConfig::load(self.config.as_deref(), &self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write metrics, transitions and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Evaluate a saved actor without learning.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 3000)]
        steps: u64,
        /// `deterministic` (squashed mean) or `stochastic` (sampled).
        #[arg(long, default_value = "deterministic")]
        mode: EvalMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a closed-form policy to the fast actions of an evaluation log.
    Distill {
        #[arg(long)]
        eval_log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_DELTA_DEG)]
        min_delta: f64,
        /// `auto` or one family per dimension, e.g. `square,constant,constant,sine`.
        #[arg(long, default_value = "auto")]
        models: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a distilled policy in the simulator.
    RunMath {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 1000)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Windowed histograms, velocities, angle trace and returns from a
    /// transition log.
    Analyze {
        #[arg(long)]
        transitions: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
        bin_width: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Sample the field at the robot position for one action.
    FieldProbe {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Four comma-separated components in [-1, 1].
        #[arg(long, allow_hyphen_values = true)]
        action: String,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long, default_value_t = 0.3)]
        duration: f64,
        #[arg(long, default_value_t = 1e-3)]
        sample_dt: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_action(text: &str) -> Result<Vec<f64>> {
    let v = text.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>()?;
    if v.len() != 4 {
        bail!("action needs 4 components, got {}", v.len());
    }
    Ok(v)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { cfg, seed, out, steps } => {
            let mut config = cfg.load()?;
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(o) = out {
                config.output_dir = o;
            }
            if let Some(n) = steps {
                config.sac.total_steps = n;
            }
            config.validate()?;
            let line = std::env::args().collect::<Vec<_>>().join(" ");
            let report = train_command(&config, &line)?;
            match report.best_rolling_return {
                Some(r) => println!("{} steps, {} episodes, best rolling return {r:.3}", report.env_steps, report.episodes),
                None => println!("{} steps, {} episodes, no rolling record yet", report.env_steps, report.episodes),
            }
            println!("artifacts in {}", report.output_dir.display());
        }
        Command::Eval { cfg, checkpoint, steps, mode, seed, out } => {
            let s = eval_command(&cfg.load()?, &checkpoint, steps, mode, seed, &out)?;
            println!(
                "{} steps: velocity {:.4} ± {:.4} deg/step, progress {:.1} deg",
                s.steps, s.mean_velocity_deg_per_step, s.std_velocity_deg_per_step, s.total_progress_deg
            );
        }
        Command::Distill { eval_log, min_delta, models, out } => {
            let selection: Selection = models.parse()?;
            let file = distill_command(&eval_log, min_delta, &selection, &out)?;
            for (i, d) in file.dims.iter().enumerate() {
                println!("dim {i}: {} rmse {:.4}", d.family(), d.rmse());
            }
            println!("{} samples harvested; policy written to {}", file.harvested, out.display());
        }
        Command::RunMath { cfg, policy, steps, seed, out } => {
            let s = run_math_command(&cfg.load()?, &policy, steps, seed, &out)?;
            println!("{} steps: velocity {:.4} ± {:.4} deg/step", s.steps, s.mean_velocity_deg_per_step, s.std_velocity_deg_per_step);
        }
        Command::Analyze { transitions, window, bin_width, out_dir } => {
            let r = analyze_command(&transitions, window, bin_width, &out_dir)?;
            println!("{} steps in {} windows, {} malformed lines skipped", r.steps, r.windows, r.skipped);
        }
        Command::FieldProbe { cfg, action, theta, duration, sample_dt, out } => {
            let rot = field_probe_command(&cfg.load()?, &parse_action(&action)?, theta, duration, sample_dt, &out)?;
            println!(
                "axis ({:.4}, {:.4}, {:.4}) rate {:.3} rad/s amplitude {:.4e} T",
                rot.axis.x, rot.axis.y, rot.axis.z, rot.rate, rot.rotating_amplitude
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
