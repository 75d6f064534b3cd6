//! The work behind each CLI subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::distill::{build_math_policy, canonicalize, harvest, math_policy_action, DistillError, Selection};
use crate::env::{ACTION_LEN, OBS_LEN};
use crate::harness::analysis::{cumulative, episode_returns, histograms_csv, windowed_histograms, windowed_means, windows};
use crate::harness::checkpoint::{check_actor_layout, load_actor, save_actor, save_agent, CheckpointMeta, CHECKPOINT_VERSION};
use crate::harness::config::RunConfig;
use crate::harness::logs::{
    eval_log_to_string, load_transitions, parse_eval_log, EvalSummary, MathPolicyFile, MetricsWriter, RunWriter,
    TransitionWriter, EVAL_VERSION, MATH_POLICY_VERSION, METRICS_VERSION, TRANSITIONS_VERSION,
};
use crate::magnetics::{rotation_summary, sample_field, FieldRotation};
use crate::neural::action_to_command;
use crate::sac::{evaluate, rng_stream, run_policy, train, train_decoupled, Agent, EvalLog, EvalMode, STREAM_INIT};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRANSITIONS_FILE: &str = "transitions.jsonl";
pub const BEST_FILE: &str = "best_actor.ckpt";
pub const FINAL_FILE: &str = "final_agent.ckpt";

#[derive(Debug, Serialize)]
struct FormatVersions {
    metrics: u32,
    transitions: u32,
    checkpoint: u32,
    eval: u32,
    math_policy: u32,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    package_version: &'static str,
    seed: u64,
    command: &'a str,
    formats: FormatVersions,
    config: &'a RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub output_dir: PathBuf,
    pub env_steps: u64,
    pub episodes: u64,
    pub best_rolling_return: Option<f64>,
}

fn base_meta(cfg: &RunConfig) -> CheckpointMeta {
    CheckpointMeta::default()
        .with("seed", cfg.seed)
        .with("rng", format!("chacha8 seed {} streams env=0 policy=1 dropout=2 buffer=3 init=4", cfg.seed))
        .with("hyperparams", serde_json::to_string(&cfg.sac).expect("serializable"))
}

pub fn train_command(cfg: &RunConfig, command_line: &str) -> Result<TrainReport> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let manifest = Manifest {
        format: "microswim-manifest",
        version: 1,
        package_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        command: command_line,
        formats: FormatVersions {
            metrics: METRICS_VERSION,
            transitions: TRANSITIONS_VERSION,
            checkpoint: CHECKPOINT_VERSION,
            eval: EVAL_VERSION,
            math_policy: MATH_POLICY_VERSION,
        },
        config: cfg,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;

    let mut env = cfg.build_env();
    let agent = Agent::new(OBS_LEN, ACTION_LEN, &cfg.network, &cfg.sac, &mut rng_stream(cfg.seed, STREAM_INIT));
    let best_path = dir.join(BEST_FILE);
    let meta = base_meta(cfg);
    let best_meta = meta.clone();
    let best_target = best_path.clone();
    let mut writer = RunWriter {
        metrics: MetricsWriter::create(&dir.join(METRICS_FILE))?,
        transitions: TransitionWriter::create(&dir.join(TRANSITIONS_FILE), cfg.log_states)?,
        on_best: Box::new(move |best| {
            let m = best_meta
                .clone()
                .with("step", best.step)
                .with("episode", best.episode)
                .with("rolling_return", best.rolling_return);
            save_actor(&best_target, &best.actor, &m).map_err(std::io::Error::other)
        }),
    };
    let outcome = if cfg.decoupled {
        train_decoupled(&mut env, agent, &cfg.sac, cfg.seed, &mut writer)?
    } else {
        train(&mut env, agent, &cfg.sac, cfg.seed, &mut writer)?
    };
    drop(writer);

    let best_rolling = outcome.best.as_ref().map(|b| b.rolling_return);
    let final_meta = meta
        .clone()
        .with("step", outcome.env_steps)
        .with("episodes", outcome.episodes)
        .with("rolling_best", best_rolling.map_or("none".to_string(), |r| r.to_string()));
    save_agent(&dir.join(FINAL_FILE), &outcome.agent, &final_meta)?;
    if outcome.best.is_none() {
        // too few episodes for a rolling record: keep the latest actor
        let m = meta.with("step", outcome.env_steps).with("provisional", "true");
        save_actor(&best_path, &outcome.agent.actor, &m)?;
    }
    Ok(TrainReport { output_dir: dir.clone(), env_steps: outcome.env_steps, episodes: outcome.episodes, best_rolling_return: best_rolling })
}

/// Summary file written next to an evaluation log.
pub fn summary_path(log_path: &Path) -> PathBuf {
    let mut name = log_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".summary.json");
    log_path.with_file_name(name)
}

fn write_eval(log: &EvalLog, mode: &str, out: &Path) -> Result<EvalSummary> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, eval_log_to_string(log)).with_context(|| format!("writing {}", out.display()))?;
    let summary = EvalSummary::from_log(log, mode);
    fs::write(summary_path(out), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

pub fn eval_command(cfg: &RunConfig, checkpoint: &Path, steps: u64, mode: EvalMode, seed: u64, out: &Path) -> Result<EvalSummary> {
    let ckpt = load_actor(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    check_actor_layout(&ckpt.actor, OBS_LEN, ACTION_LEN, &cfg.network)?;
    let mut env = cfg.build_env();
    let log = evaluate(&ckpt.actor, &mut env, steps, mode, seed)?;
    let tag = match mode {
        EvalMode::Deterministic => "deterministic",
        EvalMode::Stochastic => "stochastic",
    };
    write_eval(&log, tag, out)
}

pub fn distill_command(eval_log: &Path, min_delta: f64, selection: &Selection, out: &Path) -> Result<MathPolicyFile> {
    let text = fs::read_to_string(eval_log).with_context(|| format!("reading {}", eval_log.display()))?;
    let log = parse_eval_log(&text)?;
    let mut samples = harvest(&log, min_delta);
    if samples.is_empty() {
        return Err(DistillError::EmptyHarvest).with_context(|| format!("no step in {} moved at least {min_delta} degrees", eval_log.display()));
    }
    canonicalize(&mut samples);
    let policy = build_math_policy(&samples, selection)?;
    let file = MathPolicyFile::new(&policy, min_delta, samples.len());
    fs::write(out, file.to_toml_string()).with_context(|| format!("writing {}", out.display()))?;
    Ok(file)
}

pub fn run_math_command(cfg: &RunConfig, policy_path: &Path, steps: u64, seed: u64, out: &Path) -> Result<EvalSummary> {
    let text = fs::read_to_string(policy_path).with_context(|| format!("reading {}", policy_path.display()))?;
    let policy = MathPolicyFile::from_toml_str(&text)?.policy();
    if policy.dims.len() != ACTION_LEN {
        bail!("policy has {} dimensions, the simulator needs {ACTION_LEN}", policy.dims.len());
    }
    let mut env = cfg.build_env();
    let log = run_policy(&mut env, steps, seed, |_, theta| Ok(math_policy_action(&policy, theta)))?;
    write_eval(&log, "math", out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub steps: usize,
    pub windows: usize,
    pub skipped: usize,
    pub total_progress: f64,
}

pub fn analyze_command(transitions: &Path, window: usize, bin_width: f64, out_dir: &Path) -> Result<AnalysisReport> {
    if window == 0 || !(bin_width > 0.0) {
        bail!("window and bin width must be positive");
    }
    let log = load_transitions(transitions).with_context(|| format!("reading {}", transitions.display()))?;
    fs::create_dir_all(out_dir)?;
    let deltas: Vec<f64> = log.lines.iter().map(|l| l.delta_theta_deg).collect();
    let steps: Vec<u64> = log.lines.iter().map(|l| l.step).collect();

    fs::write(out_dir.join("histograms.csv"), histograms_csv(&windowed_histograms(&deltas, window, bin_width)))?;

    let mut velocity = String::from("window,start_step,end_step,mean_velocity_deg_per_step\n");
    for (i, ((a, b), m)) in windows(deltas.len(), window).into_iter().zip(windowed_means(&deltas, window)).enumerate() {
        velocity.push_str(&format!("{},{},{},{}\n", i + 1, steps[a], steps[b - 1], m));
    }
    fs::write(out_dir.join("velocity.csv"), velocity)?;

    let mut angle = String::from("step,unwrapped_progress_deg\n");
    for (s, c) in steps.iter().zip(cumulative(&deltas)) {
        angle.push_str(&format!("{s},{c}\n"));
    }
    fs::write(out_dir.join("angle.csv"), angle)?;

    let rewards: Vec<f64> = log.lines.iter().map(|l| l.r).collect();
    let done: Vec<bool> = log.lines.iter().map(|l| l.done).collect();
    let mut returns = String::from("episode,end_step,return,rolling_return_100\n");
    for (i, (s, r, roll)) in episode_returns(&steps, &rewards, &done).into_iter().enumerate() {
        returns.push_str(&format!("{},{s},{r},{roll}\n", i + 1));
    }
    fs::write(out_dir.join("returns.csv"), returns)?;

    Ok(AnalysisReport {
        steps: deltas.len(),
        windows: windows(deltas.len(), window).len(),
        skipped: log.skipped,
        total_progress: deltas.iter().sum(),
    })
}

pub fn field_probe_command(cfg: &RunConfig, action: &[f64], theta_deg: f64, duration: f64, sample_dt: f64, out: &Path) -> Result<FieldRotation> {
    if !(duration > 0.0 && sample_dt > 0.0) {
        bail!("duration and sample interval must be positive");
    }
    let cmd = action_to_command(action)?;
    let turret = cfg.turret_model();
    let position = cfg.swimmer.position(theta_deg);
    let n = (duration / sample_dt).round() as usize;
    let samples = (0..n).map(|k| sample_field(&cmd, &position, k as f64 * sample_dt, &turret)).collect::<Result<Vec<_>, _>>()?;
    let rotation = if samples.len() >= crate::magnetics::MIN_ROTATION_SAMPLES {
        rotation_summary(&samples)?
    } else {
        FieldRotation::none()
    };
    let mut text = String::from("time_s,bx_t,by_t,bz_t\n");
    for s in &samples {
        text.push_str(&format!("{},{},{},{}\n", s.time, s.b.x, s.b.y, s.b.z));
    }
    fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    let summary = serde_json::json!({
        "axis": [rotation.axis.x, rotation.axis.y, rotation.axis.z],
        "rate_rad_per_s": rotation.rate,
        "rotating_amplitude_t": rotation.rotating_amplitude,
        "samples": samples.len(),
    });
    fs::write(summary_path(out), serde_json::to_string_pretty(&summary)?)?;
    Ok(rotation)
}
