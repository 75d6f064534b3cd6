//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! `MICROSWIM_ACCEPTANCE_STEPS` overrides the full-task training length;
//! `MICROSWIM_ACCEPTANCE_DIR` keeps the run artifacts in that directory.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use microswim::distill::{fit_sine, fit_square, Selection, DEFAULT_MIN_DELTA_DEG};
use microswim::env::{Environment, MicrorobotEnv, ToyReachEnv};
use microswim::harness::analysis::{windowed_histograms, windowed_means, DEFAULT_BIN_WIDTH};
use microswim::harness::checkpoint::{actor_to_string, agent_to_string, load_actor, load_agent, save_actor, CheckpointMeta};
use microswim::harness::commands::{distill_command, eval_command, run_math_command, train_command, BEST_FILE, FINAL_FILE, METRICS_FILE, TRANSITIONS_FILE};
use microswim::harness::config::RunConfig;
use microswim::harness::logs::load_transitions;
use microswim::magnetics::{
    dipole_field, field_at, force_from_field, rotation_summary, sample_field, torque_on, CoilCommand, CurrentTriple, FieldSample, TurretModel,
    Vec3, DEFAULT_ORBIT_HEIGHT, DRIVE_OMEGA, FORCE_STEP,
};
use microswim::neural::{policy_mean, Actor, Mode, NetworkShape};
use microswim::sac::{rng_stream, train, Agent, EvalMode, MemoryObserver, SacHyperparams, STREAM_INIT};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const SEEDS: [u64; 3] = [1, 2, 3];
const DEFAULT_FULL_STEPS: u64 = 60_000;
const WINDOW: usize = 20_000;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, elapsed: Duration, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("[{}] {id}. {name}: {detail} ({:.1} s)", if pass { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    }
}

fn random_vec(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

fn gradients(report: &mut Report) {
    let t = Instant::now();
    let worst = (0..common::FD_SEEDS).map(common::gradient_errors).fold(0.0f64, |m, e| m.max(e.max()));
    let elapsed = t.elapsed();
    let pass = worst < common::FD_TOLERANCE && elapsed < Duration::from_secs(120);
    report.line(1, "gradient correctness", pass, elapsed, format!("worst relative error {worst:.2e} over {} seeds", common::FD_SEEDS));
}

fn physics(report: &mut Report) {
    let t = Instant::now();
    let mut rng = rng_stream(42, 0);
    let linear = TurretModel::default().linear();
    let mut superposition: f64 = 0.0;
    let mut decay: f64 = 0.0;
    let mut torque: f64 = 0.0;
    let mut uniform: f64 = 0.0;
    for _ in 0..100 {
        let p = random_vec(&mut rng, 0.04) + Vec3::new(0.0, 0.0, 0.02);
        let i1 = CurrentTriple::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let i2 = CurrentTriple::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let sum = field_at(&p, &(i1 + i2), &linear).unwrap().b;
        let parts = field_at(&p, &i1, &linear).unwrap().b + field_at(&p, &i2, &linear).unwrap().b;
        superposition = superposition.max((sum - parts).norm() / sum.norm());

        let m = random_vec(&mut rng, 2.0);
        let r = random_vec(&mut rng, 0.05) + Vec3::new(0.0, 0.0, 0.01);
        let ratio = dipole_field(&m, &r).unwrap().norm() / dipole_field(&m, &(r * 2.0)).unwrap().norm();
        decay = decay.max((ratio - 8.0).abs());

        let (m, b) = (random_vec(&mut rng, 1.0), random_vec(&mut rng, 1.0));
        let tau = torque_on(&m, &b);
        torque = torque.max(tau.dot(&m).abs()).max(tau.dot(&b).abs());

        let b0 = random_vec(&mut rng, 5e-3);
        let f = force_from_field(&random_vec(&mut rng, 1.0), &p, FORCE_STEP, |_| Ok(b0)).unwrap();
        uniform = uniform.max(f.norm());
    }
    let cmd = CoilCommand::new(1.0, 1.0, 0.0, PI / 2.0).unwrap();
    let center = Vec3::new(0.0, 0.0, DEFAULT_ORBIT_HEIGHT);
    let period = 2.0 * PI / DRIVE_OMEGA;
    let n = 401;
    let trace: Vec<FieldSample> =
        (0..n).map(|k| sample_field(&cmd, &center, 10.0 * period * k as f64 / (n - 1) as f64, &TurretModel::default()).unwrap()).collect();
    let rate = rotation_summary(&trace).unwrap().rate;
    let rate_err = (rate - DRIVE_OMEGA).abs() / DRIVE_OMEGA;
    let elapsed = t.elapsed();
    let pass = superposition < 1e-12
        && decay < 1e-9
        && torque < 1e-12
        && uniform < 1e-12
        && rate_err < 0.01
        && elapsed < Duration::from_secs(30);
    report.line(
        2,
        "physics invariants",
        pass,
        elapsed,
        format!(
            "superposition {superposition:.1e}, decay ratio error {decay:.1e}, torque dot {torque:.1e}, uniform-field force {uniform:.1e}, quadrature rate {rate:.3} rad/s"
        ),
    );
}

fn toy(report: &mut Report) {
    let t = Instant::now();
    let shape = NetworkShape { actor_hidden: vec![64, 64], critic_branch: 16, critic_hidden: vec![64, 64], dropout: 0.2 };
    let hp = SacHyperparams { total_steps: 20_000, target_entropy: -1.0, ..SacHyperparams::default() };
    let optimum = ToyReachEnv::default().optimal_return();
    let mut best = Vec::new();
    for seed in SEEDS {
        let mut env = ToyReachEnv::default();
        let agent = Agent::new(2, 1, &shape, &hp, &mut rng_stream(seed, STREAM_INIT));
        let mut obs = MemoryObserver::default();
        train(&mut env, agent, &hp, seed, &mut obs).unwrap();
        let top = obs.rows.iter().filter(|r| r.episode >= 100).map(|r| r.rolling_return_100).fold(f64::NEG_INFINITY, f64::max);
        best.push(top);
    }
    let elapsed = t.elapsed();
    let reached = best.iter().filter(|&&b| b >= 0.9 * optimum).count();
    let pass = reached >= 2 && elapsed < Duration::from_secs(600);
    let shown: Vec<String> = best.iter().map(|b| format!("{b:.2}")).collect();
    report.line(
        3,
        "toy environment",
        pass,
        elapsed,
        format!("best rolling-100 return [{}] vs optimum {optimum}; {reached}/3 seeds at 90%", shown.join(", ")),
    );
}

struct SeedRun {
    seed: u64,
    cfg: RunConfig,
    train_time: Duration,
    det_velocity: f64,
    det_progress: f64,
    stoch_velocity: f64,
    det_log: PathBuf,
    first_window: f64,
    last_window: f64,
    first_mode: Option<f64>,
}

impl SeedRun {
    fn succeeded(&self) -> bool {
        self.det_velocity > 2.0 && self.det_progress >= 720.0
    }
}

fn full_run(root: &Path, seed: u64, steps: u64) -> SeedRun {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.sac.total_steps = steps;
    cfg.log_states = false;
    cfg.output_dir = root.join(format!("seed{seed}"));
    eprintln!("training seed {seed} for {steps} steps");
    let t = Instant::now();
    train_command(&cfg, "acceptance").unwrap();
    let train_time = t.elapsed();
    let dir = &cfg.output_dir;
    let det_log = dir.join("eval_det.csv");
    let eval_seed = 1000 + seed;
    let det = eval_command(&cfg, &dir.join(BEST_FILE), 3000, EvalMode::Deterministic, eval_seed, &det_log).unwrap();
    let stoch = eval_command(&cfg, &dir.join(BEST_FILE), 3000, EvalMode::Stochastic, eval_seed, &dir.join("eval_stoch.csv")).unwrap();
    let log = load_transitions(&dir.join(TRANSITIONS_FILE)).unwrap();
    let deltas: Vec<f64> = log.lines.iter().map(|l| l.delta_theta_deg).collect();
    let means = windowed_means(&deltas, WINDOW);
    let hist = &windowed_histograms(&deltas[..WINDOW.min(deltas.len())], WINDOW, DEFAULT_BIN_WIDTH)[0];
    eprintln!(
        "seed {seed}: {:.0} s, deterministic {:.3} deg/step, stochastic {:.3} deg/step",
        train_time.as_secs_f64(),
        det.mean_velocity_deg_per_step,
        stoch.mean_velocity_deg_per_step
    );
    SeedRun {
        seed,
        train_time,
        det_velocity: det.mean_velocity_deg_per_step,
        det_progress: det.total_progress_deg,
        stoch_velocity: stoch.mean_velocity_deg_per_step,
        det_log,
        first_window: means[0],
        last_window: *means.last().unwrap(),
        first_mode: hist.mode(),
        cfg,
    }
}

fn full_task(report: &mut Report, runs: &[SeedRun], elapsed: Duration) {
    let ok = runs.iter().filter(|r| r.succeeded()).count();
    let slowest = runs.iter().map(|r| r.train_time).max().unwrap_or_default();
    let pass = ok >= 2 && slowest < Duration::from_secs(7200);
    let shown: Vec<String> = runs.iter().map(|r| format!("seed {} {:.2} deg/step {:.0} deg", r.seed, r.det_velocity, r.det_progress)).collect();
    report.line(4, "full-task learning", pass, elapsed, format!("{}; {ok}/3 seeds succeed", shown.join(", ")));
}

fn det_vs_stoch(report: &mut Report, runs: &[SeedRun]) {
    let t = Instant::now();
    let good: Vec<&SeedRun> = runs.iter().filter(|r| r.succeeded()).collect();
    let pass = !good.is_empty() && good.iter().all(|r| r.det_velocity >= r.stoch_velocity);
    let shown: Vec<String> = good.iter().map(|r| format!("seed {} {:.3} >= {:.3}", r.seed, r.det_velocity, r.stoch_velocity)).collect();
    report.line(5, "deterministic >= stochastic", pass, t.elapsed(), format!("[{}]", shown.join(", ")));
}

fn learning_curve(report: &mut Report, runs: &[SeedRun]) {
    let t = Instant::now();
    let good: Vec<&SeedRun> = runs.iter().filter(|r| r.succeeded()).collect();
    let pass = !good.is_empty() && good.iter().all(|r| r.last_window - r.first_window >= 2.0 && r.first_mode == Some(0.0));
    let shown: Vec<String> = good
        .iter()
        .map(|r| format!("seed {} window gain {:.2} deg/step, first mode {:?}", r.seed, r.last_window - r.first_window, r.first_mode))
        .collect();
    report.line(6, "learning-curve shape", pass, t.elapsed(), format!("[{}]", shown.join("; ")));
}

fn synthetic_fits() -> (bool, String) {
    let mut rng = rng_stream(7, 0);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let sine: Vec<(f64, f64)> = (0..500)
        .map(|_| {
            let th: f64 = rng.random_range(0.0..360.0);
            (th, 0.7 * (th.to_radians() + 1.0).sin() + 0.1 + noise.sample(&mut rng))
        })
        .collect();
    let s = fit_sine(&sine).unwrap();
    let sine_ok = (s.amplitude - 0.7).abs() < 0.03 && (s.phase - 1.0).abs() < 0.05 && (s.offset - 0.1).abs() < 0.02;
    let square: Vec<(f64, f64)> = (0..500)
        .map(|_| {
            let th: f64 = rng.random_range(0.0..360.0);
            (th, 0.9 * (th.to_radians() + 0.5).sin().signum() + noise.sample(&mut rng))
        })
        .collect();
    let q = fit_square(&square).unwrap();
    let square_ok = (q.amplitude - 0.9).abs() < 0.05 && (q.phase - 0.5).abs() < 0.03;
    (
        sine_ok && square_ok,
        format!(
            "sine A {:.3} phase {:.3} offset {:.3}; square A {:.3} phase {:.3}",
            s.amplitude, s.phase, s.offset, q.amplitude, q.phase
        ),
    )
}

fn distillation(report: &mut Report, runs: &[SeedRun]) {
    let t = Instant::now();
    let (fits_ok, fit_detail) = synthetic_fits();
    let mut all = true;
    let mut shown = Vec::new();
    let good: Vec<&SeedRun> = runs.iter().filter(|r| r.succeeded()).collect();
    for r in &good {
        let dir = &r.cfg.output_dir;
        let policy = dir.join("math_policy.toml");
        let eval_seed = 2000 + r.seed;
        let ratio = distill_command(&r.det_log, DEFAULT_MIN_DELTA_DEG, &Selection::Auto, &policy)
            .and_then(|_| run_math_command(&r.cfg, &policy, 1000, eval_seed, &dir.join("math_eval.csv")))
            .and_then(|math| {
                let neural = eval_command(&r.cfg, &dir.join(BEST_FILE), 1000, EvalMode::Deterministic, eval_seed, &dir.join("eval_det_1000.csv"))?;
                Ok((math.mean_velocity_deg_per_step, neural.mean_velocity_deg_per_step))
            });
        match ratio {
            Ok((math, neural)) => {
                all &= math >= 0.8 * neural;
                shown.push(format!("seed {} distilled {math:.3} vs neural {neural:.3}", r.seed));
            }
            Err(e) => {
                all = false;
                shown.push(format!("seed {} distillation failed: {e:#}", r.seed));
            }
        }
    }
    let pass = fits_ok && !good.is_empty() && all;
    report.line(7, "distillation fidelity", pass, t.elapsed(), format!("{fit_detail}; [{}]", shown.join(", ")));
}

/// Steps `env` for `n` steps and checks reward accounting and episode
/// bounds; returns (worst accounting error, longest episode, worst goal
/// offset error, goals).
fn accounting<F: FnMut(&[f64]) -> Vec<f64>>(env: &mut MicrorobotEnv, n: usize, mut policy: F) -> (f64, u32, f64, u32) {
    let offset = env.config.goal_offset_deg;
    let bonus = env.config.goal_bonus;
    let mut obs = env.reset(5);
    let start = env.robot().theta_unwrapped_deg();
    let (mut total, mut goals, mut run, mut longest) = (0.0, 0u32, 0u32, 0u32);
    let mut goal_err: f64 = 0.0;
    for _ in 0..n {
        let out = env.step(&policy(&obs)).unwrap();
        total += out.reward;
        goals += out.goal_reached as u32;
        run += 1;
        longest = longest.max(run);
        if out.done {
            run = 0;
            let gap = (env.goal_deg() - env.robot().theta_deg()).rem_euclid(360.0);
            goal_err = goal_err.max((gap - offset).abs());
        }
        obs = out.observation;
    }
    let moved = env.robot().theta_unwrapped_deg() - start;
    ((total - (moved + bonus * goals as f64)).abs(), longest, goal_err, goals)
}

fn reward_accounting(report: &mut Report, runs: &[SeedRun]) {
    let t = Instant::now();
    let cfg = RunConfig::default();
    let mut rng = rng_stream(8, 0);
    let mut env = cfg.build_env();
    let random = accounting(&mut env, 10_000, |_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut results = vec![("random", random)];
    if let Some(r) = runs.iter().find(|r| r.succeeded()) {
        let actor = load_actor(&r.cfg.output_dir.join(BEST_FILE)).unwrap().actor;
        let mut env = cfg.build_env();
        results.push(("trained", accounting(&mut env, 10_000, |s| policy_mean(&actor, s).unwrap())));
    }
    let max_steps = cfg.episode.max_steps;
    let pass = results.iter().all(|(_, (err, longest, goal_err, _))| *err < 1e-6 && *longest <= max_steps && *goal_err < 1e-9);
    let shown: Vec<String> = results
        .iter()
        .map(|(name, (err, longest, goal_err, goals))| {
            format!("{name}: error {err:.1e}, {goals} goals, longest episode {longest}, goal offset error {goal_err:.1e}")
        })
        .collect();
    report.line(8, "reward accounting", pass, t.elapsed(), shown.join("; "));
}

fn reproducibility(report: &mut Report, root: &Path) {
    let t = Instant::now();
    let run = |name: &str| {
        let mut cfg = RunConfig::default();
        cfg.seed = 11;
        cfg.sac.total_steps = 400;
        cfg.sac.batch_size = 64;
        cfg.output_dir = root.join(name);
        train_command(&cfg, "acceptance").unwrap();
        cfg.output_dir
    };
    let (a, b) = (run("repro_a"), run("repro_b"));
    let same_metrics = fs::read(a.join(METRICS_FILE)).unwrap() == fs::read(b.join(METRICS_FILE)).unwrap();
    let same_agent = fs::read(a.join(FINAL_FILE)).unwrap() == fs::read(b.join(FINAL_FILE)).unwrap();

    let actor = Actor::new(21, 4, &NetworkShape::default(), &mut rng_stream(12, STREAM_INIT));
    let path = root.join("roundtrip.ckpt");
    save_actor(&path, &actor, &CheckpointMeta::default()).unwrap();
    let back = load_actor(&path).unwrap().actor;
    let states = Array2::from_shape_simple_fn((64, 21), {
        let mut rng = rng_stream(13, 0);
        move || rng.random_range(-1.0..1.0)
    });
    let out_a = actor.net.forward(&states.view(), Mode::Infer, &mut rng_stream(0, 0)).unwrap();
    let out_b = back.net.forward(&states.view(), Mode::Infer, &mut rng_stream(0, 0)).unwrap();
    let bitwise = out_a.iter().zip(out_b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    let text = actor_to_string(&actor, &CheckpointMeta::default());
    let stable = actor_to_string(&back, &CheckpointMeta::default()) == text;
    let agent = load_agent(&a.join(FINAL_FILE)).unwrap();
    let agent_stable = agent_to_string(&agent.agent, &agent.meta) == fs::read_to_string(a.join(FINAL_FILE)).unwrap();

    let pass = same_metrics && same_agent && bitwise && stable && agent_stable;
    report.line(
        9,
        "reproducibility",
        pass,
        t.elapsed(),
        format!(
            "metrics identical {same_metrics}, final agents identical {same_agent}, forward bitwise {bitwise}, re-save identical {}",
            stable && agent_stable
        ),
    );
}

fn main() -> ExitCode {
    let steps = std::env::var("MICROSWIM_ACCEPTANCE_STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_FULL_STEPS);
    let tmp = tempfile::tempdir().unwrap();
    let root = std::env::var_os("MICROSWIM_ACCEPTANCE_DIR").map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    fs::create_dir_all(&root).unwrap();
    let mut report = Report { failures: 0 };

    gradients(&mut report);
    physics(&mut report);
    toy(&mut report);

    let t = Instant::now();
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| full_run(&root, s, steps)).collect();
    full_task(&mut report, &runs, t.elapsed());
    det_vs_stoch(&mut report, &runs);
    learning_curve(&mut report, &runs);
    distillation(&mut report, &runs);
    reward_accounting(&mut report, &runs);
    reproducibility(&mut report, &root);

    println!("acceptance: {} of 9 criteria passed", 9 - report.failures);
    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
