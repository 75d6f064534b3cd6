//! Soft actor-critic: replay buffer, twin critics with Polyak-averaged
//! targets, automatic temperature tuning, the collection/learning loop and
//! policy evaluation.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use ndarray::{Array1, Array2, Zip};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Environment};
use crate::neural::{
    policy_mean, policy_sample, polyak_average, Actor, Adam, Critic, Mode, NetworkShape, NeuralError, ParamSet, Scalar,
    SquashedBatch,
};

pub const ROLLING_EPISODES: usize = 100;
/// Environment steps averaged for `MetricsRow::mean_velocity_recent`.
pub const VELOCITY_WINDOW: usize = 1000;

pub const STREAM_ENV: u64 = 0;
pub const STREAM_POLICY: u64 = 1;
pub const STREAM_DROPOUT: u64 = 2;
pub const STREAM_BUFFER: u64 = 3;
pub const STREAM_INIT: u64 = 4;

/// Independent random stream `stream` derived from one run seed.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error)]
pub enum SacError {
    #[error("cannot sample {batch} records from a buffer holding {len}")]
    Underfilled { len: usize, batch: usize },
    #[error("invalid hyperparameter: {0}")]
    Hyperparams(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("sink failed: {0}")]
    Sink(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO store; sampling is uniform with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// Oldest first.
    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>, SacError> {
        if self.items.len() < batch || batch == 0 {
            return Err(SacError::Underfilled { len: self.items.len(), batch });
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch, SacError> {
        let idx = self.sample_indices(batch, rng)?;
        let picked: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Ok(Batch::from_transitions(&picked))
    }
}

/// Transitions stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub r: Array1<f64>,
    pub s_next: Array2<f64>,
    pub done: Array1<f64>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let n = ts.len();
        let obs = ts[0].s.len();
        let act = ts[0].a.len();
        let mut s = Array2::zeros((n, obs));
        let mut a = Array2::zeros((n, act));
        let mut s_next = Array2::zeros((n, obs));
        let mut r = Array1::zeros(n);
        let mut done = Array1::zeros(n);
        for (i, t) in ts.iter().enumerate() {
            s.row_mut(i).assign(&ndarray::aview1(&t.s));
            a.row_mut(i).assign(&ndarray::aview1(&t.a));
            s_next.row_mut(i).assign(&ndarray::aview1(&t.s_next));
            r[i] = t.r;
            done[i] = if t.done { 1.0 } else { 0.0 };
        }
        Self { s, a, r, s_next, done }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacHyperparams {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_entropy: f64,
    pub initial_alpha: f64,
    pub updates_per_step: u32,
    /// Environment steps between refreshes of the collecting policy.
    pub policy_sync_period: u64,
    pub total_steps: u64,
}

impl Default for SacHyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch_size: 256,
            buffer_capacity: 100_000,
            target_entropy: -4.0,
            initial_alpha: 1.0,
            updates_per_step: 1,
            policy_sync_period: 1,
            total_steps: 100_000,
        }
    }
}

impl SacHyperparams {
    pub fn validate(&self) -> Result<(), SacError> {
        let bad = |m: String| Err(SacError::Hyperparams(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("sac.gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("sac.tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("sac.lr must be positive, got {}", self.lr));
        }
        if !(self.initial_alpha > 0.0 && self.initial_alpha.is_finite()) {
            return bad(format!("sac.initial_alpha must be positive, got {}", self.initial_alpha));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad(format!(
                "sac.batch_size must lie in 1..=buffer_capacity ({}), got {}",
                self.buffer_capacity, self.batch_size
            ));
        }
        if self.updates_per_step == 0 || self.policy_sync_period == 0 {
            return bad("sac.updates_per_step and sac.policy_sync_period must be positive".into());
        }
        if !self.target_entropy.is_finite() {
            return bad("sac.target_entropy must be finite".into());
        }
        Ok(())
    }
}

/// Loss values from one gradient update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub temperature: f64,
    /// Temperature after the update.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub actor: Actor,
    pub critic1: Critic,
    pub critic2: Critic,
    pub target1: Critic,
    pub target2: Critic,
    pub log_alpha: Scalar,
    pub actor_opt: Adam<Actor>,
    pub critic1_opt: Adam<Critic>,
    pub critic2_opt: Adam<Critic>,
    pub alpha_opt: Adam<Scalar>,
    pub updates: u64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(obs_len: usize, action_len: usize, shape: &NetworkShape, hp: &SacHyperparams, rng: &mut R) -> Self {
        let actor = Actor::new(obs_len, action_len, shape, rng);
        let critic1 = Critic::new(obs_len, action_len, shape, rng);
        let critic2 = Critic::new(obs_len, action_len, shape, rng);
        Self::from_parts(actor, critic1, critic2, hp)
    }

    /// Fresh optimizer state; targets start as exact copies of the critics.
    pub fn from_parts(actor: Actor, critic1: Critic, critic2: Critic, hp: &SacHyperparams) -> Self {
        let log_alpha = Scalar(hp.initial_alpha.ln());
        Self {
            actor_opt: Adam::new(&actor, hp.lr),
            critic1_opt: Adam::new(&critic1, hp.lr),
            critic2_opt: Adam::new(&critic2, hp.lr),
            alpha_opt: Adam::new(&log_alpha, hp.lr),
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            log_alpha,
            updates: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.0.exp()
    }

    pub fn all_finite(&self) -> bool {
        self.actor.all_finite()
            && self.critic1.all_finite()
            && self.critic2.all_finite()
            && self.target1.all_finite()
            && self.target2.all_finite()
            && self.log_alpha.0.is_finite()
    }

    /// One gradient step on each critic, the actor and the temperature,
    /// followed by the target update.
    pub fn update<R1, R2>(&mut self, batch: &Batch, hp: &SacHyperparams, policy_rng: &mut R1, dropout_rng: &mut R2) -> Result<Losses, SacError>
    where
        R1: Rng + ?Sized,
        R2: Rng + ?Sized,
    {
        let alpha = self.alpha();
        let next_noise = SquashedBatch::draw_noise(batch.len(), self.actor.action_len(), policy_rng);
        let y = q_targets(&self.actor, &self.target1, &self.target2, alpha, batch, next_noise, hp.gamma)?;

        let (critic1, g1) = critic_loss_grad(&self.critic1, &batch.s, &batch.a, &y, dropout_rng)?;
        self.critic1_opt.step(&mut self.critic1, &g1);
        let (critic2, g2) = critic_loss_grad(&self.critic2, &batch.s, &batch.a, &y, dropout_rng)?;
        self.critic2_opt.step(&mut self.critic2, &g2);

        let noise = SquashedBatch::draw_noise(batch.len(), self.actor.action_len(), policy_rng);
        let (actor, ga, log_probs) = actor_loss_grad(&self.actor, &self.critic1, &self.critic2, alpha, &batch.s, noise, dropout_rng)?;
        self.actor_opt.step(&mut self.actor, &ga);

        let (temperature, gt) = temperature_loss_grad(self.log_alpha, &log_probs, hp.target_entropy);
        self.alpha_opt.step(&mut self.log_alpha, &gt);

        polyak_average(&mut self.target1, &self.critic1, hp.tau);
        polyak_average(&mut self.target2, &self.critic2, hp.tau);
        self.updates += 1;
        Ok(Losses { critic1, critic2, actor, temperature, alpha: self.alpha() })
    }
}

/// `y = r + γ(1 − d)(q_min − α·logπ)`, elementwise.
pub fn soft_targets(r: &Array1<f64>, done: &Array1<f64>, q_min: &Array1<f64>, alpha_log_prob: &Array1<f64>, gamma: f64) -> Array1<f64> {
    let mut y = r.clone();
    Zip::from(&mut y).and(done).and(q_min).and(alpha_log_prob).for_each(|y, &d, &q, &alp| {
        if d == 0.0 {
            *y += gamma * (q - alp);
        } else if d != 1.0 {
            *y += gamma * (1.0 - d) * (q - alp);
        }
    });
    y
}

/// Bootstrapped critic targets using the smaller target-critic estimate at a
/// freshly sampled next action. Everything runs in inference mode.
pub fn q_targets(
    actor: &Actor,
    target1: &Critic,
    target2: &Critic,
    alpha: f64,
    batch: &Batch,
    noise: Array2<f64>,
    gamma: f64,
) -> Result<Array1<f64>, SacError> {
    let out = actor.net.infer(&batch.s_next.view())?;
    let next = SquashedBatch::new(&out, noise);
    let q1 = target1.infer(&batch.s_next.view(), &next.actions.view())?;
    let q2 = target2.infer(&batch.s_next.view(), &next.actions.view())?;
    let q_min = Zip::from(&q1).and(&q2).map_collect(|&a, &b| a.min(b));
    let alp = next.log_probs.mapv(|lp| alpha * lp);
    Ok(soft_targets(&batch.r, &batch.done, &q_min, &alp, gamma))
}

/// Mean squared error against fixed targets, with its parameter gradient.
/// Dropout is active.
pub fn critic_loss_grad<R: Rng + ?Sized>(
    critic: &Critic,
    s: &Array2<f64>,
    a: &Array2<f64>,
    y: &Array1<f64>,
    dropout_rng: &mut R,
) -> Result<(f64, Critic), SacError> {
    let (q, tape) = critic.forward_tape(s.clone(), a.clone(), Mode::Train, dropout_rng)?;
    let n = y.len() as f64;
    let err = &q - y;
    let loss = err.mapv(|e| e * e).sum() / n;
    let d_q = err.mapv(|e| 2.0 * e / n);
    let mut grad = critic.zeros_like();
    critic.backward(&tape, &d_q, Some(&mut grad), false);
    Ok((loss, grad))
}

/// `mean(α·logπ(ã|s) − min(Q1, Q2)(s, ã))` with `ã` reparameterized through
/// `noise`. Critics are frozen and evaluated in inference mode; the actor's
/// dropout is active. Returns the loss, the actor gradient and the per-row
/// log densities.
pub fn actor_loss_grad<R: Rng + ?Sized>(
    actor: &Actor,
    critic1: &Critic,
    critic2: &Critic,
    alpha: f64,
    s: &Array2<f64>,
    noise: Array2<f64>,
    dropout_rng: &mut R,
) -> Result<(f64, Actor, Array1<f64>), SacError> {
    let (out, tape) = actor.net.forward_tape(s.clone(), Mode::Train, dropout_rng)?;
    let sq = SquashedBatch::new(&out, noise);
    let (q1, t1) = critic1.forward_tape(s.clone(), sq.actions.clone(), Mode::Infer, dropout_rng)?;
    let (q2, t2) = critic2.forward_tape(s.clone(), sq.actions.clone(), Mode::Infer, dropout_rng)?;
    let n = s.nrows() as f64;
    let mut loss = 0.0;
    let mut d_q1 = Array1::zeros(s.nrows());
    let mut d_q2 = Array1::zeros(s.nrows());
    for i in 0..s.nrows() {
        let first = q1[i] <= q2[i];
        let q_min = if first { q1[i] } else { q2[i] };
        loss += alpha * sq.log_probs[i] - q_min;
        if first {
            d_q1[i] = -1.0 / n;
        } else {
            d_q2[i] = -1.0 / n;
        }
    }
    loss /= n;
    let d_a1 = critic1.backward(&t1, &d_q1, None, true).expect("action gradient requested");
    let d_a2 = critic2.backward(&t2, &d_q2, None, true).expect("action gradient requested");
    let d_actions = d_a1 + d_a2;
    let d_lp = Array1::from_elem(s.nrows(), alpha / n);
    let d_out = sq.backward(&d_actions, &d_lp);
    let mut grad = actor.zeros_like();
    actor.net.backward(&tape, d_out, Some(&mut grad.net), false);
    Ok((loss, grad, sq.log_probs))
}

/// `J = mean(−α·(logπ + H̄))` differentiated with respect to `log α`.
pub fn temperature_loss_grad(log_alpha: Scalar, log_probs: &Array1<f64>, target_entropy: f64) -> (f64, Scalar) {
    let alpha = log_alpha.0.exp();
    let m = log_probs.mean().unwrap_or(0.0) + target_entropy;
    (-alpha * m, Scalar(-alpha * m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub episode_return: f64,
    pub rolling_return_100: f64,
    pub alpha: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub temperature_loss: f64,
    pub mean_velocity_recent: f64,
}

/// Per-environment-step record, used for the transition log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub episode: u64,
    pub position_before: f64,
    pub progress: f64,
    pub goal_reached: bool,
    pub transition: Transition,
}

/// Actor parameters saved when the rolling return sets a new record.
#[derive(Debug, Clone, PartialEq)]
pub struct BestSnapshot {
    pub actor: Actor,
    pub rolling_return: f64,
    pub step: u64,
    pub episode: u64,
}

/// Receives training artifacts as they are produced.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) -> std::io::Result<()> {
        Ok(())
    }
    fn on_episode(&mut self, _row: &MetricsRow) -> std::io::Result<()> {
        Ok(())
    }
    fn on_best(&mut self, _best: &BestSnapshot) -> std::io::Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullObserver;

impl TrainObserver for NullObserver {}

/// Collects metrics rows in memory.
#[derive(Debug, Default)]
pub struct MemoryObserver {
    pub rows: Vec<MetricsRow>,
    pub steps: Vec<StepRecord>,
    pub keep_steps: bool,
}

impl TrainObserver for MemoryObserver {
    fn on_step(&mut self, record: &StepRecord) -> std::io::Result<()> {
        if self.keep_steps {
            self.steps.push(record.clone());
        }
        Ok(())
    }

    fn on_episode(&mut self, row: &MetricsRow) -> std::io::Result<()> {
        self.rows.push(row.clone());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub best: Option<BestSnapshot>,
    pub env_steps: u64,
    pub episodes: u64,
}

/// Episode bookkeeping shared by both training modes.
struct Tracker {
    episode: u64,
    episode_return: f64,
    returns: VecDeque<f64>,
    best_rolling: f64,
    recent: VecDeque<f64>,
    recent_sum: f64,
    loss_sum: [f64; 3],
    loss_count: u32,
    alpha: f64,
}

impl Tracker {
    fn new(alpha: f64) -> Self {
        Self {
            episode: 0,
            episode_return: 0.0,
            returns: VecDeque::with_capacity(ROLLING_EPISODES),
            best_rolling: f64::NEG_INFINITY,
            recent: VecDeque::with_capacity(VELOCITY_WINDOW),
            recent_sum: 0.0,
            loss_sum: [0.0; 3],
            loss_count: 0,
            alpha,
        }
    }

    fn record_losses(&mut self, l: &Losses) {
        self.loss_sum[0] += 0.5 * (l.critic1 + l.critic2);
        self.loss_sum[1] += l.actor;
        self.loss_sum[2] += l.temperature;
        self.loss_count += 1;
        self.alpha = l.alpha;
    }

    fn record_step(&mut self, reward: f64, progress: f64) {
        self.episode_return += reward;
        if self.recent.len() == VELOCITY_WINDOW {
            self.recent_sum -= self.recent.pop_front().unwrap_or(0.0);
        }
        self.recent.push_back(progress);
        self.recent_sum += progress;
    }

    /// Closes the episode; returns the metrics row and whether the rolling
    /// return set a new record.
    fn finish_episode(&mut self, step: u64) -> (MetricsRow, bool) {
        self.episode += 1;
        if self.returns.len() == ROLLING_EPISODES {
            self.returns.pop_front();
        }
        self.returns.push_back(self.episode_return);
        let rolling = self.returns.iter().sum::<f64>() / self.returns.len() as f64;
        let record = self.returns.len() == ROLLING_EPISODES && rolling > self.best_rolling;
        if record {
            self.best_rolling = rolling;
        }
        let c = self.loss_count as f64;
        let mean = |v: f64| if self.loss_count == 0 { f64::NAN } else { v / c };
        let row = MetricsRow {
            step,
            episode: self.episode,
            episode_return: self.episode_return,
            rolling_return_100: rolling,
            alpha: self.alpha,
            critic_loss: mean(self.loss_sum[0]),
            actor_loss: mean(self.loss_sum[1]),
            temperature_loss: mean(self.loss_sum[2]),
            mean_velocity_recent: self.recent_sum / self.recent.len() as f64,
        };
        self.episode_return = 0.0;
        self.loss_sum = [0.0; 3];
        self.loss_count = 0;
        (row, record)
    }
}

fn uniform_action<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Synchronous training: one environment step, then (once the buffer holds a
/// batch) one gradient update, repeated `hp.total_steps` times. Fully
/// deterministic for a given seed.
pub fn train<E: Environment + ?Sized>(
    env: &mut E,
    mut agent: Agent,
    hp: &SacHyperparams,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, SacError> {
    hp.validate()?;
    let mut policy_rng = rng_stream(seed, STREAM_POLICY);
    let mut dropout_rng = rng_stream(seed, STREAM_DROPOUT);
    let mut buffer_rng = rng_stream(seed, STREAM_BUFFER);
    let mut learn_rng = rng_stream(seed, STREAM_POLICY + 16);
    let mut buffer = ReplayBuffer::new(hp.buffer_capacity);
    let mut tracker = Tracker::new(agent.alpha());
    let mut best = None;
    let mut behaviour = agent.actor.clone();
    let mut obs = env.reset(rng_stream(seed, STREAM_ENV).next_u64());
    let mut updates: u64 = 0;

    for step in 1..=hp.total_steps {
        let action = if buffer.len() < hp.batch_size {
            uniform_action(env.action_len(), &mut policy_rng)
        } else {
            policy_sample(&behaviour, &obs, &mut policy_rng)?.0
        };
        let out = env.step(&action)?;
        let transition = Transition { s: obs, a: action, r: out.reward, s_next: out.observation.clone(), done: out.done };
        let record = StepRecord {
            step,
            episode: tracker.episode + 1,
            position_before: out.position_before,
            progress: out.progress,
            goal_reached: out.goal_reached,
            transition,
        };
        observer.on_step(&record)?;
        buffer.push(record.transition);
        tracker.record_step(out.reward, out.progress);

        if buffer.len() >= hp.batch_size {
            for _ in 0..hp.updates_per_step {
                if updates >= step {
                    break;
                }
                let batch = buffer.sample(hp.batch_size, &mut buffer_rng)?;
                let losses = agent.update(&batch, hp, &mut learn_rng, &mut dropout_rng)?;
                tracker.record_losses(&losses);
                updates += 1;
            }
        }
        if step % hp.policy_sync_period == 0 {
            behaviour.clone_from(&agent.actor);
        }
        if out.done {
            let (row, record) = tracker.finish_episode(step);
            observer.on_episode(&row)?;
            if record {
                let snap = BestSnapshot { actor: behaviour.clone(), rolling_return: row.rolling_return_100, step, episode: row.episode };
                observer.on_best(&snap)?;
                best = Some(snap);
            }
        }
        obs = out.observation;
    }
    Ok(TrainOutcome { agent, best, env_steps: hp.total_steps, episodes: tracker.episode })
}

/// Decoupled training: a collector thread acts with a parameter snapshot that
/// the learner refreshes every `policy_sync_period` updates, while the learner
/// consumes the shared buffer. Update count never exceeds collected steps.
/// Interleaving depends on scheduling, so results are not reproducible.
pub fn train_decoupled<E: Environment + Send + ?Sized>(
    env: &mut E,
    agent: Agent,
    hp: &SacHyperparams,
    seed: u64,
    observer: &mut (dyn TrainObserver + Send),
) -> Result<TrainOutcome, SacError> {
    hp.validate()?;
    let buffer = Mutex::new(ReplayBuffer::new(hp.buffer_capacity));
    let snapshot = RwLock::new(agent.actor.clone());
    let latest_losses: Mutex<Option<Losses>> = Mutex::new(None);
    let collected = AtomicU64::new(0);
    let finished = AtomicBool::new(false);
    let initial_alpha = agent.alpha();

    std::thread::scope(|scope| {
        let learner = scope.spawn(|| -> Result<Agent, SacError> {
            let mut agent = agent;
            let mut dropout_rng = rng_stream(seed, STREAM_DROPOUT);
            let mut buffer_rng = rng_stream(seed, STREAM_BUFFER);
            let mut learn_rng = rng_stream(seed, STREAM_POLICY + 16);
            loop {
                let steps = collected.load(Ordering::Acquire);
                let batch = {
                    let buf = buffer.lock().expect("buffer lock");
                    if buf.len() >= hp.batch_size && agent.updates < steps * hp.updates_per_step as u64 {
                        Some(buf.sample(hp.batch_size, &mut buffer_rng)?)
                    } else {
                        None
                    }
                };
                match batch {
                    Some(b) => {
                        let losses = agent.update(&b, hp, &mut learn_rng, &mut dropout_rng)?;
                        *latest_losses.lock().expect("loss lock") = Some(losses);
                        if agent.updates % hp.policy_sync_period == 0 {
                            snapshot.write().expect("snapshot lock").clone_from(&agent.actor);
                        }
                    }
                    None if finished.load(Ordering::Acquire) => return Ok(agent),
                    None => std::thread::yield_now(),
                }
            }
        });

        let mut collect = || -> Result<(Option<BestSnapshot>, u64), SacError> {
            let mut policy_rng = rng_stream(seed, STREAM_POLICY);
            let mut tracker = Tracker::new(initial_alpha);
            let mut best = None;
            let mut obs = env.reset(rng_stream(seed, STREAM_ENV).next_u64());
            for step in 1..=hp.total_steps {
                let warm = buffer.lock().expect("buffer lock").len() < hp.batch_size;
                let action = if warm {
                    uniform_action(env.action_len(), &mut policy_rng)
                } else {
                    policy_sample(&snapshot.read().expect("snapshot lock"), &obs, &mut policy_rng)?.0
                };
                let out = env.step(&action)?;
                let transition = Transition { s: obs, a: action, r: out.reward, s_next: out.observation.clone(), done: out.done };
                let record = StepRecord {
                    step,
                    episode: tracker.episode + 1,
                    position_before: out.position_before,
                    progress: out.progress,
                    goal_reached: out.goal_reached,
                    transition,
                };
                observer.on_step(&record)?;
                buffer.lock().expect("buffer lock").push(record.transition);
                collected.store(step, Ordering::Release);
                tracker.record_step(out.reward, out.progress);
                if let Some(l) = latest_losses.lock().expect("loss lock").take() {
                    tracker.record_losses(&l);
                }
                if out.done {
                    let (row, record) = tracker.finish_episode(step);
                    observer.on_episode(&row)?;
                    if record {
                        let actor = snapshot.read().expect("snapshot lock").clone();
                        let snap = BestSnapshot { actor, rolling_return: row.rolling_return_100, step, episode: row.episode };
                        observer.on_best(&snap)?;
                        best = Some(snap);
                    }
                }
                obs = out.observation;
            }
            Ok((best, tracker.episode))
        };
        let collected_result = collect();
        finished.store(true, Ordering::Release);
        let agent = learner.join().expect("learner thread panicked")?;
        let (best, episodes) = collected_result?;
        Ok(TrainOutcome { agent, best, env_steps: hp.total_steps, episodes })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Squashed mean action.
    Deterministic,
    /// Sampled from the policy distribution.
    Stochastic,
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" | "mean" => Ok(EvalMode::Deterministic),
            "stochastic" | "sample" => Ok(EvalMode::Stochastic),
            other => Err(format!("unknown evaluation mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    /// Position when the action was applied.
    pub theta_deg: f64,
    pub action: Vec<f64>,
    pub delta_theta_deg: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalLog {
    pub records: Vec<EvalRecord>,
}

impl EvalLog {
    /// Mean progress per step.
    pub fn mean_velocity(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.delta_theta_deg).sum::<f64>() / self.records.len() as f64
    }

    /// Sample standard deviation of per-step progress.
    pub fn std_velocity(&self) -> f64 {
        let n = self.records.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean_velocity();
        let ss: f64 = self.records.iter().map(|r| (r.delta_theta_deg - m).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    }

    pub fn total_progress(&self) -> f64 {
        self.records.iter().map(|r| r.delta_theta_deg).sum()
    }
}

/// Runs an arbitrary policy with no learning. The policy sees the
/// observation and the current position.
pub fn run_policy<E, F>(env: &mut E, n_steps: u64, seed: u64, mut policy: F) -> Result<EvalLog, SacError>
where
    E: Environment + ?Sized,
    F: FnMut(&[f64], f64) -> Result<Vec<f64>, SacError>,
{
    let mut obs = env.reset(seed);
    let mut records = Vec::with_capacity(n_steps as usize);
    for step in 1..=n_steps {
        let action = policy(&obs, env.position())?;
        let out = env.step(&action)?;
        records.push(EvalRecord {
            step,
            theta_deg: out.position_before,
            action,
            delta_theta_deg: out.progress,
            reward: out.reward,
        });
        obs = out.observation;
    }
    Ok(EvalLog { records })
}

pub fn evaluate<E: Environment + ?Sized>(actor: &Actor, env: &mut E, n_steps: u64, mode: EvalMode, seed: u64) -> Result<EvalLog, SacError> {
    let mut rng = rng_stream(seed, STREAM_POLICY);
    run_policy(env, n_steps, seed, |obs, _| match mode {
        EvalMode::Deterministic => Ok(policy_mean(actor, obs)?),
        EvalMode::Stochastic => Ok(policy_sample(actor, obs, &mut rng)?.0),
    })
}
