//! Episodic environments: the channel microrobot task and a 1-D toy task used
//! to sanity-check the trainer.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::magnetics::{MagneticsError, TurretModel};
use crate::neural::{action_to_command, NeuralError};
use crate::swimmer::{sub_step, RobotState, SubObservation, SwimmerModel, DEFAULT_MOMENT, DEFAULT_SUB_STEP_DT};

pub const STATE_FEATURES: usize = 7;
pub const STATE_COLUMNS: usize = 3;
pub const OBS_LEN: usize = STATE_FEATURES * STATE_COLUMNS;
pub const ACTION_LEN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called before reset")]
    NotReset,
    #[error(transparent)]
    Action(#[from] NeuralError),
    #[error(transparent)]
    Field(#[from] MagneticsError),
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub goal_reached: bool,
    /// Position when the action was applied (degrees for the microrobot).
    pub position_before: f64,
    /// Signed progress made during the step.
    pub progress: f64,
}

pub trait Environment {
    fn obs_len(&self) -> usize;
    fn action_len(&self) -> usize;
    /// Starts a fresh episode; the seed also drives any process noise.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError>;
    fn observe(&self) -> Vec<f64>;
    /// Current position in the units of `StepOutcome::position_before`.
    fn position(&self) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub goal_offset_deg: f64,
    pub max_steps: u32,
    pub sub_steps: u32,
    pub sub_step_dt: f64,
    pub goal_bonus: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { goal_offset_deg: 20.0, max_steps: 33, sub_steps: 3, sub_step_dt: DEFAULT_SUB_STEP_DT, goal_bonus: 1000.0 }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.goal_offset_deg > 0.0 && self.sub_step_dt > 0.0 && self.goal_bonus >= 0.0) {
            return Err("episode.goal_offset_deg and episode.sub_step_dt must be positive".into());
        }
        if self.max_steps == 0 {
            return Err("episode.max_steps must be positive".into());
        }
        if self.sub_steps as usize != STATE_COLUMNS {
            return Err(format!("episode.sub_steps must be {STATE_COLUMNS} to match the state layout"));
        }
        Ok(())
    }
}

pub fn reward(delta_theta_deg: f64, reached_goal: bool, bonus: f64) -> f64 {
    delta_theta_deg + if reached_goal { bonus } else { 0.0 }
}

pub fn advance_goal(theta_deg: f64, offset_deg: f64) -> f64 {
    (theta_deg + offset_deg).rem_euclid(360.0)
}

/// The four action-echo features: magnitudes as commanded, phases as
/// fractions of a turn.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActionEcho(pub [f64; 4]);

impl ActionEcho {
    pub fn none() -> Self {
        Self([0.0; 4])
    }

    pub fn from_action(action: &[f64]) -> Self {
        let turn = |a: f64| ((a + 1.0) * PI).rem_euclid(2.0 * PI) / (2.0 * PI);
        Self([action[0], action[1], turn(action[2]), turn(action[3])])
    }
}

/// Seven features by three sub-observations.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub features: [[f64; STATE_COLUMNS]; STATE_FEATURES],
}

impl StateVector {
    /// Row-major flattening: index `feature * 3 + column`.
    pub fn flatten(&self) -> Vec<f64> {
        self.features.iter().flat_map(|row| row.iter().copied()).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (STATE_FEATURES, STATE_COLUMNS)
    }
}

pub fn encode_state(
    goal_deg: f64,
    echo: &ActionEcho,
    t_remaining: u32,
    max_steps: u32,
    subobs: &[SubObservation; STATE_COLUMNS],
) -> StateVector {
    let mut features = [[0.0; STATE_COLUMNS]; STATE_FEATURES];
    for (j, sub) in subobs.iter().enumerate() {
        features[0][j] = sub.theta_deg / 360.0;
        features[1][j] = goal_deg / 360.0;
        features[2][j] = t_remaining as f64 / max_steps as f64;
        for k in 0..4 {
            features[3 + k][j] = echo.0[k];
        }
    }
    StateVector { features }
}

/// The helical robot in its circular channel.
#[derive(Debug, Clone)]
pub struct MicrorobotEnv {
    pub config: EpisodeConfig,
    pub turret: TurretModel,
    pub swimmer: SwimmerModel,
    robot: RobotState,
    goal_deg: f64,
    steps_in_episode: u32,
    progress_deg: f64,
    echo: ActionEcho,
    subobs: [SubObservation; STATE_COLUMNS],
    clock: f64,
    rng: ChaCha8Rng,
    active: bool,
}

impl MicrorobotEnv {
    pub fn new(config: EpisodeConfig, turret: TurretModel, swimmer: SwimmerModel) -> Self {
        let idle = SubObservation { theta_deg: 0.0, delta_theta_deg: 0.0, time_in_episode: 0 };
        Self {
            config,
            turret,
            swimmer,
            robot: RobotState::new(0.0, DEFAULT_MOMENT),
            goal_deg: 0.0,
            steps_in_episode: 0,
            progress_deg: 0.0,
            echo: ActionEcho::none(),
            subobs: [idle; STATE_COLUMNS],
            clock: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
            active: false,
        }
    }

    pub fn robot(&self) -> &RobotState {
        &self.robot
    }

    pub fn goal_deg(&self) -> f64 {
        self.goal_deg
    }

    pub fn steps_in_episode(&self) -> u32 {
        self.steps_in_episode
    }

    pub fn state(&self) -> StateVector {
        let remaining = self.config.max_steps - self.steps_in_episode;
        encode_state(self.goal_deg, &self.echo, remaining, self.config.max_steps, &self.subobs)
    }

    /// Places the robot at `theta_deg` and starts an episode there.
    pub fn reset_at(&mut self, theta_deg: f64, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.robot = RobotState::new(theta_deg, DEFAULT_MOMENT);
        self.begin_episode();
        self.echo = ActionEcho::none();
        let here = SubObservation { theta_deg: self.robot.theta_deg(), delta_theta_deg: 0.0, time_in_episode: 0 };
        self.subobs = [here; STATE_COLUMNS];
        self.clock = 0.0;
        self.active = true;
        self.observe()
    }

    fn begin_episode(&mut self) {
        self.goal_deg = advance_goal(self.robot.theta_deg(), self.config.goal_offset_deg);
        self.steps_in_episode = 0;
        self.progress_deg = 0.0;
    }
}

impl Environment for MicrorobotEnv {
    fn obs_len(&self) -> usize {
        OBS_LEN
    }

    fn action_len(&self) -> usize {
        ACTION_LEN
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let theta = ChaCha8Rng::seed_from_u64(seed).random_range(0.0..360.0);
        self.reset_at(theta, seed)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if !self.active {
            return Err(EnvError::NotReset);
        }
        let cmd = action_to_command(action)?;
        let position_before = self.robot.theta_deg();
        let start = self.robot.theta_unwrapped_deg();
        let dt = self.config.sub_step_dt;
        let mut total = 0.0;
        let mut reached = false;
        for j in 0..STATE_COLUMNS {
            let (next, mut obs) = sub_step(&self.robot, &cmd, self.clock, dt, &self.turret, &self.swimmer, &mut self.rng)?;
            self.robot = next;
            self.clock += dt;
            obs.time_in_episode = self.steps_in_episode * STATE_COLUMNS as u32 + j as u32;
            self.progress_deg += obs.delta_theta_deg;
            let crossed = !reached && self.progress_deg >= self.config.goal_offset_deg;
            reached |= crossed;
            total += reward(obs.delta_theta_deg, crossed, self.config.goal_bonus);
            self.subobs[j] = obs;
        }
        self.steps_in_episode += 1;
        self.echo = ActionEcho::from_action(action);
        let done = reached || self.steps_in_episode >= self.config.max_steps;
        if done {
            // the next episode starts where this one ended
            self.begin_episode();
        }
        Ok(StepOutcome {
            observation: self.observe(),
            reward: total,
            done,
            goal_reached: reached,
            position_before,
            progress: self.robot.theta_unwrapped_deg() - start,
        })
    }

    fn observe(&self) -> Vec<f64> {
        self.state().flatten()
    }

    fn position(&self) -> f64 {
        self.robot.theta_deg()
    }
}

/// One-dimensional reach task: the single action sets the velocity toward a
/// goal at distance `goal_distance`; the final move is capped at the goal.
/// Reward is the distance covered plus `bonus` on arrival, so the optimal
/// return is `goal_distance + bonus`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyReachEnv {
    pub goal_distance: f64,
    pub max_speed: f64,
    pub max_steps: u32,
    pub bonus: f64,
    position: f64,
    steps: u32,
}

impl Default for ToyReachEnv {
    fn default() -> Self {
        Self::new(1.0, 0.1, 20, 10.0)
    }
}

impl ToyReachEnv {
    pub fn new(goal_distance: f64, max_speed: f64, max_steps: u32, bonus: f64) -> Self {
        Self { goal_distance, max_speed, max_steps, bonus, position: 0.0, steps: 0 }
    }

    pub fn optimal_return(&self) -> f64 {
        self.goal_distance + self.bonus
    }
}

impl Environment for ToyReachEnv {
    fn obs_len(&self) -> usize {
        2
    }

    fn action_len(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.position = 0.0;
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if action.len() != 1 {
            return Err(NeuralError::ActionLength { got: action.len() }.into());
        }
        let a = action[0];
        if !(-1.0..=1.0).contains(&a) {
            return Err(NeuralError::ActionOutOfRange { index: 0, value: a }.into());
        }
        let before = self.position;
        self.position = (self.position + self.max_speed * a).min(self.goal_distance);
        self.steps += 1;
        let reached = self.position >= self.goal_distance;
        let progress = self.position - before;
        let done = reached || self.steps >= self.max_steps;
        let outcome_reward = progress + if reached { self.bonus } else { 0.0 };
        if done {
            self.position = 0.0;
            self.steps = 0;
        }
        Ok(StepOutcome {
            observation: self.observe(),
            reward: outcome_reward,
            done,
            goal_reached: reached,
            position_before: before,
            progress,
        })
    }

    fn observe(&self) -> Vec<f64> {
        vec![
            (self.goal_distance - self.position) / self.goal_distance,
            (self.max_steps - self.steps) as f64 / self.max_steps as f64,
        ]
    }

    fn position(&self) -> f64 {
        self.position
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_env() -> MicrorobotEnv {
        MicrorobotEnv::new(EpisodeConfig::default(), TurretModel::default(), SwimmerModel::default().noiseless())
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(5.0, false, 1000.0), 5.0);
        assert_eq!(reward(2.0, true, 1000.0), 1002.0);
        assert_eq!(reward(-3.0, false, 1000.0), -3.0);
    }

    #[test]
    fn goal_wraps() {
        assert_eq!(advance_goal(0.0, 20.0), 20.0);
        assert!((advance_goal(350.0, 20.0) - 10.0).abs() < 1e-12);
        assert!((advance_goal(123.4, 20.0) - 143.4).abs() < 1e-12);
    }

    #[test]
    fn encoding_normalizes_angles() {
        let sub = SubObservation { theta_deg: 90.0, delta_theta_deg: 0.0, time_in_episode: 0 };
        let s = encode_state(110.0, &ActionEcho::none(), 33, 33, &[sub; 3]);
        assert_eq!(s.shape(), (7, 3));
        assert_eq!(s.features[0][0], 0.25);
        assert!((s.features[1][2] - 110.0 / 360.0).abs() < 1e-15);
        for k in 3..7 {
            assert_eq!(s.features[k], [0.0; 3]);
        }
        let flat = s.flatten();
        assert_eq!(flat.len(), 21);
        assert_eq!(flat[3], s.features[1][0]);
    }

    #[test]
    fn echo_phase_fractions() {
        let e = ActionEcho::from_action(&[0.5, -0.5, -1.0, 0.0]);
        assert_eq!(e.0, [0.5, -0.5, 0.0, 0.5]);
        assert_eq!(ActionEcho::from_action(&[0.0, 0.0, 1.0, 1.0]).0[2], 0.0);
    }

    #[test]
    fn reset_is_seeded() {
        let mut env = quiet_env();
        let a = env.reset(11);
        let b = env.reset(11);
        assert_eq!(a, b);
        assert_eq!(a[6], 1.0);
        let goal = env.goal_deg();
        assert!((advance_goal(env.robot().theta_deg(), 20.0) - goal).abs() < 1e-12);
    }

    #[test]
    fn reset_at_350_sets_goal_10() {
        let mut env = quiet_env();
        env.reset_at(350.0, 0);
        assert!((env.goal_deg() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn step_before_reset_errors() {
        let mut env = quiet_env();
        assert_eq!(env.step(&[0.0; 4]), Err(EnvError::NotReset));
    }

    #[test]
    fn out_of_box_action_rejected() {
        let mut env = quiet_env();
        env.reset(0);
        assert!(matches!(env.step(&[1.5, 0.0, 0.0, 0.0]), Err(EnvError::Action(_))));
    }

    #[test]
    fn zero_field_times_out_after_33_steps() {
        // zero magnitudes: no field, no motion
        let mut env = quiet_env();
        env.reset(3);
        for k in 1..=33 {
            let out = env.step(&[0.0, 0.0, 0.0, 0.0]).unwrap();
            assert_eq!(out.reward, 0.0);
            assert_eq!(out.done, k == 33, "step {k}");
            assert!(!out.goal_reached);
        }
        assert_eq!(env.steps_in_episode(), 0);
    }

    #[test]
    fn subobservation_positions_in_order() {
        let mut env = MicrorobotEnv::new(EpisodeConfig::default(), TurretModel::default(), SwimmerModel::default());
        env.reset_at(0.0, 5);
        let out = env.step(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        let obs = out.observation;
        let thetas: Vec<f64> = (0..3).map(|j| obs[j] * 360.0).collect();
        let mut unwrapped = 0.0;
        for (j, sub) in env.subobs.iter().enumerate() {
            unwrapped += sub.delta_theta_deg;
            assert!((thetas[j] - sub.theta_deg).abs() < 1e-9);
            assert!((unwrapped.rem_euclid(360.0) - sub.theta_deg).abs() < 1e-9);
        }
        assert!((out.reward - env.subobs.iter().map(|s| s.delta_theta_deg).sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn driving_forward_reaches_goal_with_bonus() {
        // at θ = 0 the tangent is -x; a y-only rotation drives it forward
        let mut env = quiet_env();
        env.reset_at(0.0, 0);
        let action = [0.0, 1.0, -1.0, -0.5];
        let mut done = false;
        let mut steps = 0;
        let mut total = 0.0;
        while !done {
            let out = env.step(&action).unwrap();
            total += out.reward;
            done = out.done;
            steps += 1;
            assert!(steps <= 33);
            if done {
                assert!(out.goal_reached);
                assert!(out.reward > 1000.0);
            }
        }
        assert!(total > 1020.0);
        let gap = (env.goal_deg() - env.robot().theta_deg()).rem_euclid(360.0);
        assert!((gap - 20.0).abs() < 1e-9);
    }

    #[test]
    fn toy_optimum() {
        let mut env = ToyReachEnv::new(1.0, 0.25, 20, 10.0);
        env.reset(0);
        let mut total = 0.0;
        loop {
            let out = env.step(&[1.0]).unwrap();
            total += out.reward;
            if out.done {
                break;
            }
        }
        assert!((total - env.optimal_return()).abs() < 1e-12);
        assert_eq!(env.observe(), vec![1.0, 1.0]);
    }

    #[test]
    fn toy_times_out() {
        let mut env = ToyReachEnv::default();
        env.reset(0);
        for k in 1..=20 {
            let out = env.step(&[0.0]).unwrap();
            assert_eq!(out.done, k == 20);
        }
    }
}
