//! Overdamped helical swimmer confined to a circular channel.
//!
//! The body follows the field rotation up to its step-out rate and converts
//! body rotation into translation along the channel tangent. Field evaluation
//! is quasi-static: the field is sampled at the position the robot occupies at
//! the start of each sub-step.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::magnetics::{
    orbit_position, rotation_summary, sample_field, CoilCommand, FieldRotation, MagneticsError, TurretModel, Vec3,
    DEFAULT_ORBIT_HEIGHT, DEFAULT_ORBIT_RADIUS,
};

/// Field samples taken per sub-step.
pub const FIELD_SAMPLES_PER_SUB_STEP: usize = 32;

pub const DEFAULT_SUB_STEP_DT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    theta_deg: f64,
    theta_unwrapped_deg: f64,
    moment_mag: f64,
}

impl RobotState {
    pub fn new(theta_deg: f64, moment_mag: f64) -> Self {
        assert!(moment_mag > 0.0, "moment magnitude must be positive");
        let theta = theta_deg.rem_euclid(360.0);
        Self { theta_deg: theta, theta_unwrapped_deg: theta, moment_mag }
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta_deg
    }

    pub fn theta_unwrapped_deg(&self) -> f64 {
        self.theta_unwrapped_deg
    }

    pub fn moment_mag(&self) -> f64 {
        self.moment_mag
    }

    pub fn moved_by(&self, delta_deg: f64) -> Self {
        let unwrapped = self.theta_unwrapped_deg + delta_deg;
        let mut theta = unwrapped.rem_euclid(360.0);
        if theta >= 360.0 {
            theta = 0.0;
        }
        Self { theta_deg: theta, theta_unwrapped_deg: unwrapped, moment_mag: self.moment_mag }
    }
}

/// Nominal magnetic moment of the simulated robot, A·m². Carried for torque
/// reporting; the channel dynamics couple to field rotation directly.
pub const DEFAULT_MOMENT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwimmerModel {
    pub channel_radius: f64,
    /// Forward travel per radian of body rotation, m/rad.
    pub propulsion_coeff: f64,
    /// Step-out rate per tesla of rotating amplitude, rad/s/T.
    pub stepout_coeff: f64,
    pub noise_sigma_deg: f64,
    pub orbit_height: f64,
}

/// Gives a step-out rate of 1.2 × 100 rad/s for the reference full-power
/// command (`mag_y = 1, phase_y = π/2`) at θ = 0 on the default turret.
pub const DEFAULT_STEPOUT_COEFF: f64 = 40_140.0;

impl Default for SwimmerModel {
    fn default() -> Self {
        Self {
            channel_radius: DEFAULT_ORBIT_RADIUS,
            propulsion_coeff: 1.6e-5,
            stepout_coeff: DEFAULT_STEPOUT_COEFF,
            noise_sigma_deg: 0.3,
            orbit_height: DEFAULT_ORBIT_HEIGHT,
        }
    }
}

impl SwimmerModel {
    pub fn noiseless(mut self) -> Self {
        self.noise_sigma_deg = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("channel_radius", self.channel_radius),
            ("propulsion_coeff", self.propulsion_coeff),
            ("stepout_coeff", self.stepout_coeff),
            ("orbit_height", self.orbit_height),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("swimmer.{name} must be positive, got {v}"));
            }
        }
        if !(self.noise_sigma_deg >= 0.0 && self.noise_sigma_deg.is_finite()) {
            return Err(format!("swimmer.noise_sigma_deg must be non-negative, got {}", self.noise_sigma_deg));
        }
        Ok(())
    }

    pub fn position(&self, theta_deg: f64) -> Vec3 {
        orbit_position(theta_deg, self.channel_radius, self.orbit_height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubObservation {
    pub theta_deg: f64,
    pub delta_theta_deg: f64,
    pub time_in_episode: u32,
}

/// Body rotation rate for a field rotating at `field_rate`.
pub fn step_out_limit(field_rate: f64, rotating_amplitude: f64, model: &SwimmerModel) -> f64 {
    let stepout = model.stepout_coeff * rotating_amplitude;
    if field_rate <= stepout {
        field_rate
    } else {
        stepout * stepout / field_rate
    }
}

/// Unit tangent of the channel at `theta_deg`, pointing toward increasing θ.
pub fn channel_tangent(theta_deg: f64) -> Vec3 {
    let th = theta_deg * PI / 180.0;
    Vec3::new(-th.cos(), -th.sin(), 0.0)
}

/// Angular displacement from one sub-step of rotation, without noise.
pub fn drift_deg(theta_deg: f64, rotation: &FieldRotation, dt: f64, model: &SwimmerModel) -> f64 {
    let body_rate = step_out_limit(rotation.rate, rotation.rotating_amplitude, model);
    let speed = model.propulsion_coeff * body_rate * rotation.axis.dot(&channel_tangent(theta_deg));
    (speed * dt / model.channel_radius).to_degrees()
}

pub fn advance<R: Rng + ?Sized>(
    state: &RobotState,
    rotation: &FieldRotation,
    dt: f64,
    model: &SwimmerModel,
    rng: &mut R,
) -> (RobotState, f64) {
    let mut delta = drift_deg(state.theta_deg, rotation, dt, model);
    if model.noise_sigma_deg > 0.0 {
        let noise = Normal::new(0.0, model.noise_sigma_deg).expect("finite sigma");
        delta += noise.sample(rng);
    }
    (state.moved_by(delta), delta)
}

/// Field rotation seen at the robot's current position over `[t0, t0 + dt]`.
pub fn rotation_over(
    state: &RobotState,
    cmd: &CoilCommand,
    t0: f64,
    dt: f64,
    turret: &TurretModel,
    model: &SwimmerModel,
) -> Result<FieldRotation, MagneticsError> {
    let position = model.position(state.theta_deg);
    let n = FIELD_SAMPLES_PER_SUB_STEP;
    let samples = (0..n)
        .map(|k| sample_field(cmd, &position, t0 + dt * k as f64 / (n - 1) as f64, turret))
        .collect::<Result<Vec<_>, _>>()?;
    rotation_summary(&samples)
}

pub fn sub_step<R: Rng + ?Sized>(
    state: &RobotState,
    cmd: &CoilCommand,
    t0: f64,
    dt: f64,
    turret: &TurretModel,
    model: &SwimmerModel,
    rng: &mut R,
) -> Result<(RobotState, SubObservation), MagneticsError> {
    let rotation = rotation_over(state, cmd, t0, dt, turret, model)?;
    let (next, delta) = advance(state, &rotation, dt, model, rng);
    Ok((next, SubObservation { theta_deg: next.theta_deg, delta_theta_deg: delta, time_in_episode: 0 }))
}
