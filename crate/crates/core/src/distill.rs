//! Closed-form controllers fitted to the fast actions of a trained policy.
//!
//! Each action dimension becomes a function of the robot angle alone: a
//! constant, a sinusoid, or a 50% duty square wave.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sac::EvalLog;

pub const DEFAULT_MIN_DELTA_DEG: f64 = 3.0;
pub const MIN_PERIODIC_SAMPLES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistillError {
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { got: usize, min: usize },
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error("no samples survived the harvest threshold")]
    EmptyHarvest,
    #[error("model spec lists {got} families for {expected} action dimensions")]
    SpecLength { got: usize, expected: usize },
    #[error("unknown model family {0:?}")]
    UnknownFamily(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSample {
    pub theta_deg: f64,
    pub action: Vec<f64>,
    pub delta_theta_deg: f64,
}

/// Keeps the steps whose progress reached `min_delta_deg`, in order.
pub fn harvest(log: &EvalLog, min_delta_deg: f64) -> Vec<ActionSample> {
    log.records
        .iter()
        .filter(|r| r.delta_theta_deg >= min_delta_deg)
        .map(|r| ActionSample { theta_deg: r.theta_deg.rem_euclid(360.0), action: r.action.clone(), delta_theta_deg: r.delta_theta_deg })
        .collect()
}

/// Rewrites each action so both coil magnitudes are non-negative.
///
/// `(−m, a)` and `(m, a ± 1)` drive identical currents, and a trained policy
/// is free to use either; a per-dimension fit over a mix of the two averages
/// them into something that drives neither.
pub fn canonicalize(samples: &mut [ActionSample]) {
    for s in samples {
        if s.action.len() < 4 {
            continue;
        }
        for (m, p) in [(0, 2), (1, 3)] {
            if s.action[m] < 0.0 {
                s.action[m] = -s.action[m];
                s.action[p] += if s.action[p] < 0.0 { 1.0 } else { -1.0 };
            }
        }
    }
}

/// Periodic fit `value ≈ amplitude·w(θ + phase) + offset`, with `θ` in
/// radians and `w` either `sin` or `sgn ∘ sin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicFit {
    pub amplitude: f64,
    /// Radians in [0, 2π).
    pub phase: f64,
    pub offset: f64,
    pub rmse: f64,
}

fn rmse_of<F: Fn(f64) -> f64>(samples: &[(f64, f64)], model: F) -> f64 {
    let ss: f64 = samples.iter().map(|&(t, v)| (v - model(t)).powi(2)).sum();
    (ss / samples.len() as f64).sqrt()
}

fn sine_model(fit: &PeriodicFit, theta_deg: f64) -> f64 {
    fit.offset + fit.amplitude * (theta_deg.to_radians() + fit.phase).sin()
}

fn square_wave(x: f64) -> f64 {
    if x.sin() >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn square_model(fit: &PeriodicFit, theta_deg: f64) -> f64 {
    fit.offset + fit.amplitude * square_wave(theta_deg.to_radians() + fit.phase)
}

fn check_count(n: usize, min: usize) -> Result<(), DistillError> {
    if n < min {
        return Err(DistillError::TooFewSamples { got: n, min });
    }
    Ok(())
}

/// Linear least squares on `p·sin θ + q·cos θ + c`, solved through an SVD of
/// the design matrix.
pub fn fit_sine(samples: &[(f64, f64)]) -> Result<PeriodicFit, DistillError> {
    check_count(samples.len(), MIN_PERIODIC_SAMPLES)?;
    let n = samples.len();
    let design = DMatrix::from_fn(n, 3, |i, j| {
        let th = samples[i].0.to_radians();
        match j {
            0 => th.sin(),
            1 => th.cos(),
            _ => 1.0,
        }
    });
    let values = DVector::from_iterator(n, samples.iter().map(|s| s.1));
    let svd = design.svd(true, true);
    let sv = &svd.singular_values;
    let largest = sv.max();
    if !(sv.min() > 1e-9 * largest) {
        return Err(DistillError::Degenerate("sine design matrix is rank deficient".into()));
    }
    let coef = svd.solve(&values, 0.0).map_err(|e| DistillError::Degenerate(e.to_string()))?;
    let (p, q, c) = (coef[0], coef[1], coef[2]);
    let mut fit = PeriodicFit { amplitude: p.hypot(q), phase: q.atan2(p).rem_euclid(TAU), offset: c, rmse: 0.0 };
    fit.rmse = rmse_of(samples, |t| sine_model(&fit, t));
    Ok(fit)
}

/// Best offset and amplitude for a fixed phase, from the per-half means.
fn square_at(samples: &[(f64, f64)], phase: f64) -> Option<PeriodicFit> {
    let (mut sp, mut np, mut sn, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for &(t, v) in samples {
        if square_wave(t.to_radians() + phase) > 0.0 {
            sp += v;
            np += 1;
        } else {
            sn += v;
            nn += 1;
        }
    }
    if np == 0 || nn == 0 {
        return None;
    }
    let (mp, mn) = (sp / np as f64, sn / nn as f64);
    let mut fit = PeriodicFit { amplitude: 0.5 * (mp - mn), phase, offset: 0.5 * (mp + mn), rmse: 0.0 };
    fit.rmse = rmse_of(samples, |t| square_model(&fit, t));
    Some(fit)
}

fn distinct_angles(samples: &[(f64, f64)]) -> bool {
    let first = samples[0].0.rem_euclid(360.0);
    samples.iter().any(|s| (s.0.rem_euclid(360.0) - first).abs() > 1e-9)
}

/// Grid search over the phase (1° then 0.1°), then centring the phase in the
/// interval of phases that induce the same split of the samples.
pub fn fit_square(samples: &[(f64, f64)]) -> Result<PeriodicFit, DistillError> {
    check_count(samples.len(), MIN_PERIODIC_SAMPLES)?;
    if !distinct_angles(samples) {
        return Err(DistillError::Degenerate("all samples share one angle".into()));
    }
    let better = |best: Option<PeriodicFit>, cand: Option<PeriodicFit>| match (best, cand) {
        (Some(b), Some(c)) if c.rmse < b.rmse => Some(c),
        (None, c) => c,
        (b, _) => b,
    };
    let mut best = None;
    for k in 0..360 {
        best = better(best, square_at(samples, (k as f64).to_radians()));
    }
    let coarse = best.ok_or_else(|| DistillError::Degenerate("no phase splits the samples".into()))?;
    let centre = coarse.phase.to_degrees();
    for k in -10..=10 {
        best = better(best, square_at(samples, (centre + 0.1 * k as f64).to_radians()));
    }
    let fine = best.expect("coarse fit exists");

    // the partition only changes where θ + phase crosses 0 or π
    let mut cuts: Vec<f64> = samples
        .iter()
        .flat_map(|s| {
            let t = s.0.to_radians();
            [(-t).rem_euclid(TAU), (PI - t).rem_euclid(TAU)]
        })
        .collect();
    cuts.sort_by(|a, b| a.total_cmp(b));
    let phase = fine.phase.rem_euclid(TAU);
    let upper = cuts.iter().copied().find(|&c| c > phase).unwrap_or(cuts[0] + TAU);
    let lower = cuts.iter().rev().copied().find(|&c| c <= phase).unwrap_or(cuts[cuts.len() - 1] - TAU);
    let mut fit = square_at(samples, 0.5 * (lower + upper)).filter(|c| c.rmse <= fine.rmse).unwrap_or(fine);
    if fit.amplitude < 0.0 {
        fit.amplitude = -fit.amplitude;
        fit.phase += PI;
    }
    fit.phase = fit.phase.rem_euclid(TAU);
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantFit {
    pub value: f64,
    pub rmse: f64,
}

/// Median of the values, which resists the tail of retrograde actions.
pub fn fit_constant(values: &[f64]) -> Result<ConstantFit, DistillError> {
    check_count(values.len(), 1)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let value = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let rmse = (values.iter().map(|v| (v - value).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(ConstantFit { value, rmse })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Constant,
    Sine,
    Square,
}

impl FromStr for Family {
    type Err = DistillError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "constant" | "const" => Ok(Family::Constant),
            "sine" | "sin" => Ok(Family::Sine),
            "square" => Ok(Family::Square),
            other => Err(DistillError::UnknownFamily(other.to_string())),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Constant => "constant",
            Family::Sine => "sine",
            Family::Square => "square",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// Lowest rmse of the three families, per dimension.
    Auto,
    Explicit(Vec<Family>),
}

impl FromStr for Selection {
    type Err = DistillError;

    /// `auto`, or a comma-separated family per dimension.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "auto" {
            return Ok(Selection::Auto);
        }
        s.split(',').map(Family::from_str).collect::<Result<Vec<_>, _>>().map(Selection::Explicit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum DimModel {
    Constant { value: f64, rmse: f64 },
    Sine { amplitude: f64, phase: f64, offset: f64, rmse: f64 },
    Square { amplitude: f64, phase: f64, offset: f64, rmse: f64 },
}

impl DimModel {
    pub fn family(&self) -> Family {
        match self {
            DimModel::Constant { .. } => Family::Constant,
            DimModel::Sine { .. } => Family::Sine,
            DimModel::Square { .. } => Family::Square,
        }
    }

    pub fn rmse(&self) -> f64 {
        match *self {
            DimModel::Constant { rmse, .. } | DimModel::Sine { rmse, .. } | DimModel::Square { rmse, .. } => rmse,
        }
    }

    /// Unclamped model value.
    pub fn eval(&self, theta_deg: f64) -> f64 {
        match *self {
            DimModel::Constant { value, .. } => value,
            DimModel::Sine { amplitude, phase, offset, rmse } => {
                sine_model(&PeriodicFit { amplitude, phase, offset, rmse }, theta_deg)
            }
            DimModel::Square { amplitude, phase, offset, rmse } => {
                square_model(&PeriodicFit { amplitude, phase, offset, rmse }, theta_deg)
            }
        }
    }

    fn fit(family: Family, samples: &[(f64, f64)]) -> Result<Self, DistillError> {
        Ok(match family {
            Family::Constant => {
                let values: Vec<f64> = samples.iter().map(|s| s.1).collect();
                let c = fit_constant(&values)?;
                DimModel::Constant { value: c.value, rmse: c.rmse }
            }
            Family::Sine => {
                let f = fit_sine(samples)?;
                DimModel::Sine { amplitude: f.amplitude, phase: f.phase, offset: f.offset, rmse: f.rmse }
            }
            Family::Square => {
                let f = fit_square(samples)?;
                DimModel::Square { amplitude: f.amplitude, phase: f.phase, offset: f.offset, rmse: f.rmse }
            }
        })
    }
}

/// One model per action dimension; inputs are the robot angle only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MathPolicy {
    pub dims: Vec<DimModel>,
}

pub fn build_math_policy(samples: &[ActionSample], selection: &Selection) -> Result<MathPolicy, DistillError> {
    if samples.is_empty() {
        return Err(DistillError::EmptyHarvest);
    }
    let n_dims = samples[0].action.len();
    if let Selection::Explicit(fams) = selection {
        if fams.len() != n_dims {
            return Err(DistillError::SpecLength { got: fams.len(), expected: n_dims });
        }
    }
    let mut dims = Vec::with_capacity(n_dims);
    for d in 0..n_dims {
        let column: Vec<(f64, f64)> = samples.iter().map(|s| (s.theta_deg, s.action[d])).collect();
        let model = match selection {
            Selection::Explicit(fams) => DimModel::fit(fams[d], &column)?,
            Selection::Auto => {
                let mut best = DimModel::fit(Family::Constant, &column)?;
                for fam in [Family::Sine, Family::Square] {
                    let cand = DimModel::fit(fam, &column)?;
                    if cand.rmse() < best.rmse() {
                        best = cand;
                    }
                }
                best
            }
        };
        dims.push(model);
    }
    Ok(MathPolicy { dims })
}

/// Action for the robot at `theta_deg`, each component clamped to [-1, 1].
pub fn math_policy_action(policy: &MathPolicy, theta_deg: f64) -> Vec<f64> {
    let theta = theta_deg.rem_euclid(360.0);
    policy.dims.iter().map(|m| m.eval(theta).clamp(-1.0, 1.0)).collect()
}
