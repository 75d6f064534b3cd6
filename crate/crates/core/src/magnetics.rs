//! Three-axis electromagnet model.
//!
//! Each coil pair is collapsed to a point dipole at the turret center. Coil
//! currents are normalized to [-1, 1] and pass through a soft tanh knee that
//! stands in for permalloy core saturation before being scaled into a dipole
//! moment.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// μ0 / 4π in T·m/A.
pub const MU0_OVER_4PI: f64 = 1e-7;

/// Angular drive frequency shared by all three coils, rad/s.
pub const DRIVE_OMEGA: f64 = 100.0;

/// Field points closer than this to a dipole are rejected.
pub const SINGULARITY_RADIUS: f64 = 1e-6;

/// Spatial step for the finite-difference force.
pub const FORCE_STEP: f64 = 1e-5;

pub const MIN_ROTATION_SAMPLES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MagneticsError {
    #[error("field point is {distance:e} m from a dipole, inside the singularity radius")]
    Singularity { distance: f64 },
    #[error("rotation summary needs at least {min} samples, got {got}")]
    InsufficientSampling { got: usize, min: usize },
    #[error("coil magnitude {value} outside [-1, 1]")]
    MagnitudeOutOfRange { value: f64 },
    #[error("non-finite coil command component")]
    NonFinite,
}

/// Waveform parameters for one action.
///
/// Only `mag_x`, `mag_y`, `phase_x` and `phase_y` are free; the Z terms and the
/// drive frequency are derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoilCommand {
    mag_x: f64,
    mag_y: f64,
    phase_x: f64,
    phase_y: f64,
    mag_z: f64,
}

impl CoilCommand {
    pub fn new(mag_x: f64, mag_y: f64, phase_x: f64, phase_y: f64) -> Result<Self, MagneticsError> {
        if ![mag_x, mag_y, phase_x, phase_y].iter().all(|v| v.is_finite()) {
            return Err(MagneticsError::NonFinite);
        }
        for m in [mag_x, mag_y] {
            if !(-1.0..=1.0).contains(&m) {
                return Err(MagneticsError::MagnitudeOutOfRange { value: m });
            }
        }
        Ok(Self {
            mag_x,
            mag_y,
            phase_x: normalize_phase(phase_x),
            phase_y: normalize_phase(phase_y),
            mag_z: mag_x.abs().max(mag_y.abs()),
        })
    }

    pub fn zero() -> Self {
        Self { mag_x: 0.0, mag_y: 0.0, phase_x: 0.0, phase_y: 0.0, mag_z: 0.0 }
    }

    pub fn mag_x(&self) -> f64 {
        self.mag_x
    }

    pub fn mag_y(&self) -> f64 {
        self.mag_y
    }

    pub fn mag_z(&self) -> f64 {
        self.mag_z
    }

    pub fn phase_x(&self) -> f64 {
        self.phase_x
    }

    pub fn phase_y(&self) -> f64 {
        self.phase_y
    }

    pub fn phase_z(&self) -> f64 {
        0.0
    }

    pub fn omega(&self) -> f64 {
        DRIVE_OMEGA
    }
}

/// Maps any angle into [0, 2π).
pub fn normalize_phase(phase: f64) -> f64 {
    let p = phase.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if p >= TAU {
        0.0
    } else {
        p
    }
}

/// Normalized coil currents at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CurrentTriple {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CurrentTriple {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl std::ops::Add for CurrentTriple {
    type Output = CurrentTriple;

    fn add(self, rhs: CurrentTriple) -> CurrentTriple {
        CurrentTriple::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

pub fn waveform_currents(cmd: &CoilCommand, t: f64) -> CurrentTriple {
    let wt = cmd.omega() * t;
    CurrentTriple {
        x: cmd.mag_x * (wt + cmd.phase_x).sin(),
        y: cmd.mag_y * (wt + cmd.phase_y).sin(),
        z: cmd.mag_z * wt.sin(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurretModel {
    /// Dipole moment per unit of saturated normalized current, A·m².
    pub dipole_gain: f64,
    /// Knee of the tanh saturation. `f64::INFINITY` disables saturation.
    pub saturation_knee: f64,
    pub dipole_positions: [Vec3; 3],
    pub dipole_axes: [Vec3; 3],
}

/// Default saturation knee in normalized current.
pub const DEFAULT_SATURATION_KNEE: f64 = 0.8;
/// Field magnitude the default gain produces at the reference orbit point.
pub const DEFAULT_ORBIT_FIELD: f64 = 5e-3;
/// Orbit radius of the channel centerline, m.
pub const DEFAULT_ORBIT_RADIUS: f64 = 16.25e-3;
/// Height of the channel plane above the turret center, m.
pub const DEFAULT_ORBIT_HEIGHT: f64 = 30e-3;

impl Default for TurretModel {
    fn default() -> Self {
        let reference = orbit_position(0.0, DEFAULT_ORBIT_RADIUS, DEFAULT_ORBIT_HEIGHT);
        Self::calibrated(DEFAULT_ORBIT_FIELD, &reference, DEFAULT_SATURATION_KNEE)
    }
}

impl TurretModel {
    /// Orthonormal dipoles at the origin with gain chosen so that the Z coil at
    /// full current gives `field` tesla at `reference`.
    pub fn calibrated(field: f64, reference: &Vec3, saturation_knee: f64) -> Self {
        let mut model = Self {
            dipole_gain: 1.0,
            saturation_knee,
            dipole_positions: [Vec3::zeros(); 3],
            dipole_axes: [Vec3::x(), Vec3::y(), Vec3::z()],
        };
        let unit = model.saturate(1.0);
        let b = dipole_field(&(Vec3::z() * unit), reference).expect("reference point away from origin");
        model.dipole_gain = field / b.norm();
        model
    }

    pub fn linear(mut self) -> Self {
        self.saturation_knee = f64::INFINITY;
        self
    }

    /// Soft saturation `knee * tanh(x / knee)`; identity when the knee is infinite.
    pub fn saturate(&self, x: f64) -> f64 {
        if self.saturation_knee.is_infinite() {
            x
        } else {
            self.saturation_knee * (x / self.saturation_knee).tanh()
        }
    }

    pub fn axes_orthonormal(&self) -> bool {
        let a = &self.dipole_axes;
        (0..3).all(|i| (a[i].norm() - 1.0).abs() < 1e-12)
            && a[0].dot(&a[1]).abs() < 1e-12
            && a[0].dot(&a[2]).abs() < 1e-12
            && a[1].dot(&a[2]).abs() < 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub b: Vec3,
    pub position: Vec3,
    pub time: f64,
}

/// Point-dipole field `(μ0/4π)(3(m·r̂)r̂ − m)/|r|³`.
pub fn dipole_field(moment: &Vec3, r: &Vec3) -> Result<Vec3, MagneticsError> {
    let dist = r.norm();
    if !(dist >= SINGULARITY_RADIUS) {
        return Err(MagneticsError::Singularity { distance: dist });
    }
    let r_hat = r / dist;
    let b = (r_hat * (3.0 * moment.dot(&r_hat)) - moment) * (MU0_OVER_4PI / (dist * dist * dist));
    Ok(b)
}

/// Superposed field of the three coils. The returned sample has `time = 0`;
/// see [`sample_field`] for a time-stamped version.
pub fn field_at(position: &Vec3, currents: &CurrentTriple, model: &TurretModel) -> Result<FieldSample, MagneticsError> {
    let mut b = Vec3::zeros();
    for ((pos, axis), i) in model.dipole_positions.iter().zip(&model.dipole_axes).zip(currents.as_array()) {
        let moment = axis * (model.dipole_gain * model.saturate(i));
        b += dipole_field(&moment, &(position - pos))?;
    }
    Ok(FieldSample { b, position: *position, time: 0.0 })
}

pub fn sample_field(cmd: &CoilCommand, position: &Vec3, t: f64, model: &TurretModel) -> Result<FieldSample, MagneticsError> {
    let currents = waveform_currents(cmd, t);
    let mut s = field_at(position, &currents, model)?;
    s.time = t;
    Ok(s)
}

/// `∇(m·B)` by central differences of an arbitrary field function.
pub fn force_from_field<F>(moment: &Vec3, position: &Vec3, step: f64, mut field: F) -> Result<Vec3, MagneticsError>
where
    F: FnMut(&Vec3) -> Result<Vec3, MagneticsError>,
{
    let mut f = Vec3::zeros();
    for k in 0..3 {
        let mut dp = Vec3::zeros();
        dp[k] = step;
        let plus = moment.dot(&field(&(position + dp))?);
        let minus = moment.dot(&field(&(position - dp))?);
        f[k] = (plus - minus) / (2.0 * step);
    }
    Ok(f)
}

pub fn force_on(m_robot: &Vec3, position: &Vec3, currents: &CurrentTriple, model: &TurretModel) -> Result<Vec3, MagneticsError> {
    force_from_field(m_robot, position, FORCE_STEP, |p| field_at(p, currents, model).map(|s| s.b))
}

pub fn torque_on(m_robot: &Vec3, b: &Vec3) -> Vec3 {
    m_robot.cross(b)
}

/// Net rotation of a sampled field trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldRotation {
    /// Unit rotation axis, or zero when the trace does not rotate.
    pub axis: Vec3,
    /// Mean angular rate about `axis`, rad/s.
    pub rate: f64,
    /// Minor semi-axis of the best-fit ellipse of the projected trace, T.
    pub rotating_amplitude: f64,
}

impl FieldRotation {
    pub fn none() -> Self {
        Self { axis: Vec3::zeros(), rate: 0.0, rotating_amplitude: 0.0 }
    }
}

const DEGENERACY_RATIO: f64 = 1e-9;

pub fn rotation_summary(samples: &[FieldSample]) -> Result<FieldRotation, MagneticsError> {
    if samples.len() < MIN_ROTATION_SAMPLES {
        return Err(MagneticsError::InsufficientSampling { got: samples.len(), min: MIN_ROTATION_SAMPLES });
    }
    let mut swept = Vec3::zeros();
    let mut scale = 0.0;
    for w in samples.windows(2) {
        swept += w[0].b.cross(&w[1].b);
        scale += w[0].b.norm() * w[1].b.norm();
    }
    let swept_norm = swept.norm();
    if scale == 0.0 || swept_norm <= DEGENERACY_RATIO * scale {
        return Ok(FieldRotation::none());
    }
    let axis = swept / swept_norm;

    // (e1, e2, axis) is right handed, so positive rotation about the axis runs e1 -> e2
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (helper - axis * axis.dot(&helper)).normalize();
    let e2 = axis.cross(&e1);
    let projected: Vec<[f64; 2]> = samples.iter().map(|s| [s.b.dot(&e1), s.b.dot(&e2)]).collect();

    let mut angle = 0.0;
    for w in projected.windows(2) {
        let cross = w[0][0] * w[1][1] - w[0][1] * w[1][0];
        let dot = w[0][0] * w[1][0] + w[0][1] * w[1][1];
        if cross != 0.0 || dot != 0.0 {
            angle += cross.abs().atan2(dot);
        }
    }
    let duration = samples[samples.len() - 1].time - samples[0].time;
    let rate = if duration > 0.0 { angle / duration } else { 0.0 };

    let times: Vec<f64> = samples.iter().map(|s| s.time - samples[0].time).collect();
    let rotating_amplitude = minor_semi_axis(&times, &projected, rate);
    Ok(FieldRotation { axis, rate, rotating_amplitude })
}

/// Minor semi-axis of the ellipse `c + a cos ωt + b sin ωt` fitted to a planar
/// trace. The frequency is searched around `rate_guess`; traces covering less
/// than one revolution fall back to the second-moment estimate.
fn minor_semi_axis(times: &[f64], points: &[[f64; 2]], rate_guess: f64) -> f64 {
    let duration = times[times.len() - 1];
    if !(rate_guess * duration >= TAU) {
        return second_moment_minor_axis(points);
    }
    let residual = |omega: f64| harmonic_fit(times, points, omega).map(|f| f.0).unwrap_or(f64::INFINITY);

    // coarse scan then golden-section polish around the best grid point
    let lo = 0.8 * rate_guess;
    let hi = 1.2 * rate_guess;
    let n = 80;
    let grid_step = (hi - lo) / n as f64;
    let mut best = (residual(rate_guess), rate_guess);
    for k in 0..=n {
        let w = lo + grid_step * k as f64;
        let r = residual(w);
        if r < best.0 {
            best = (r, w);
        }
    }
    let (mut a, mut b) = (best.1 - grid_step, best.1 + grid_step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (residual(c), residual(d));
    for _ in 0..40 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = residual(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = residual(d);
        }
    }
    let polished = if fc < fd { (fc, c) } else { (fd, d) };
    let omega = if polished.0 < best.0 { polished.1 } else { best.1 };
    match harmonic_fit(times, points, omega) {
        Some((_, m)) => {
            let sv = m.singular_values();
            sv[0].min(sv[1])
        }
        None => second_moment_minor_axis(points),
    }
}

/// Least-squares fit of `c + a cos ωt + b sin ωt` to both coordinates.
/// Returns the residual sum of squares and the 2×2 matrix `[a b]`.
fn harmonic_fit(times: &[f64], points: &[[f64; 2]], omega: f64) -> Option<(f64, nalgebra::Matrix2<f64>)> {
    let mut ata = Matrix3::<f64>::zeros();
    let mut atx = Vector3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for (t, p) in times.iter().zip(points) {
        let row = Vector3::new(1.0, (omega * t).cos(), (omega * t).sin());
        ata += row * row.transpose();
        atx += row * p[0];
        aty += row * p[1];
    }
    let chol = ata.cholesky()?;
    let cx = chol.solve(&atx);
    let cy = chol.solve(&aty);
    let mut rss = 0.0;
    for (t, p) in times.iter().zip(points) {
        let (c, s) = ((omega * t).cos(), (omega * t).sin());
        let ex = p[0] - (cx[0] + cx[1] * c + cx[2] * s);
        let ey = p[1] - (cy[0] + cy[1] * c + cy[2] * s);
        rss += ex * ex + ey * ey;
    }
    Some((rss, nalgebra::Matrix2::new(cx[1], cx[2], cy[1], cy[2])))
}

fn second_moment_minor_axis(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p[0] / n, acc.1 + p[1] / n));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx / n;
        syy += dy * dy / n;
        sxy += dx * dy / n;
    }
    let tr = sxx + syy;
    let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    let lambda_min = (0.5 * (tr - disc)).max(0.0);
    (2.0 * lambda_min).sqrt()
}

/// Robot position on the channel centerline at angle `theta_deg`. The angle
/// is measured from the +y axis and increases counterclockwise seen from +z.
pub fn orbit_position(theta_deg: f64, radius: f64, height: f64) -> Vec3 {
    let th = theta_deg * PI / 180.0;
    Vec3::new(-radius * th.sin(), radius * th.cos(), height)
}
