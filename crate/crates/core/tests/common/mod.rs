#![allow(dead_code)]

use microswim::neural::{Actor, Critic, NetworkShape, ParamSet, Scalar, SquashedBatch};
use microswim::sac::{actor_loss_grad, critic_loss_grad, rng_stream, temperature_loss_grad};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const FD_SEEDS: u64 = 20;

pub fn reduced_shape() -> NetworkShape {
    NetworkShape { actor_hidden: vec![16, 16], critic_branch: 8, critic_hidden: vec![16, 16], dropout: 0.2 }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `loss` over every parameter of `p`.
pub fn numeric_gradient<P: ParamSet>(p: &P, mut loss: impl FnMut(&P) -> f64) -> Vec<f64> {
    let mut probe = p.clone();
    let mut out = Vec::with_capacity(p.num_params());
    for si in 0..p.slices().len() {
        for j in 0..p.slices()[si].len() {
            let orig = p.slices()[si][j];
            probe.slices_mut()[si][j] = orig + FD_EPS;
            let up = loss(&probe);
            probe.slices_mut()[si][j] = orig - FD_EPS;
            let down = loss(&probe);
            probe.slices_mut()[si][j] = orig;
            out.push((up - down) / (2.0 * FD_EPS));
        }
    }
    out
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0) * scale)
}

/// Relative gradient errors for the two critic losses, the actor loss and
/// the temperature loss at one random draw.
#[derive(Debug, Clone, Copy)]
pub struct GradientErrors {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub temperature: f64,
}

impl GradientErrors {
    pub fn max(&self) -> f64 {
        self.critic1.max(self.critic2).max(self.actor).max(self.temperature)
    }
}

pub fn gradient_errors(seed: u64) -> GradientErrors {
    let (obs, act, n) = (21, 4, 6);
    let shape = reduced_shape();
    let mut init = rng_stream(seed, 4);
    let actor = Actor::new(obs, act, &shape, &mut init);
    let critic1 = Critic::new(obs, act, &shape, &mut init);
    let critic2 = Critic::new(obs, act, &shape, &mut init);
    let mut data = rng_stream(seed, 100);
    let s = normal_matrix(&mut data, n, obs, 1.0);
    let a = normal_matrix(&mut data, n, act, 0.9);
    let y = Array1::from_shape_simple_fn(n, || data.random_range(-5.0..5.0));
    let noise = SquashedBatch::draw_noise(n, act, &mut data);
    let alpha = data.random_range(0.05..2.0);
    let dropout_seed = seed + 1000;

    let critic_error = |critic: &Critic| {
        let (_, g) = critic_loss_grad(critic, &s, &a, &y, &mut rng_stream(dropout_seed, 2)).unwrap();
        let numeric = numeric_gradient(critic, |c| critic_loss_grad(c, &s, &a, &y, &mut rng_stream(dropout_seed, 2)).unwrap().0);
        relative_error(&g.flat(), &numeric)
    };

    let actor_loss = |p: &Actor| actor_loss_grad(p, &critic1, &critic2, alpha, &s, noise.clone(), &mut rng_stream(dropout_seed, 2)).unwrap();
    let (_, ga, log_probs) = actor_loss(&actor);
    let actor_numeric = numeric_gradient(&actor, |p| actor_loss(p).0);

    let target_entropy = -(act as f64);
    let log_alpha = Scalar(alpha.ln());
    let (_, gt) = temperature_loss_grad(log_alpha, &log_probs, target_entropy);
    let t_numeric = numeric_gradient(&log_alpha, |la| temperature_loss_grad(*la, &log_probs, target_entropy).0);

    GradientErrors {
        critic1: critic_error(&critic1),
        critic2: critic_error(&critic2),
        actor: relative_error(&ga.flat(), &actor_numeric),
        temperature: relative_error(&gt.flat(), &t_numeric),
    }
}
