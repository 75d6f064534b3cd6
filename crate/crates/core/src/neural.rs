//! Dense networks with hand-written reverse-mode gradients.
//!
//! Batches are row-major `(batch, features)` matrices. Every forward pass that
//! will be differentiated records a tape holding layer inputs, pre-activations
//! and dropout masks, so the backward pass sees exactly the masks the forward
//! pass used.

use std::f64::consts::PI;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::magnetics::{CoilCommand, MagneticsError};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Guards the log of the tanh Jacobian.
pub const SQUASH_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("input has {got} features, network expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("action component {index} = {value} outside [-1, 1]")]
    ActionOutOfRange { index: usize, value: f64 },
    #[error("action has {got} components, expected 4")]
    ActionLength { got: usize },
    #[error(transparent)]
    Command(#[from] MagneticsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn tag(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout masks drawn and applied with inverted scaling.
    Train,
    /// Deterministic; dropout disabled.
    Infer,
}

/// Anything that can be treated as a flat collection of parameters.
pub trait ParamSet: Clone {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;
    /// Same structure, every value zero.
    fn zeros_like(&self) -> Self;

    fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    fn scale(&mut self, k: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// `target ← τ·source + (1 − τ)·target`, elementwise.
pub fn polyak_average<P: ParamSet>(target: &mut P, source: &P, tau: f64) {
    for (t, s) in target.slices_mut().into_iter().zip(source.slices()) {
        for (tv, sv) in t.iter_mut().zip(s) {
            *tv = tau * sv + (1.0 - tau) * *tv;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(fan_in, fan_out)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct DenseTape {
    input: Array2<f64>,
    pre: Array2<f64>,
    mask: Option<Array2<f64>>,
}

impl Dense {
    /// Uniform ±√(6 / (fan_in + fan_out)) weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, activation: Activation, dropout: f64, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit));
        Self { weight, bias: Array1::zeros(fan_out), activation, dropout }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation, dropout: f64) -> Self {
        Self { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out), activation, dropout }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    fn affine(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight);
        z += &self.bias;
        z
    }

    fn activate(&self, z: &Array2<f64>) -> Array2<f64> {
        match self.activation {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Identity => z.clone(),
        }
    }

    fn draw_mask<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Option<Array2<f64>> {
        if self.dropout <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.dropout;
        let scale = 1.0 / keep;
        Some(Array2::from_shape_simple_fn((rows, self.fan_out()), || {
            if rng.random::<f64>() < keep {
                scale
            } else {
                0.0
            }
        }))
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &ArrayView2<f64>, mode: Mode, rng: &mut R) -> Array2<f64> {
        let mut h = self.activate(&self.affine(x));
        if mode == Mode::Train {
            if let Some(mask) = self.draw_mask(x.nrows(), rng) {
                h *= &mask;
            }
        }
        h
    }

    pub fn forward_tape<R: Rng + ?Sized>(&self, x: Array2<f64>, mode: Mode, rng: &mut R) -> (Array2<f64>, DenseTape) {
        let pre = self.affine(&x.view());
        let mut h = self.activate(&pre);
        let mask = if mode == Mode::Train { self.draw_mask(x.nrows(), rng) } else { None };
        if let Some(m) = &mask {
            h *= m;
        }
        (h, DenseTape { input: x, pre, mask })
    }

    /// Accumulates parameter gradients into `grad` (when given) and returns
    /// the gradient with respect to the layer input (when requested).
    pub fn backward(&self, tape: &DenseTape, mut d_out: Array2<f64>, grad: Option<&mut Dense>, need_input: bool) -> Option<Array2<f64>> {
        if let Some(m) = &tape.mask {
            d_out *= m;
        }
        if self.activation == Activation::Relu {
            Zip::from(&mut d_out).and(&tape.pre).for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        if let Some(g) = grad {
            g.weight += &tape.input.t().dot(&d_out);
            g.bias += &d_out.sum_axis(Axis(0));
        }
        need_input.then(|| d_out.dot(&self.weight.t()))
    }
}

impl ParamSet for Dense {
    fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }

    fn zeros_like(&self) -> Self {
        Dense::zeros(self.fan_in(), self.fan_out(), self.activation, self.dropout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct MlpTape {
    layers: Vec<DenseTape>,
}

impl Mlp {
    /// Hidden layers use ReLU and `dropout`; the output layer is linear with
    /// no dropout.
    pub fn glorot<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, dropout: f64, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input;
        for &h in hidden {
            layers.push(Dense::glorot(fan_in, h, Activation::Relu, dropout, rng));
            fan_in = h;
        }
        layers.push(Dense::glorot(fan_in, output, Activation::Identity, 0.0, rng));
        Self { layers }
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("non-empty network").fan_out()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), NeuralError> {
        if x.ncols() != self.input_len() {
            return Err(NeuralError::ShapeMismatch { expected: self.input_len(), got: x.ncols() });
        }
        Ok(())
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &ArrayView2<f64>, mode: Mode, rng: &mut R) -> Result<Array2<f64>, NeuralError> {
        self.check_input(x)?;
        let mut h = self.layers[0].forward(x, mode, rng);
        for layer in &self.layers[1..] {
            h = layer.forward(&h.view(), mode, rng);
        }
        Ok(h)
    }

    /// Inference-mode forward pass; needs no random stream.
    pub fn infer(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>, NeuralError> {
        self.check_input(x)?;
        let mut h = self.layers[0].activate(&self.layers[0].affine(x));
        for layer in &self.layers[1..] {
            h = layer.activate(&layer.affine(&h.view()));
        }
        Ok(h)
    }

    pub fn forward_tape<R: Rng + ?Sized>(&self, x: Array2<f64>, mode: Mode, rng: &mut R) -> Result<(Array2<f64>, MlpTape), NeuralError> {
        self.check_input(&x.view())?;
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for layer in &self.layers {
            let (out, tape) = layer.forward_tape(h, mode, rng);
            tapes.push(tape);
            h = out;
        }
        Ok((h, MlpTape { layers: tapes }))
    }

    pub fn backward(&self, tape: &MlpTape, d_out: Array2<f64>, mut grad: Option<&mut Mlp>, need_input: bool) -> Option<Array2<f64>> {
        let mut d = d_out;
        let n = self.layers.len();
        for k in (0..n).rev() {
            let g = grad.as_deref_mut().map(|g| &mut g.layers[k]);
            let want = k > 0 || need_input;
            match self.layers[k].backward(&tape.layers[k], d, g, want) {
                Some(next) => d = next,
                None => return None,
            }
        }
        Some(d)
    }

    /// Layer sizes, activations and dropout rates in one line, e.g.
    /// `21 256:relu:0.2 256:relu:0.2 8:identity:0`.
    pub fn describe(&self) -> String {
        let mut parts = vec![self.input_len().to_string()];
        for l in &self.layers {
            parts.push(format!("{}:{}:{}", l.fan_out(), l.activation.tag(), l.dropout));
        }
        parts.join(" ")
    }
}

impl ParamSet for Mlp {
    fn slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.slices()).collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.slices_mut()).collect()
    }

    fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| l.zeros_like()).collect() }
    }
}

/// Reverse-mode gradient of a scalar loss of the network output.
///
/// `loss` receives the batch output and returns the loss value and its
/// gradient with respect to that output.
pub fn gradient<R, F>(net: &Mlp, input: &Array2<f64>, mode: Mode, rng: &mut R, loss: F) -> Result<(f64, Mlp), NeuralError>
where
    R: Rng + ?Sized,
    F: FnOnce(&Array2<f64>) -> (f64, Array2<f64>),
{
    let (out, tape) = net.forward_tape(input.clone(), mode, rng)?;
    let (value, d_out) = loss(&out);
    let mut grad = net.zeros_like();
    net.backward(&tape, d_out, Some(&mut grad), false);
    Ok((value, grad))
}

/// Layer sizes shared by the actor and critics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkShape {
    pub actor_hidden: Vec<usize>,
    pub critic_branch: usize,
    pub critic_hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self { actor_hidden: vec![256, 256], critic_branch: 16, critic_hidden: vec![256, 256], dropout: 0.2 }
    }
}

/// Stochastic policy: the network emits per-dimension means followed by
/// per-dimension log standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: Mlp,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(obs_len: usize, action_len: usize, shape: &NetworkShape, rng: &mut R) -> Self {
        Self { net: Mlp::glorot(obs_len, &shape.actor_hidden, 2 * action_len, shape.dropout, rng) }
    }

    pub fn obs_len(&self) -> usize {
        self.net.input_len()
    }

    pub fn action_len(&self) -> usize {
        self.net.output_len() / 2
    }

    fn single_output(&self, state: &[f64]) -> Result<Array1<f64>, NeuralError> {
        let x = ArrayView2::from_shape((1, state.len()), state).expect("row vector");
        let out = self.net.infer(&x)?;
        Ok(out.row(0).to_owned())
    }
}

impl ParamSet for Actor {
    fn slices(&self) -> Vec<&[f64]> {
        self.net.slices()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.slices_mut()
    }

    fn zeros_like(&self) -> Self {
        Self { net: self.net.zeros_like() }
    }
}

/// Log density of a tanh-squashed Gaussian sample, given the standardized
/// pre-squash noise, the log standard deviation and the squashed action.
pub fn squashed_log_prob(noise: f64, log_std: f64, action: f64) -> f64 {
    -0.5 * noise * noise - log_std - 0.5 * (2.0 * PI).ln() - (1.0 - action * action + SQUASH_EPS).ln()
}

/// Samples `a = tanh(μ + σξ)` with its log density. Dropout is off.
pub fn policy_sample<R: Rng + ?Sized>(actor: &Actor, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64), NeuralError> {
    let out = actor.single_output(state)?;
    let n = actor.action_len();
    let mut action = Vec::with_capacity(n);
    let mut log_prob = 0.0;
    for d in 0..n {
        let mean = out[d];
        let log_std = out[n + d].clamp(LOG_STD_MIN, LOG_STD_MAX);
        let xi: f64 = StandardNormal.sample(rng);
        let a = (mean + log_std.exp() * xi).tanh();
        log_prob += squashed_log_prob(xi, log_std, a);
        action.push(a);
    }
    Ok((action, log_prob))
}

/// Deterministic action `tanh(μ(s))`.
pub fn policy_mean(actor: &Actor, state: &[f64]) -> Result<Vec<f64>, NeuralError> {
    let out = actor.single_output(state)?;
    Ok((0..actor.action_len()).map(|d| out[d].tanh()).collect())
}

/// Reparameterized batch of squashed-Gaussian samples, retaining what the
/// backward pass needs.
#[derive(Debug, Clone)]
pub struct SquashedBatch {
    pub actions: Array2<f64>,
    pub log_probs: Array1<f64>,
    noise: Array2<f64>,
    std: Array2<f64>,
    log_std_live: Array2<f64>,
}

impl SquashedBatch {
    /// `out` is the raw actor output `(batch, 2A)`; `noise` is `(batch, A)`.
    pub fn new(out: &Array2<f64>, noise: Array2<f64>) -> Self {
        let a_len = out.ncols() / 2;
        let mean = out.slice(s![.., ..a_len]);
        let raw = out.slice(s![.., a_len..]);
        let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let log_std_live = raw.mapv(|v| if v > LOG_STD_MIN && v < LOG_STD_MAX { 1.0 } else { 0.0 });
        let std = log_std.mapv(f64::exp);
        let actions = Zip::from(&mean).and(&std).and(&noise).map_collect(|&m, &sd, &xi| (m + sd * xi).tanh());
        let mut log_probs = Array1::zeros(out.nrows());
        for ((lp, ((xi, ls), a)), _) in log_probs
            .iter_mut()
            .zip(noise.rows().into_iter().zip(log_std.rows()).zip(actions.rows()))
            .zip(0..)
        {
            *lp = (0..a_len).map(|d| squashed_log_prob(xi[d], ls[d], a[d])).sum();
        }
        Self { actions, log_probs, noise, std, log_std_live }
    }

    /// Standard normal noise for a batch.
    pub fn draw_noise<R: Rng + ?Sized>(rows: usize, action_len: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, action_len), || StandardNormal.sample(rng))
    }

    /// Gradient with respect to the raw actor output, given loss gradients
    /// with respect to the actions and the log densities.
    pub fn backward(&self, d_actions: &Array2<f64>, d_log_probs: &Array1<f64>) -> Array2<f64> {
        let (rows, a_len) = self.actions.dim();
        let mut d_out = Array2::zeros((rows, 2 * a_len));
        for i in 0..rows {
            let dlp = d_log_probs[i];
            for d in 0..a_len {
                let a = self.actions[[i, d]];
                let jac = 1.0 - a * a;
                let squash = 2.0 * a * jac / (jac + SQUASH_EPS);
                let d_u = d_actions[[i, d]] * jac + dlp * squash;
                d_out[[i, d]] = d_u;
                let sigma_xi = self.std[[i, d]] * self.noise[[i, d]];
                d_out[[i, a_len + d]] = self.log_std_live[[i, d]] * (d_u * sigma_xi - dlp);
            }
        }
        d_out
    }
}

/// Twin-branch critic: state and action each pass through one ReLU layer,
/// the branches are concatenated, then a ReLU trunk ends in a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub state_branch: Dense,
    pub action_branch: Dense,
    pub trunk: Mlp,
}

#[derive(Debug, Clone)]
pub struct CriticTape {
    state: DenseTape,
    action: DenseTape,
    trunk: MlpTape,
    branch: usize,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(obs_len: usize, action_len: usize, shape: &NetworkShape, rng: &mut R) -> Self {
        let b = shape.critic_branch;
        Self {
            state_branch: Dense::glorot(obs_len, b, Activation::Relu, 0.0, rng),
            action_branch: Dense::glorot(action_len, b, Activation::Relu, 0.0, rng),
            trunk: Mlp::glorot(2 * b, &shape.critic_hidden, 1, shape.dropout, rng),
        }
    }

    pub fn obs_len(&self) -> usize {
        self.state_branch.fan_in()
    }

    pub fn action_len(&self) -> usize {
        self.action_branch.fan_in()
    }

    fn check(&self, s: &ArrayView2<f64>, a: &ArrayView2<f64>) -> Result<(), NeuralError> {
        if s.ncols() != self.obs_len() {
            return Err(NeuralError::ShapeMismatch { expected: self.obs_len(), got: s.ncols() });
        }
        if a.ncols() != self.action_len() {
            return Err(NeuralError::ShapeMismatch { expected: self.action_len(), got: a.ncols() });
        }
        Ok(())
    }

    pub fn forward<R: Rng + ?Sized>(&self, s: &ArrayView2<f64>, a: &ArrayView2<f64>, mode: Mode, rng: &mut R) -> Result<Array1<f64>, NeuralError> {
        self.check(s, a)?;
        let hs = self.state_branch.forward(s, mode, rng);
        let ha = self.action_branch.forward(a, mode, rng);
        let h = concatenate(Axis(1), &[hs.view(), ha.view()]).expect("matching rows");
        Ok(self.trunk.forward(&h.view(), mode, rng)?.column(0).to_owned())
    }

    pub fn infer(&self, s: &ArrayView2<f64>, a: &ArrayView2<f64>) -> Result<Array1<f64>, NeuralError> {
        self.check(s, a)?;
        let hs = self.state_branch.activate(&self.state_branch.affine(s));
        let ha = self.action_branch.activate(&self.action_branch.affine(a));
        let h = concatenate(Axis(1), &[hs.view(), ha.view()]).expect("matching rows");
        Ok(self.trunk.infer(&h.view())?.column(0).to_owned())
    }

    pub fn forward_tape<R: Rng + ?Sized>(
        &self,
        s: Array2<f64>,
        a: Array2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array1<f64>, CriticTape), NeuralError> {
        self.check(&s.view(), &a.view())?;
        let (hs, state) = self.state_branch.forward_tape(s, mode, rng);
        let (ha, action) = self.action_branch.forward_tape(a, mode, rng);
        let h = concatenate(Axis(1), &[hs.view(), ha.view()]).expect("matching rows");
        let (q, trunk) = self.trunk.forward_tape(h, mode, rng)?;
        Ok((q.column(0).to_owned(), CriticTape { state, action, trunk, branch: hs.ncols() }))
    }

    /// Backpropagates `d_q` (one entry per row). Returns the gradient with
    /// respect to the action input when `need_action` is set.
    pub fn backward(&self, tape: &CriticTape, d_q: &Array1<f64>, mut grad: Option<&mut Critic>, need_action: bool) -> Option<Array2<f64>> {
        let d_out = d_q.view().insert_axis(Axis(1)).to_owned();
        let need_branches = grad.is_some() || need_action;
        let trunk_grad = grad.as_deref_mut().map(|g| &mut g.trunk);
        let d_h = self.trunk.backward(&tape.trunk, d_out, trunk_grad, need_branches)?;
        let d_hs = d_h.slice(s![.., ..tape.branch]).to_owned();
        let d_ha = d_h.slice(s![.., tape.branch..]).to_owned();
        let (gs, ga) = match grad {
            Some(g) => (Some(&mut g.state_branch), Some(&mut g.action_branch)),
            None => (None, None),
        };
        if gs.is_some() {
            self.state_branch.backward(&tape.state, d_hs, gs, false);
        }
        self.action_branch.backward(&tape.action, d_ha, ga, need_action)
    }

    pub fn describe(&self) -> String {
        format!(
            "state {}->{} action {}->{} trunk {}",
            self.obs_len(),
            self.state_branch.fan_out(),
            self.action_len(),
            self.action_branch.fan_out(),
            self.trunk.describe()
        )
    }
}

impl ParamSet for Critic {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.state_branch.slices();
        v.extend(self.action_branch.slices());
        v.extend(self.trunk.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.state_branch.slices_mut();
        v.extend(self.action_branch.slices_mut());
        v.extend(self.trunk.slices_mut());
        v
    }

    fn zeros_like(&self) -> Self {
        Self {
            state_branch: self.state_branch.zeros_like(),
            action_branch: self.action_branch.zeros_like(),
            trunk: self.trunk.zeros_like(),
        }
    }
}

/// A single scalar parameter, used for the log temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scalar(pub f64);

impl ParamSet for Scalar {
    fn slices(&self) -> Vec<&[f64]> {
        vec![std::slice::from_ref(&self.0)]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![std::slice::from_mut(&mut self.0)]
    }

    fn zeros_like(&self) -> Self {
        Scalar(0.0)
    }
}

/// Adaptive-moment optimizer state for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<P: ParamSet> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub m: P,
    pub v: P,
}

impl<P: ParamSet> Adam<P> {
    pub fn new(params: &P, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn step(&mut self, params: &mut P, grads: &P) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let ps = params.slices_mut();
        let gs = grads.slices();
        let ms = self.m.slices_mut();
        let vs = self.v.slices_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Maps a policy action in [-1, 1]⁴ onto coil waveform parameters.
pub fn action_to_command(action: &[f64]) -> Result<CoilCommand, NeuralError> {
    if action.len() != 4 {
        return Err(NeuralError::ActionLength { got: action.len() });
    }
    for (index, &value) in action.iter().enumerate() {
        if !(-1.0..=1.0).contains(&value) {
            return Err(NeuralError::ActionOutOfRange { index, value });
        }
    }
    Ok(CoilCommand::new(action[0], action[1], (action[2] + 1.0) * PI, (action[3] + 1.0) * PI)?)
}
