//! Plain-text checkpoints.
//!
//! ```text
//! microswim-checkpoint 1
//! kind actor
//! meta step 5123
//! meta rolling_return 812.25
//! net actor 3
//! layer 21 256 relu 0.2
//! ...
//! tensor actor.0.weight 5376
//! <values, 17 significant digits, one row per line>
//! ...
//! end
//! ```
//!
//! Header lines come first; `net` declares a network by its layers and the
//! `tensor` blocks then fill its parameters in declaration order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::neural::{Activation, Actor, Critic, Dense, Mlp, NetworkShape, ParamSet, Scalar};
use crate::sac::{Agent, SacHyperparams};

pub const CHECKPOINT_FORMAT: &str = "microswim-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint or unsupported version: {0:?}")]
    Version(String),
    #[error("architecture mismatch: expected {expected}, found {found}")]
    Architecture { expected: String, found: String },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("malformed checkpoint at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    /// Actor parameters only.
    Actor,
    /// Every network, the temperature and all optimizer moments.
    Agent,
}

/// Metadata carried alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointMeta {
    pub entries: BTreeMap<String, String>,
}

impl CheckpointMeta {
    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCheckpoint {
    pub actor: Actor,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentCheckpoint {
    pub agent: Agent,
    pub meta: CheckpointMeta,
}

fn layer_spec(layer: &Dense) -> String {
    format!("layer {} {} {} {}", layer.fan_in(), layer.fan_out(), layer.activation.tag(), layer.dropout)
}

fn push_net(out: &mut String, name: &str, net: &Mlp) {
    let _ = writeln!(out, "net {name} {}", net.layers.len());
    for layer in &net.layers {
        let _ = writeln!(out, "{}", layer_spec(layer));
    }
}

fn push_tensor(out: &mut String, name: &str, cols: usize, values: &[f64]) {
    let _ = writeln!(out, "tensor {name} {}", values.len());
    for chunk in values.chunks(cols.max(1)) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

fn push_net_values(out: &mut String, name: &str, net: &Mlp) {
    for (i, layer) in net.layers.iter().enumerate() {
        push_tensor(out, &format!("{name}.{i}.weight"), layer.fan_out(), layer.weight.as_slice().expect("standard layout"));
        push_tensor(out, &format!("{name}.{i}.bias"), layer.fan_out(), layer.bias.as_slice().expect("standard layout"));
    }
}

fn single(layer: &Dense) -> Mlp {
    Mlp { layers: vec![layer.clone()] }
}

fn critic_nets(prefix: &str, c: &Critic) -> Vec<(String, Mlp)> {
    vec![
        (format!("{prefix}.state"), single(&c.state_branch)),
        (format!("{prefix}.action"), single(&c.action_branch)),
        (format!("{prefix}.trunk"), c.trunk.clone()),
    ]
}

fn header(kind: CheckpointKind, meta: &CheckpointMeta) -> String {
    let mut out = format!("{CHECKPOINT_FORMAT} {CHECKPOINT_VERSION}\n");
    let _ = writeln!(out, "kind {}", if kind == CheckpointKind::Actor { "actor" } else { "agent" });
    for (k, v) in &meta.entries {
        let _ = writeln!(out, "meta {k} {v}");
    }
    out
}

fn render(kind: CheckpointKind, meta: &CheckpointMeta, nets: &[(String, Mlp)], scalars: &[(String, f64)]) -> String {
    let mut out = header(kind, meta);
    for (name, net) in nets {
        push_net(&mut out, name, net);
    }
    for (name, value) in scalars {
        let _ = writeln!(out, "scalar {name} {value:.16e}");
    }
    for (name, net) in nets {
        push_net_values(&mut out, name, net);
    }
    out.push_str("end\n");
    out
}

pub fn actor_to_string(actor: &Actor, meta: &CheckpointMeta) -> String {
    render(CheckpointKind::Actor, meta, &[("actor".into(), actor.net.clone())], &[])
}

fn agent_nets(agent: &Agent) -> (Vec<(String, Mlp)>, Vec<(String, f64)>) {
    let mut nets = vec![("actor".to_string(), agent.actor.net.clone())];
    for (name, c) in [("critic1", &agent.critic1), ("critic2", &agent.critic2), ("target1", &agent.target1), ("target2", &agent.target2)] {
        nets.extend(critic_nets(name, c));
    }
    nets.push(("opt.actor.m".into(), agent.actor_opt.m.net.clone()));
    nets.push(("opt.actor.v".into(), agent.actor_opt.v.net.clone()));
    for (name, opt) in [("critic1", &agent.critic1_opt), ("critic2", &agent.critic2_opt)] {
        nets.extend(critic_nets(&format!("opt.{name}.m"), &opt.m));
        nets.extend(critic_nets(&format!("opt.{name}.v"), &opt.v));
    }
    let scalars = vec![
        ("log_alpha".to_string(), agent.log_alpha.0),
        ("opt.alpha.m".into(), agent.alpha_opt.m.0),
        ("opt.alpha.v".into(), agent.alpha_opt.v.0),
        ("opt.actor.steps".into(), agent.actor_opt.steps as f64),
        ("opt.critic1.steps".into(), agent.critic1_opt.steps as f64),
        ("opt.critic2.steps".into(), agent.critic2_opt.steps as f64),
        ("opt.alpha.steps".into(), agent.alpha_opt.steps as f64),
        ("opt.lr".into(), agent.actor_opt.lr),
        ("updates".into(), agent.updates as f64),
    ];
    (nets, scalars)
}

pub fn agent_to_string(agent: &Agent, meta: &CheckpointMeta) -> String {
    let (nets, scalars) = agent_nets(agent);
    render(CheckpointKind::Agent, meta, &nets, &scalars)
}

struct Parsed {
    kind: CheckpointKind,
    meta: CheckpointMeta,
    nets: Vec<(String, Mlp)>,
    scalars: BTreeMap<String, f64>,
}

fn malformed(line: usize, message: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed { line, message: message.into() }
}

fn parse(text: &str) -> Result<Parsed, CheckpointError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    let first = lines.next().map(|(_, l)| l).unwrap_or("");
    if first != format!("{CHECKPOINT_FORMAT} {CHECKPOINT_VERSION}") {
        return Err(CheckpointError::Version(first.to_string()));
    }
    let mut kind = None;
    let mut meta = CheckpointMeta::default();
    let mut nets: Vec<(String, Mlp)> = Vec::new();
    let mut scalars = BTreeMap::new();

    // header
    while let Some(&(n, line)) = lines.peek() {
        let mut words = line.split_whitespace();
        match words.next() {
            Some("kind") => {
                kind = Some(match words.next() {
                    Some("actor") => CheckpointKind::Actor,
                    Some("agent") => CheckpointKind::Agent,
                    other => return Err(malformed(n, format!("unknown kind {other:?}"))),
                });
            }
            Some("meta") => {
                let key = words.next().ok_or_else(|| malformed(n, "meta without key"))?;
                let value = line.splitn(3, ' ').nth(2).unwrap_or("");
                meta.entries.insert(key.to_string(), value.to_string());
            }
            Some("net") => {
                let name = words.next().ok_or_else(|| malformed(n, "net without name"))?;
                let count: usize = words.next().and_then(|w| w.parse().ok()).ok_or_else(|| malformed(n, "net without layer count"))?;
                lines.next();
                let mut layers = Vec::with_capacity(count);
                for _ in 0..count {
                    let (ln, spec) = lines.next().ok_or_else(|| CheckpointError::Truncated(format!("layers of {name}")))?;
                    layers.push(parse_layer(ln, spec)?);
                }
                nets.push((name.to_string(), Mlp { layers }));
                continue;
            }
            Some("scalar") => {
                let name = words.next().ok_or_else(|| malformed(n, "scalar without name"))?;
                let v: f64 = words.next().and_then(|w| w.parse().ok()).ok_or_else(|| malformed(n, "bad scalar"))?;
                scalars.insert(name.to_string(), v);
            }
            _ => break,
        }
        lines.next();
    }
    let kind = kind.ok_or_else(|| malformed(1, "missing kind"))?;

    // parameters
    for (name, net) in nets.iter_mut() {
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let w = read_tensor(&mut lines, &format!("{name}.{i}.weight"), layer.weight.len())?;
            layer.weight = Array2::from_shape_vec(layer.weight.raw_dim(), w).expect("length checked");
            let b = read_tensor(&mut lines, &format!("{name}.{i}.bias"), layer.bias.len())?;
            layer.bias = Array1::from_vec(b);
        }
    }
    match lines.next() {
        Some((_, "end")) => Ok(Parsed { kind, meta, nets, scalars }),
        Some((n, other)) => Err(malformed(n, format!("expected end, found {other:?}"))),
        None => Err(CheckpointError::Truncated("missing end marker".into())),
    }
}

fn parse_layer(n: usize, spec: &str) -> Result<Dense, CheckpointError> {
    let w: Vec<&str> = spec.split_whitespace().collect();
    if w.len() != 5 || w[0] != "layer" {
        return Err(malformed(n, format!("bad layer line {spec:?}")));
    }
    let fan_in: usize = w[1].parse().map_err(|_| malformed(n, "bad fan-in"))?;
    let fan_out: usize = w[2].parse().map_err(|_| malformed(n, "bad fan-out"))?;
    let act = Activation::from_tag(w[3]).ok_or_else(|| malformed(n, format!("unknown activation {}", w[3])))?;
    let dropout: f64 = w[4].parse().map_err(|_| malformed(n, "bad dropout"))?;
    Ok(Dense::zeros(fan_in, fan_out, act, dropout))
}

fn read_tensor<'a, I>(lines: &mut std::iter::Peekable<I>, name: &str, len: usize) -> Result<Vec<f64>, CheckpointError>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    let (n, head) = lines.next().ok_or_else(|| CheckpointError::Truncated(format!("tensor {name} missing")))?;
    let expected = format!("tensor {name} {len}");
    if head != expected {
        return Err(malformed(n, format!("expected {expected:?}, found {head:?}")));
    }
    let mut values = Vec::with_capacity(len);
    while values.len() < len {
        let (n, line) = lines.next().ok_or_else(|| CheckpointError::Truncated(format!("tensor {name} ends early")))?;
        if line.starts_with("tensor") || line == "end" {
            return Err(CheckpointError::Truncated(format!("tensor {name} ends early at line {n}")));
        }
        for word in line.split_whitespace() {
            values.push(word.parse().map_err(|_| malformed(n, format!("bad number {word:?}")))?);
        }
    }
    if values.len() != len {
        return Err(malformed(n, format!("tensor {name} has {} values, expected {len}", values.len())));
    }
    Ok(values)
}

fn take_net(nets: &mut Vec<(String, Mlp)>, name: &str) -> Result<Mlp, CheckpointError> {
    let idx = nets.iter().position(|(n, _)| n == name).ok_or_else(|| malformed(1, format!("network {name} missing")))?;
    Ok(nets.remove(idx).1)
}

fn take_critic(nets: &mut Vec<(String, Mlp)>, prefix: &str) -> Result<Critic, CheckpointError> {
    let mut state = take_net(nets, &format!("{prefix}.state"))?;
    let mut action = take_net(nets, &format!("{prefix}.action"))?;
    let trunk = take_net(nets, &format!("{prefix}.trunk"))?;
    Ok(Critic { state_branch: state.layers.remove(0), action_branch: action.layers.remove(0), trunk })
}

fn scalar(scalars: &BTreeMap<String, f64>, name: &str) -> Result<f64, CheckpointError> {
    scalars.get(name).copied().ok_or_else(|| malformed(1, format!("scalar {name} missing")))
}

/// Reads the actor from either checkpoint kind.
pub fn actor_from_str(text: &str) -> Result<ActorCheckpoint, CheckpointError> {
    let mut p = parse(text)?;
    let net = take_net(&mut p.nets, "actor")?;
    Ok(ActorCheckpoint { actor: Actor { net }, meta: p.meta })
}

pub fn agent_from_str(text: &str) -> Result<AgentCheckpoint, CheckpointError> {
    let mut p = parse(text)?;
    if p.kind != CheckpointKind::Agent {
        return Err(CheckpointError::Architecture { expected: "full agent checkpoint".into(), found: "actor-only checkpoint".into() });
    }
    let actor = Actor { net: take_net(&mut p.nets, "actor")? };
    let critic1 = take_critic(&mut p.nets, "critic1")?;
    let critic2 = take_critic(&mut p.nets, "critic2")?;
    let target1 = take_critic(&mut p.nets, "target1")?;
    let target2 = take_critic(&mut p.nets, "target2")?;
    let lr = scalar(&p.scalars, "opt.lr")?;
    let hp = SacHyperparams { lr, initial_alpha: scalar(&p.scalars, "log_alpha")?.exp(), ..SacHyperparams::default() };
    let mut agent = Agent::from_parts(actor, critic1, critic2, &hp);
    agent.target1 = target1;
    agent.target2 = target2;
    agent.log_alpha = Scalar(scalar(&p.scalars, "log_alpha")?);
    agent.actor_opt.m = Actor { net: take_net(&mut p.nets, "opt.actor.m")? };
    agent.actor_opt.v = Actor { net: take_net(&mut p.nets, "opt.actor.v")? };
    agent.critic1_opt.m = take_critic(&mut p.nets, "opt.critic1.m")?;
    agent.critic1_opt.v = take_critic(&mut p.nets, "opt.critic1.v")?;
    agent.critic2_opt.m = take_critic(&mut p.nets, "opt.critic2.m")?;
    agent.critic2_opt.v = take_critic(&mut p.nets, "opt.critic2.v")?;
    agent.alpha_opt.m = Scalar(scalar(&p.scalars, "opt.alpha.m")?);
    agent.alpha_opt.v = Scalar(scalar(&p.scalars, "opt.alpha.v")?);
    agent.actor_opt.steps = scalar(&p.scalars, "opt.actor.steps")? as u64;
    agent.critic1_opt.steps = scalar(&p.scalars, "opt.critic1.steps")? as u64;
    agent.critic2_opt.steps = scalar(&p.scalars, "opt.critic2.steps")? as u64;
    agent.alpha_opt.steps = scalar(&p.scalars, "opt.alpha.steps")? as u64;
    agent.updates = scalar(&p.scalars, "updates")? as u64;
    Ok(AgentCheckpoint { agent, meta: p.meta })
}

/// The architecture an actor built from `shape` would have.
pub fn expected_actor_layout(obs_len: usize, action_len: usize, shape: &NetworkShape) -> String {
    let mut dims = vec![obs_len];
    dims.extend(&shape.actor_hidden);
    dims.push(2 * action_len);
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("-")
}

pub fn actor_layout(actor: &Actor) -> String {
    let mut dims = vec![actor.net.input_len()];
    dims.extend(actor.net.layers.iter().map(|l| l.fan_out()));
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("-")
}

pub fn check_actor_layout(actor: &Actor, obs_len: usize, action_len: usize, shape: &NetworkShape) -> Result<(), CheckpointError> {
    let expected = expected_actor_layout(obs_len, action_len, shape);
    let found = actor_layout(actor);
    if expected != found {
        return Err(CheckpointError::Architecture { expected, found });
    }
    Ok(())
}

pub fn save_actor(path: &Path, actor: &Actor, meta: &CheckpointMeta) -> Result<(), CheckpointError> {
    std::fs::write(path, actor_to_string(actor, meta))?;
    Ok(())
}

pub fn save_agent(path: &Path, agent: &Agent, meta: &CheckpointMeta) -> Result<(), CheckpointError> {
    std::fs::write(path, agent_to_string(agent, meta))?;
    Ok(())
}

pub fn load_actor(path: &Path) -> Result<ActorCheckpoint, CheckpointError> {
    actor_from_str(&std::fs::read_to_string(path)?)
}

pub fn load_agent(path: &Path) -> Result<AgentCheckpoint, CheckpointError> {
    agent_from_str(&std::fs::read_to_string(path)?)
}

/// Bit patterns of every parameter, for exact comparisons.
pub fn param_bits<P: ParamSet>(p: &P) -> Vec<u64> {
    p.flat().iter().map(|v| v.to_bits()).collect()
}
