//! Metrics CSV, transition JSONL, evaluation logs and the math-policy file.
//! Every file opens with a line naming its format and version.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::{DimModel, MathPolicy};
use crate::sac::{BestSnapshot, EvalLog, EvalRecord, MetricsRow, StepRecord, TrainObserver};

pub const METRICS_VERSION: u32 = 1;
pub const TRANSITIONS_VERSION: u32 = 1;
pub const EVAL_VERSION: u32 = 1;
pub const MATH_POLICY_VERSION: u32 = 1;

const METRICS_TAG: &str = "# microswim-metrics";
const EVAL_TAG: &str = "# microswim-eval";
const TRANSITIONS_FORMAT: &str = "microswim-transitions";

pub const METRICS_HEADER: &str =
    "step,episode,episode_return,rolling_return_100,alpha,critic_loss,actor_loss,temperature_loss,mean_velocity_recent";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported {format} version line {found:?}")]
    Version { format: &'static str, found: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

fn version_line(tag: &str, version: u32) -> String {
    format!("{tag} v{version}")
}

fn check_version(format: &'static str, expected: &str, found: Option<&str>) -> Result<(), LogError> {
    match found {
        Some(line) if line == expected => Ok(()),
        other => Err(LogError::Version { format, found: other.unwrap_or("").to_string() }),
    }
}

pub fn metrics_line(r: &MetricsRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.step,
        r.episode,
        r.episode_return,
        r.rolling_return_100,
        r.alpha,
        r.critic_loss,
        r.actor_loss,
        r.temperature_loss,
        r.mean_velocity_recent
    )
}

pub struct MetricsWriter<W: Write> {
    out: W,
}

impl MetricsWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self, LogError> {
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> Result<Self, LogError> {
        writeln!(out, "{}", version_line(METRICS_TAG, METRICS_VERSION))?;
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self { out })
    }

    pub fn write(&mut self, row: &MetricsRow) -> std::io::Result<()> {
        writeln!(self.out, "{}", metrics_line(row))
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

fn field<T: std::str::FromStr>(cols: &[&str], i: usize, line: usize) -> Result<T, LogError> {
    cols.get(i)
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| LogError::Malformed { line, message: format!("column {} unparsable", i + 1) })
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>, LogError> {
    let mut lines = text.lines();
    check_version("metrics", &version_line(METRICS_TAG, METRICS_VERSION), lines.next())?;
    if lines.next() != Some(METRICS_HEADER) {
        return Err(LogError::Malformed { line: 2, message: "unexpected header".into() });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let n = i + 3;
            let c: Vec<&str> = l.split(',').collect();
            Ok(MetricsRow {
                step: field(&c, 0, n)?,
                episode: field(&c, 1, n)?,
                episode_return: field(&c, 2, n)?,
                rolling_return_100: field(&c, 3, n)?,
                alpha: field(&c, 4, n)?,
                critic_loss: field(&c, 5, n)?,
                actor_loss: field(&c, 6, n)?,
                temperature_loss: field(&c, 7, n)?,
                mean_velocity_recent: field(&c, 8, n)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TransitionsHeader {
    format: String,
    version: u32,
}

/// One line of the transition log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionLine {
    pub step: u64,
    pub episode: u64,
    /// Position when the action was applied.
    pub theta_deg: f64,
    pub delta_theta_deg: f64,
    pub goal_reached: bool,
    pub a: Vec<f64>,
    pub r: f64,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_next: Option<Vec<f64>>,
}

impl TransitionLine {
    pub fn from_record(rec: &StepRecord, with_states: bool) -> Self {
        let t = &rec.transition;
        Self {
            step: rec.step,
            episode: rec.episode,
            theta_deg: rec.position_before,
            delta_theta_deg: rec.progress,
            goal_reached: rec.goal_reached,
            a: t.a.clone(),
            r: t.r,
            done: t.done,
            s: with_states.then(|| t.s.clone()),
            s_next: with_states.then(|| t.s_next.clone()),
        }
    }
}

pub struct TransitionWriter<W: Write> {
    out: W,
    with_states: bool,
}

impl TransitionWriter<BufWriter<File>> {
    pub fn create(path: &Path, with_states: bool) -> Result<Self, LogError> {
        Self::new(BufWriter::new(File::create(path)?), with_states)
    }
}

impl<W: Write> TransitionWriter<W> {
    pub fn new(mut out: W, with_states: bool) -> Result<Self, LogError> {
        let header = TransitionsHeader { format: TRANSITIONS_FORMAT.into(), version: TRANSITIONS_VERSION };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        Ok(Self { out, with_states })
    }

    pub fn write(&mut self, rec: &StepRecord) -> std::io::Result<()> {
        let line = TransitionLine::from_record(rec, self.with_states);
        serde_json::to_writer(&mut self.out, &line)?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

/// Parsed transition log; malformed lines are counted and skipped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionLog {
    pub lines: Vec<TransitionLine>,
    pub skipped: usize,
}

pub fn read_transitions<R: BufRead>(reader: R) -> Result<TransitionLog, LogError> {
    let mut lines = reader.lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    let header: Option<TransitionsHeader> = serde_json::from_str(&first).ok();
    match header {
        Some(h) if h.format == TRANSITIONS_FORMAT && h.version == TRANSITIONS_VERSION => {}
        _ => return Err(LogError::Version { format: "transitions", found: first }),
    }
    let mut log = TransitionLog::default();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TransitionLine>(&line) {
            Ok(t) => log.lines.push(t),
            Err(_) => log.skipped += 1,
        }
    }
    Ok(log)
}

pub fn load_transitions(path: &Path) -> Result<TransitionLog, LogError> {
    read_transitions(BufReader::new(File::open(path)?))
}

/// Writes metrics, transitions and best-actor snapshots as training runs.
pub struct RunWriter<'a> {
    pub metrics: MetricsWriter<BufWriter<File>>,
    pub transitions: TransitionWriter<BufWriter<File>>,
    pub on_best: Box<dyn FnMut(&BestSnapshot) -> std::io::Result<()> + Send + 'a>,
}

impl TrainObserver for RunWriter<'_> {
    fn on_step(&mut self, record: &StepRecord) -> std::io::Result<()> {
        self.transitions.write(record)
    }

    fn on_episode(&mut self, row: &MetricsRow) -> std::io::Result<()> {
        self.metrics.write(row)
    }

    fn on_best(&mut self, best: &BestSnapshot) -> std::io::Result<()> {
        (self.on_best)(best)
    }
}

impl Drop for RunWriter<'_> {
    fn drop(&mut self) {
        let _ = self.metrics.flush();
        let _ = self.transitions.flush();
    }
}

pub fn eval_header(action_len: usize) -> String {
    let mut cols = vec!["step".to_string(), "theta_deg".to_string()];
    cols.extend((0..action_len).map(|i| format!("a{i}")));
    cols.push("delta_theta_deg".into());
    cols.push("reward".into());
    cols.join(",")
}

pub fn eval_log_to_string(log: &EvalLog) -> String {
    let action_len = log.records.first().map_or(4, |r| r.action.len());
    let mut out = format!("{}\n{}\n", version_line(EVAL_TAG, EVAL_VERSION), eval_header(action_len));
    for r in &log.records {
        let actions: Vec<String> = r.action.iter().map(|a| a.to_string()).collect();
        out.push_str(&format!("{},{},{},{},{}\n", r.step, r.theta_deg, actions.join(","), r.delta_theta_deg, r.reward));
    }
    out
}

pub fn parse_eval_log(text: &str) -> Result<EvalLog, LogError> {
    let mut lines = text.lines();
    check_version("eval", &version_line(EVAL_TAG, EVAL_VERSION), lines.next())?;
    let header = lines.next().ok_or(LogError::Malformed { line: 2, message: "missing header".into() })?;
    let n_cols = header.split(',').count();
    if n_cols < 5 {
        return Err(LogError::Malformed { line: 2, message: "too few columns".into() });
    }
    let action_len = n_cols - 4;
    let mut records = Vec::new();
    for (i, l) in lines.enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let n = i + 3;
        let c: Vec<&str> = l.split(',').collect();
        if c.len() != n_cols {
            return Err(LogError::Malformed { line: n, message: format!("expected {n_cols} columns") });
        }
        let action = (0..action_len).map(|k| field(&c, 2 + k, n)).collect::<Result<Vec<f64>, _>>()?;
        records.push(EvalRecord {
            step: field(&c, 0, n)?,
            theta_deg: field(&c, 1, n)?,
            action,
            delta_theta_deg: field(&c, 2 + action_len, n)?,
            reward: field(&c, 3 + action_len, n)?,
        });
    }
    Ok(EvalLog { records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub version: u32,
    pub mode: String,
    pub steps: u64,
    pub mean_velocity_deg_per_step: f64,
    pub std_velocity_deg_per_step: f64,
    pub total_progress_deg: f64,
}

impl EvalSummary {
    pub fn from_log(log: &EvalLog, mode: &str) -> Self {
        Self {
            version: EVAL_VERSION,
            mode: mode.to_string(),
            steps: log.records.len() as u64,
            mean_velocity_deg_per_step: log.mean_velocity(),
            std_velocity_deg_per_step: log.std_velocity(),
            total_progress_deg: log.total_progress(),
        }
    }
}

/// On-disk form of a distilled policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MathPolicyFile {
    pub version: u32,
    pub min_delta_deg: f64,
    pub harvested: usize,
    pub dims: Vec<DimModel>,
}

impl MathPolicyFile {
    pub fn new(policy: &MathPolicy, min_delta_deg: f64, harvested: usize) -> Self {
        Self { version: MATH_POLICY_VERSION, min_delta_deg, harvested, dims: policy.dims.clone() }
    }

    pub fn policy(&self) -> MathPolicy {
        MathPolicy { dims: self.dims.clone() }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("policy is representable")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, LogError> {
        let file: MathPolicyFile = toml::from_str(text).map_err(|e| LogError::Malformed { line: 0, message: e.to_string() })?;
        if file.version != MATH_POLICY_VERSION {
            return Err(LogError::Version { format: "math-policy", found: file.version.to_string() });
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sac::Transition;

    fn row(step: u64) -> MetricsRow {
        MetricsRow {
            step,
            episode: step / 10,
            episode_return: 0.1 + step as f64,
            rolling_return_100: 1.0 / 3.0,
            alpha: 0.5,
            critic_loss: f64::NAN,
            actor_loss: -2.0,
            temperature_loss: 1e-17,
            mean_velocity_recent: 2.5,
        }
    }

    #[test]
    fn metrics_round_trip() {
        let mut buf = Vec::new();
        {
            let mut w = MetricsWriter::new(&mut buf).unwrap();
            w.write(&row(10)).unwrap();
            w.write(&row(25)).unwrap();
        }
        let rows = parse_metrics(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].episode_return, row(25).episode_return);
        assert_eq!(rows[0].rolling_return_100, 1.0 / 3.0);
        assert!(rows[0].critic_loss.is_nan());
        let bad = String::from_utf8(buf).unwrap().replacen("v1", "v2", 1);
        assert!(matches!(parse_metrics(&bad), Err(LogError::Version { .. })));
    }

    #[test]
    fn transitions_round_trip_and_skip_bad_lines() {
        let rec = StepRecord {
            step: 1,
            episode: 1,
            position_before: 12.0,
            progress: 1.5,
            goal_reached: false,
            transition: Transition { s: vec![0.1, 0.2], a: vec![0.3], r: 1.5, s_next: vec![0.4, 0.5], done: false },
        };
        let mut buf = Vec::new();
        {
            let mut w = TransitionWriter::new(&mut buf, true).unwrap();
            w.write(&rec).unwrap();
        }
        buf.extend_from_slice(b"{not json\n");
        let log = read_transitions(&buf[..]).unwrap();
        assert_eq!(log.lines.len(), 1);
        assert_eq!(log.skipped, 1);
        assert_eq!(log.lines[0].s_next, Some(vec![0.4, 0.5]));
        assert!(matches!(read_transitions(&b"{\"format\":\"x\",\"version\":1}\n"[..]), Err(LogError::Version { .. })));
    }

    #[test]
    fn eval_log_round_trip() {
        let log = EvalLog {
            records: vec![
                EvalRecord { step: 1, theta_deg: 3.25, action: vec![0.1, -0.2, 0.3, 1.0], delta_theta_deg: 4.5, reward: 4.5 },
                EvalRecord { step: 2, theta_deg: 7.75, action: vec![0.0, 0.0, -1.0, 0.5], delta_theta_deg: -0.1, reward: -0.1 },
            ],
        };
        let back = parse_eval_log(&eval_log_to_string(&log)).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn math_policy_file_round_trip() {
        let policy = MathPolicy {
            dims: vec![
                DimModel::Sine { amplitude: 0.7, phase: 1.0, offset: 0.1, rmse: 0.05 },
                DimModel::Constant { value: 0.2, rmse: 0.3 },
                DimModel::Square { amplitude: 0.9, phase: 0.5, offset: 0.0, rmse: 0.01 },
                DimModel::Constant { value: -0.4, rmse: 0.0 },
            ],
        };
        let file = MathPolicyFile::new(&policy, 3.0, 120);
        let text = file.to_toml_string();
        let back = MathPolicyFile::from_toml_str(&text).unwrap();
        assert_eq!(back, file);
        assert!(MathPolicyFile::from_toml_str(&text.replace("version = 1", "version = 2")).is_err());
    }
}
