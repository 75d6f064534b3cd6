//! Learning-curve summaries computed from a transition log.

use std::fmt::Write as _;

use crate::sac::ROLLING_EPISODES;

pub const DEFAULT_WINDOW: usize = 20_000;
pub const DEFAULT_BIN_WIDTH: f64 = 0.5;
/// Histogram bins are centred on multiples of the bin width within this range.
pub const HISTOGRAM_SPAN_DEG: f64 = 10.0;

/// Counts per bin, plus under- and overflow.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub width: f64,
    /// Centre of the first regular bin.
    pub first_centre: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    /// Bins of `width` centred on `k·width` for |k·width| ≤ span.
    pub fn new(width: f64, span: f64) -> Self {
        assert!(width > 0.0, "bin width must be positive");
        let k = (span / width).floor() as i64;
        Self { width, first_centre: -(k as f64) * width, counts: vec![0; (2 * k + 1) as usize], underflow: 0, overflow: 0 }
    }

    pub fn add(&mut self, x: f64) {
        let idx = ((x - self.first_centre) / self.width + 0.5).floor();
        if idx < 0.0 || x.is_nan() {
            self.underflow += 1;
        } else if idx as usize >= self.counts.len() {
            self.overflow += 1;
        } else {
            self.counts[idx as usize] += 1;
        }
    }

    pub fn centre(&self, i: usize) -> f64 {
        self.first_centre + i as f64 * self.width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    /// Centre of the fullest regular bin (first on ties), or `None` when
    /// the overflow bins dominate.
    pub fn mode(&self) -> Option<f64> {
        let (i, &c) = self.counts.iter().enumerate().fold((0, &0u64), |best, cur| if cur.1 > best.1 { cur } else { best });
        (c >= self.underflow.max(self.overflow) && c > 0).then(|| self.centre(i))
    }
}

pub fn windows(len: usize, window: usize) -> Vec<(usize, usize)> {
    assert!(window > 0, "window must be positive");
    (0..len).step_by(window).map(|start| (start, (start + window).min(len))).collect()
}

pub fn windowed_histograms(deltas: &[f64], window: usize, bin_width: f64) -> Vec<Histogram> {
    windows(deltas.len(), window)
        .into_iter()
        .map(|(a, b)| {
            let mut h = Histogram::new(bin_width, HISTOGRAM_SPAN_DEG);
            deltas[a..b].iter().for_each(|&d| h.add(d));
            h
        })
        .collect()
}

pub fn windowed_means(deltas: &[f64], window: usize) -> Vec<f64> {
    windows(deltas.len(), window).into_iter().map(|(a, b)| deltas[a..b].iter().sum::<f64>() / (b - a) as f64).collect()
}

/// Running sum of per-step progress, starting from zero.
pub fn cumulative(deltas: &[f64]) -> Vec<f64> {
    deltas
        .iter()
        .scan(0.0, |acc, &d| {
            *acc += d;
            Some(*acc)
        })
        .collect()
}

/// `(end step, return, rolling mean of the last 100 returns)` per episode.
pub fn episode_returns(steps: &[u64], rewards: &[f64], done: &[bool]) -> Vec<(u64, f64, f64)> {
    let mut out = Vec::new();
    let mut acc = 0.0;
    let mut recent: std::collections::VecDeque<f64> = std::collections::VecDeque::new();
    for i in 0..rewards.len() {
        acc += rewards[i];
        if done[i] {
            if recent.len() == ROLLING_EPISODES {
                recent.pop_front();
            }
            recent.push_back(acc);
            out.push((steps[i], acc, recent.iter().sum::<f64>() / recent.len() as f64));
            acc = 0.0;
        }
    }
    out
}

pub fn histograms_csv(hists: &[Histogram]) -> String {
    let mut out = String::from("bin_low,bin_high,bin_centre");
    for w in 1..=hists.len() {
        let _ = write!(out, ",window{w}");
    }
    out.push('\n');
    let Some(first) = hists.first() else { return out };
    let half = first.width / 2.0;
    let lo = first.first_centre - half;
    let hi = first.centre(first.counts.len() - 1) + half;
    let row = |out: &mut String, a: f64, b: f64, c: String, vals: Vec<u64>| {
        let _ = write!(out, "{a},{b},{c}");
        for v in vals {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    };
    row(&mut out, f64::NEG_INFINITY, lo, "underflow".into(), hists.iter().map(|h| h.underflow).collect());
    for i in 0..first.counts.len() {
        let c = first.centre(i);
        row(&mut out, c - half, c + half, c.to_string(), hists.iter().map(|h| h.counts[i]).collect());
    }
    row(&mut out, hi, f64::INFINITY, "overflow".into(), hists.iter().map(|h| h.overflow).collect());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_progress_fills_one_bin() {
        let deltas = vec![5.0; 100];
        let h = &windowed_histograms(&deltas, 100, 0.5)[0];
        let occupied: Vec<usize> = (0..h.counts.len()).filter(|&i| h.counts[i] > 0).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!(h.centre(occupied[0]), 5.0);
        assert_eq!(h.mode(), Some(5.0));
    }

    #[test]
    fn counts_sum_to_window() {
        let deltas: Vec<f64> = (0..1050).map(|i| (i as f64 * 0.37).sin() * 14.0).collect();
        let hs = windowed_histograms(&deltas, 200, 0.5);
        assert_eq!(hs.len(), 6);
        for h in &hs[..5] {
            assert_eq!(h.total(), 200);
        }
        assert_eq!(hs[5].total(), 50);
        assert!(hs.iter().any(|h| h.overflow > 0 && h.underflow > 0));
    }

    #[test]
    fn bins_are_centred() {
        let mut h = Histogram::new(0.5, 10.0);
        assert_eq!(h.counts.len(), 41);
        h.add(0.24);
        h.add(-0.25);
        h.add(0.25);
        assert_eq!(h.mode(), Some(0.0));
        assert_eq!(h.counts[20], 2);
        assert_eq!(h.counts[21], 1);
        h.add(10.24);
        h.add(10.25);
        assert_eq!(h.overflow, 1);
    }

    #[test]
    fn five_windows_from_100k() {
        assert_eq!(windows(100_000, 20_000).len(), 5);
    }

    #[test]
    fn window_means_account_for_total() {
        let deltas: Vec<f64> = (0..999).map(|i| (i % 7) as f64 - 2.5).collect();
        let means = windowed_means(&deltas, 100);
        let total: f64 = windows(deltas.len(), 100).iter().zip(&means).map(|((a, b), m)| m * (b - a) as f64).sum();
        assert!((total - deltas.iter().sum::<f64>()).abs() < 1e-9);
        assert!((cumulative(&deltas).last().unwrap() - deltas.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn episode_return_replay() {
        let steps = [1, 2, 3, 4, 5];
        let r = [1.0, 2.0, 3.0, 4.0, 5.0];
        let d = [false, true, false, false, true];
        assert_eq!(episode_returns(&steps, &r, &d), vec![(2, 3.0, 3.0), (5, 12.0, 7.5)]);
    }
}
