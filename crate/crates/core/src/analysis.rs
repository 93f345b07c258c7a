//! Fringe-envelope visibility analysis of binned counts.

use std::collections::VecDeque;

use crate::config::AnalysisConfig;
use crate::error::{Error, Result};

/// Centered moving average over `width` samples, truncated at the edges.
pub fn smooth(series: &[f64], width: usize) -> Result<Vec<f64>> {
    if width == 0 {
        return Err(Error::invalid("smoothing width must be at least one sample"));
    }
    if width == 1 {
        return Ok(series.to_vec());
    }
    let n = series.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &x in series {
        prefix.push(prefix.last().unwrap() + x);
    }
    let (before, after) = window_reach(width);
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect())
}

/// Samples before and after the centre of a window of `width` samples.
fn window_reach(width: usize) -> (usize, usize) {
    let before = width / 2;
    (before, width - 1 - before)
}

/// Sliding extreme over a centered window, O(n) with a monotone deque.
fn sliding_extreme(series: &[f64], width: usize, better: impl Fn(f64, f64) -> bool) -> Vec<f64> {
    let n = series.len();
    let (before, after) = window_reach(width);
    let mut out = Vec::with_capacity(n);
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for i in 0..n {
        let hi = (i + after).min(n.saturating_sub(1));
        while next <= hi {
            while let Some(&b) = dq.back() {
                if better(series[next], series[b]) || series[next] == series[b] {
                    dq.pop_back();
                } else {
                    break;
                }
            }
            dq.push_back(next);
            next += 1;
        }
        let lo = i.saturating_sub(before);
        while let Some(&f) = dq.front() {
            if f < lo {
                dq.pop_front();
            } else {
                break;
            }
        }
        out.push(series[*dq.front().expect("window is never empty")]);
    }
    out
}

/// Upper and lower fringe envelopes: sliding max and min over a centered
/// window of `window_s` seconds.
pub fn compute_envelope(series: &[f64], bin_s: f64, window_s: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(bin_s > 0.0) {
        return Err(Error::invalid(format!("bin width must be > 0, got {bin_s}")));
    }
    let width = (window_s / bin_s).round();
    if !(width >= 3.0) {
        return Err(Error::invalid(format!(
            "envelope window {window_s} s is shorter than 3 bins of {bin_s} s"
        )));
    }
    let width = width as usize;
    Ok((
        sliding_extreme(series, width, |a, b| a > b),
        sliding_extreme(series, width, |a, b| a < b),
    ))
}

/// `|(u − l)/(u + l)|` per sample, with a validity flag.
///
/// Points with `u + l ≤ 0` are invalid and reported as 0. Net counts can
/// push the lower envelope slightly negative, which would give values above
/// one; those are clamped to 1.
pub fn visibility_series(upper: &[f64], lower: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
    if upper.len() != lower.len() {
        return Err(Error::invalid("envelopes differ in length"));
    }
    Ok(upper
        .iter()
        .zip(lower)
        .map(|(&u, &l)| {
            let sum = u + l;
            if sum > 0.0 && sum.is_finite() {
                (((u - l) / sum).abs().min(1.0), true)
            } else {
                (0.0, false)
            }
        })
        .unzip())
}

/// Fixed-width histogram over [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub edges: Vec<f64>,
    pub freq: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.freq.iter().sum()
    }

    /// Lower and upper edge of every bin.
    pub fn bins(&self) -> impl Iterator<Item = (f64, f64, u64)> + '_ {
        self.edges
            .windows(2)
            .zip(&self.freq)
            .map(|(e, &f)| (e[0], e[1], f))
    }
}

/// Bins `values` into `[k·w, (k+1)·w)` over [0, 1]; 1.0 falls in the last bin.
pub fn histogram(values: &[f64], bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(Error::invalid(format!("histogram bin width must be in (0, 1], got {bin_width}")));
    }
    let inv = 1.0 / bin_width;
    let n = (inv - 1e-9).ceil() as usize;
    // For widths like 0.1, k/10 hits decimal edges exactly where k·0.1 does not.
    let exact = (inv - inv.round()).abs() < 1e-9;
    let edges: Vec<f64> = (0..=n)
        .map(|k| if exact { k as f64 / n as f64 } else { (k as f64 * bin_width).min(1.0) })
        .collect();
    let mut freq = vec![0u64; n];
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("visibility {v} outside [0, 1]")));
        }
        // Division alone misplaces values sitting on an edge, e.g. 0.6 / 0.1.
        let mut k = ((v / bin_width) as usize).min(n - 1);
        if v >= edges[k + 1] && k + 1 < n {
            k += 1;
        } else if v < edges[k] {
            k -= 1;
        }
        freq[k] += 1;
    }
    Ok(Histogram {
        bin_width,
        edges,
        freq,
    })
}

/// Full analysis of one count series.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityStats {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub visibility: Vec<f64>,
    pub valid: Vec<bool>,
    pub histogram: Histogram,
    /// Mean over valid points.
    pub mean: f64,
    /// Sample standard deviation over valid points.
    pub std: f64,
}

impl VisibilityStats {
    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Mean and sample standard deviation; NaN where undefined.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Smooth, take envelopes, compute visibility and its histogram.
pub fn analyze_series(series: &[f64], bin_s: f64, cfg: &AnalysisConfig) -> Result<VisibilityStats> {
    if series.is_empty() {
        return Err(Error::invalid("cannot analyse an empty series"));
    }
    let width = ((cfg.smooth_s / bin_s).round() as usize).max(1);
    let smoothed = smooth(series, width)?;
    let (upper, lower) = compute_envelope(&smoothed, bin_s, cfg.window_s)?;
    let (visibility, valid) = visibility_series(&upper, &lower)?;
    let good: Vec<f64> = visibility
        .iter()
        .zip(&valid)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v)
        .collect();
    let histogram = histogram(&good, cfg.hist_bin)?;
    let (mean, std) = mean_std(&good);
    Ok(VisibilityStats {
        upper,
        lower,
        visibility,
        valid,
        histogram,
        mean,
        std,
    })
}
