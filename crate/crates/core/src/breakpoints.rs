//! Mean-shift detection with a group t-test, and piecewise mean removal.
//!
//! At every index `n` with enough room on both sides of the window, each
//! link's raw RSS is split into the `Q` samples before `n` (`n-Q..n`) and
//! the `Q` samples from `n` on (`n..n+Q`). The per-link t-scores are combined
//! by their RMS across links; `n` is a breakpoint when that RMS reaches the
//! threshold. The window's first and last index always bound the segments.

use crate::error::{Error, Result};
use crate::model::RssFrame;
use crate::spectral::{mean_unchecked, subtract_mean};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestParams {
    /// Samples per group.
    pub q: usize,
    /// Floor for the denominator, dB.
    pub epsilon: f64,
    /// RMS t-score threshold.
    pub gamma: f64,
}

impl Default for TTestParams {
    fn default() -> Self {
        Self {
            q: 14,
            epsilon: 0.5,
            gamma: 0.8,
        }
    }
}

impl TTestParams {
    pub fn validate(&self) -> Result<()> {
        if self.q < 2 {
            return Err(Error::config(format!("t-test group size must be >= 2, got {}", self.q)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(Error::config(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

fn mean_and_sample_variance(x: &[f64]) -> (f64, f64) {
    let mean = mean_unchecked(x);
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (x.len() - 1) as f64)
}

/// Group t-score of raw samples `r` at window-local index `n`, or `None`
/// when fewer than `Q` samples exist on either side.
pub fn t_score(r: &[f64], n: usize, params: &TTestParams) -> Option<f64> {
    let q = params.q;
    if q < 2 || n < q || n + q > r.len() {
        return None;
    }
    let (mean_before, var_before) = mean_and_sample_variance(&r[n - q..n]);
    let (mean_after, var_after) = mean_and_sample_variance(&r[n..n + q]);
    let spread = ((var_before + var_after) / q as f64).sqrt();
    Some((mean_before - mean_after) / params.epsilon.max(spread))
}

/// RMS over the computable scores; `None` if there are none.
pub fn rms_t_score<I>(scores: I) -> Option<f64>
where
    I: IntoIterator<Item = Option<f64>>,
{
    let (count, sum_sq) = scores
        .into_iter()
        .flatten()
        .fold((0usize, 0.0f64), |(c, s), t| (c + 1, s + t * t));
    (count > 0).then(|| (sum_sq / count as f64).sqrt())
}

/// Breakpoints of one window, in absolute sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakpointSet {
    pub start: usize,
    pub end: usize,
    /// Sorted, unique, strictly inside `(start, end)`.
    pub interior: Vec<usize>,
    /// RMS t-score per window position; `None` where not computable.
    pub rms_trace: Vec<Option<f64>>,
    /// The window was shorter than `2Q`, so nothing could be tested.
    pub too_short: bool,
}

impl BreakpointSet {
    /// A set with no interior breakpoints for a window of `len` samples.
    pub fn trivial(start: usize, len: usize) -> Self {
        Self {
            start,
            end: start + len - 1,
            interior: Vec::new(),
            rms_trace: vec![None; len],
            too_short: false,
        }
    }

    pub fn has_motion(&self) -> bool {
        !self.interior.is_empty()
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Window-local half-open segments `[b_p, b_f)`. The last segment runs
    /// through the end index.
    pub fn segments(&self) -> Vec<std::ops::Range<usize>> {
        let mut bounds = Vec::with_capacity(self.interior.len() + 2);
        bounds.push(0);
        bounds.extend(self.interior.iter().map(|b| b - self.start));
        bounds.push(self.len());
        bounds.windows(2).map(|w| w[0]..w[1]).collect()
    }
}

/// Indices where the RMS t-score across the frame's links is `>= gamma`.
pub fn detect_breakpoints(frame: &RssFrame, params: &TTestParams) -> BreakpointSet {
    let len = frame.len();
    let q = params.q;
    let mut set = BreakpointSet::trivial(frame.start(), len);
    if len < 2 * q {
        set.too_short = true;
        return set;
    }
    for n in q..=len - q {
        let rms = rms_t_score(frame.rows().map(|(_, r)| t_score(r, n, params)));
        set.rms_trace[n] = rms;
        if rms.is_some_and(|v| v >= params.gamma) {
            set.interior.push(frame.start() + n);
        }
    }
    set
}

/// Subtracts from each sample the mean of its inter-breakpoint segment.
pub fn remove_mean_breakpoint(samples: &[f64], breakpoints: &BreakpointSet) -> Result<Vec<f64>> {
    if samples.len() != breakpoints.len() {
        return Err(Error::DimensionMismatch {
            expected: breakpoints.len(),
            actual: samples.len(),
        });
    }
    let mut out = Vec::with_capacity(samples.len());
    for seg in breakpoints.segments() {
        subtract_mean(&samples[seg], &mut out);
    }
    Ok(out)
}
