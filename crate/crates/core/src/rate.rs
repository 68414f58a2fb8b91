//! Breathing-rate estimation per window, sliding evaluation, median
//! smoothing and rate metrics.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::breakpoints::{detect_breakpoints, remove_mean_breakpoint, BreakpointSet, TTestParams};
use crate::error::{Error, Result};
use crate::model::{extract_frame, LinkKey, RssFrame, RssSeries};
use crate::spectral::{remove_mean_basic, FrequencyGrid, Twiddles};

pub const BPM_PER_HZ: f64 = 60.0;
/// An estimate within this many bpm of the truth counts as acceptable.
pub const ACCEPTABLE_ERROR_BPM: f64 = 3.0;
/// Estimates below this rate are counted as likely railed to `f_min`.
pub const LOW_RATE_BPM: f64 = 9.0;

pub fn hz_to_bpm(hz: f64) -> f64 {
    hz * BPM_PER_HZ
}

pub fn bpm_to_hz(bpm: f64) -> f64 {
    bpm / BPM_PER_HZ
}

/// How the per-link mean is removed before the spectrum is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Subtract the window average.
    Basic,
    /// Subtract piecewise averages between detected breakpoints.
    Breakpoint,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Basic => "basic",
            Method::Breakpoint => "breakpoint",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "basic" => Ok(Method::Basic),
            "breakpoint" | "breakpt" => Ok(Method::Breakpoint),
            other => Err(Error::config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Window length `N` in samples.
    pub window: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub grid_step_hz: f64,
    pub ttest: TTestParams,
    pub hop_s: f64,
    pub median_span_s: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            window: 70,
            f_min_hz: 0.1,
            f_max_hz: 0.4,
            grid_step_hz: 0.002,
            ttest: TTestParams::default(),
            hop_s: 5.0,
            median_span_s: 90.0,
        }
    }
}

/// Sampling period the default window and group sizes were chosen for.
pub const DEFAULT_PERIOD_S: f64 = 0.428;

impl EstimatorConfig {
    /// Default configuration with `window` and `Q` rescaled so they cover
    /// the same durations at `period_s` as the defaults do at 0.428 s.
    pub fn scaled_to_period(period_s: f64) -> Self {
        let base = Self::default();
        let scale = DEFAULT_PERIOD_S / period_s;
        Self {
            window: ((base.window as f64 * scale).round() as usize).max(2),
            ttest: TTestParams {
                q: ((base.ttest.q as f64 * scale).round() as usize).max(2),
                ..base.ttest
            },
            ..base
        }
    }

    pub fn validate(&self, period_s: f64) -> Result<()> {
        if self.window < 2 {
            return Err(Error::config(format!("window must be >= 2 samples, got {}", self.window)));
        }
        self.ttest.validate()?;
        if !(self.hop_s > 0.0 && self.hop_s.is_finite()) {
            return Err(Error::config(format!("hop must be positive, got {}", self.hop_s)));
        }
        if !(self.median_span_s >= 0.0 && self.median_span_s.is_finite()) {
            return Err(Error::config(format!("invalid median span {}", self.median_span_s)));
        }
        self.grid(period_s).map(|_| ())
    }

    pub fn grid(&self, period_s: f64) -> Result<FrequencyGrid> {
        FrequencyGrid::new(self.f_min_hz, self.f_max_hz, self.grid_step_hz, period_s)
    }

    /// Hop in whole samples, at least one.
    pub fn hop_samples(&self, period_s: f64) -> usize {
        ((self.hop_s / period_s).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    /// Absolute index of the window's last sample.
    pub end_index: usize,
    pub window_end_time_s: f64,
    pub f_hat_hz: f64,
    pub method: Method,
    /// Interior breakpoints were found (breakpoint method only).
    pub motion_detected: bool,
    /// Every mean-removed sample was zero; `f_hat_hz` is then `f_min`.
    pub degenerate: bool,
    pub links: Vec<LinkKey>,
    /// Each link's power at `f_hat_hz`, aligned with `links`.
    pub link_psd: Vec<f64>,
    pub breakpoints: Option<BreakpointSet>,
}

impl RateEstimate {
    pub fn bpm(&self) -> f64 {
        hz_to_bpm(self.f_hat_hz)
    }

    pub fn point(&self) -> RatePoint {
        RatePoint {
            time_s: self.window_end_time_s,
            bpm: self.bpm(),
            motion: self.motion_detected,
        }
    }
}

/// A configured estimator bound to one sampling period.
#[derive(Debug, Clone)]
pub struct RateEstimator {
    config: EstimatorConfig,
    grid: FrequencyGrid,
    period_s: f64,
}

impl RateEstimator {
    pub fn new(config: EstimatorConfig, period_s: f64) -> Result<Self> {
        config.validate(period_s)?;
        let grid = config.grid(period_s)?;
        Ok(Self {
            config,
            grid,
            period_s,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn estimate(&self, frame: &RssFrame, method: Method) -> Result<RateEstimate> {
        if frame.is_empty() {
            return Err(Error::Empty("frame"));
        }
        if frame.period_s() != self.period_s {
            return Err(Error::input(format!(
                "frame period {} s does not match estimator period {} s",
                frame.period_s(),
                self.period_s
            )));
        }
        let (signals, breakpoints) = match method {
            Method::Basic => {
                let ys = frame
                    .rows()
                    .map(|(_, r)| remove_mean_basic(r))
                    .collect::<Result<Vec<_>>>()?;
                (ys, None)
            }
            Method::Breakpoint => {
                let bps = detect_breakpoints(frame, &self.config.ttest);
                if bps.too_short {
                    log::warn!(
                        "window ending at {} is shorter than 2Q; no breakpoints tested",
                        frame.end()
                    );
                }
                let ys = frame
                    .rows()
                    .map(|(_, r)| remove_mean_breakpoint(r, &bps))
                    .collect::<Result<Vec<_>>>()?;
                (ys, Some(bps))
            }
        };
        let degenerate = signals.iter().all(|y| y.iter().all(|&v| v == 0.0));

        let twiddles = Twiddles::new(self.grid.frequencies(), self.period_s, frame.start(), frame.len());
        let mut power = vec![0.0; self.grid.len()];
        for y in &signals {
            for (fi, p) in power.iter_mut().enumerate() {
                *p += twiddles.power(fi, y);
            }
        }
        // ties resolve to the lowest frequency; an all-zero spectrum gives f_min
        let mut best = 0;
        for (fi, &p) in power.iter().enumerate().skip(1) {
            if p > power[best] {
                best = fi;
            }
        }
        let link_psd = signals.iter().map(|y| twiddles.power(best, y)).collect();

        Ok(RateEstimate {
            end_index: frame.end(),
            window_end_time_s: frame.end() as f64 * self.period_s,
            f_hat_hz: self.grid.frequencies()[best],
            method,
            motion_detected: breakpoints.as_ref().is_some_and(BreakpointSet::has_motion),
            degenerate,
            links: frame.links().to_vec(),
            link_psd,
            breakpoints,
        })
    }

    /// Window end indices `N-1, N-1+hop, ...` that fit in `sample_count`.
    pub fn window_ends(&self, sample_count: usize) -> Vec<usize> {
        let first = self.config.window - 1;
        if sample_count <= first {
            return Vec::new();
        }
        (first..sample_count)
            .step_by(self.config.hop_samples(self.period_s))
            .collect()
    }

    /// Estimates every window of a series set, ordered by window end.
    /// Windows where no link has enough samples are skipped.
    pub fn estimate_sliding(&self, series: &[RssSeries], method: Method) -> Result<Vec<RateEstimate>> {
        let count = series.iter().map(RssSeries::len).max().unwrap_or(0);
        let ends = self.window_ends(count);
        let results: Vec<Option<RateEstimate>> = ends
            .par_iter()
            .map(|&end| match extract_frame(series, end, self.config.window) {
                Ok(frame) => self.estimate(&frame, method).map(Some),
                Err(Error::EmptyFrame { .. }) => {
                    log::warn!("skipping window ending at {end}: no link has enough samples");
                    Ok(None)
                }
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        Ok(results.into_iter().flatten().collect())
    }
}

/// Estimates the breathing rate in one frame.
pub fn estimate_rate(frame: &RssFrame, config: &EstimatorConfig, method: Method) -> Result<RateEstimate> {
    RateEstimator::new(config.clone(), frame.period_s())?.estimate(frame, method)
}

/// One rate estimate reduced to what the metrics need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub time_s: f64,
    pub bpm: f64,
    pub motion: bool,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Centered running median: each output is the median of all values whose
/// time lies within `span_s / 2` of the current time. `times` must be
/// non-decreasing.
pub fn median_smooth(times: &[f64], values: &[f64], span_s: f64) -> Vec<f64> {
    assert_eq!(times.len(), values.len(), "times and values differ in length");
    let half = 0.5 * span_s + 1e-9;
    let mut lo = 0;
    let mut hi = 0;
    let mut buf = Vec::new();
    times
        .iter()
        .map(|&t| {
            while times[lo] < t - half {
                lo += 1;
            }
            while hi < times.len() && times[hi] <= t + half {
                hi += 1;
            }
            buf.clear();
            buf.extend_from_slice(&values[lo..hi]);
            median(&mut buf)
        })
        .collect()
}

/// RMS difference between each rate and its centered running median.
pub fn rms_median(points: &[RatePoint], span_s: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Empty("rate estimates"));
    }
    let times: Vec<f64> = points.iter().map(|p| p.time_s).collect();
    let bpm: Vec<f64> = points.iter().map(|p| p.bpm).collect();
    let smoothed = median_smooth(&times, &bpm, span_s);
    let ss: f64 = bpm.iter().zip(&smoothed).map(|(a, m)| (a - m) * (a - m)).sum();
    Ok((ss / points.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateMetrics {
    pub count: usize,
    /// Fraction within [`ACCEPTABLE_ERROR_BPM`] of the truth.
    pub acceptable_fraction: Option<f64>,
    pub mean_abs_error_bpm: Option<f64>,
    pub rms_median_bpm: f64,
    /// Estimates below [`LOW_RATE_BPM`].
    pub low_count: usize,
    pub low_with_motion: usize,
    pub low_without_motion: usize,
}

pub fn evaluate_rates(points: &[RatePoint], truth_bpm: Option<f64>, span_s: f64) -> Result<RateMetrics> {
    let rms_median_bpm = rms_median(points, span_s)?;
    let count = points.len();
    let (acceptable_fraction, mean_abs_error_bpm) = match truth_bpm {
        Some(truth) => {
            let errors: Vec<f64> = points.iter().map(|p| (p.bpm - truth).abs()).collect();
            let ok = errors.iter().filter(|&&e| e <= ACCEPTABLE_ERROR_BPM).count();
            (
                Some(ok as f64 / count as f64),
                Some(errors.iter().sum::<f64>() / count as f64),
            )
        }
        None => (None, None),
    };
    let low: Vec<&RatePoint> = points.iter().filter(|p| p.bpm < LOW_RATE_BPM).collect();
    let low_with_motion = low.iter().filter(|p| p.motion).count();
    Ok(RateMetrics {
        count,
        acceptable_fraction,
        mean_abs_error_bpm,
        rms_median_bpm,
        low_count: low.len(),
        low_with_motion,
        low_without_motion: low.len() - low_with_motion,
    })
}
