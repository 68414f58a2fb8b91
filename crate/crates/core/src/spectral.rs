//! Mean removal and direct evaluation of the windowed power spectrum.
//!
//! The transform is evaluated at arbitrary frequencies with the phase
//! referenced to the absolute sample index `n`, i.e. the term for sample `n`
//! is `y[n] * exp(-j 2 pi f T n)`. Only the squared magnitude is used
//! downstream, and that does not depend on the index origin.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Candidate breathing frequencies `f_min, f_min + step, ..., f_max` (Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    f_min: f64,
    f_max: f64,
    step: f64,
    freqs: Vec<f64>,
}

impl FrequencyGrid {
    /// Requires `0 < f_min < f_max < 1 / (2 T)` and `step > 0`. Both
    /// endpoints are always on the grid; the last interval may be shorter
    /// than `step`.
    pub fn new(f_min: f64, f_max: f64, step: f64, period_s: f64) -> Result<Self> {
        if !(period_s > 0.0 && period_s.is_finite()) {
            return Err(Error::config(format!("invalid sampling period {period_s}")));
        }
        let nyquist = 0.5 / period_s;
        if !(f_min > 0.0 && f_min < f_max && f_max < nyquist) {
            return Err(Error::config(format!(
                "frequency band must satisfy 0 < f_min < f_max < {nyquist} Hz, got [{f_min}, {f_max}]"
            )));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::config(format!("grid step must be positive, got {step}")));
        }
        let span = f_max - f_min;
        let intervals = (span / step + 1e-9).floor() as usize;
        let mut freqs: Vec<f64> = (0..=intervals).map(|k| f_min + k as f64 * step).collect();
        let last = *freqs.last().expect("grid has f_min");
        if f_max - last > step * 1e-6 {
            freqs.push(f_max);
        } else {
            *freqs.last_mut().expect("grid has f_min") = f_max;
        }
        Ok(Self {
            f_min,
            f_max,
            step,
            freqs,
        })
    }

    pub fn f_min(&self) -> f64 {
        self.f_min
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }
}

/// Arithmetic mean of a window.
pub fn window_mean(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("window"));
    }
    Ok(mean_unchecked(samples))
}

// Shared by the basic and the piecewise mean removal so both produce
// bit-identical output on a single segment.
pub(crate) fn mean_unchecked(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

pub(crate) fn subtract_mean(samples: &[f64], out: &mut Vec<f64>) {
    let mean = mean_unchecked(samples);
    out.extend(samples.iter().map(|r| r - mean));
}

/// `y[n] = r[n] - mean(r)` over the whole window.
pub fn remove_mean_basic(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Empty("window"));
    }
    let mut out = Vec::with_capacity(samples.len());
    subtract_mean(samples, &mut out);
    Ok(out)
}

/// `sum_n y[n] exp(-j 2 pi f T n)` for `n = start_index .. start_index + len`.
pub fn dft_at(y: &[f64], freq_hz: f64, period_s: f64, start_index: usize) -> Result<Complex64> {
    if !(freq_hz >= 0.0 && freq_hz.is_finite()) {
        return Err(Error::input(format!("frequency must be >= 0, got {freq_hz}")));
    }
    if !(period_s > 0.0 && period_s.is_finite()) {
        return Err(Error::config(format!("invalid sampling period {period_s}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signal"));
    }
    let omega = TAU * freq_hz * period_s;
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, &v) in y.iter().enumerate() {
        let (s, c) = (omega * (start_index + k) as f64).sin_cos();
        acc.re += v * c;
        acc.im -= v * s;
    }
    Ok(acc)
}

/// Power of one link's signal at `freq_hz`: `|dft_at(..)|^2`.
pub fn psd_at(y: &[f64], freq_hz: f64, period_s: f64, start_index: usize) -> Result<f64> {
    dft_at(y, freq_hz, period_s, start_index).map(|z| z.norm_sqr())
}

/// Per-frequency power summed over links.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    /// Index of the largest power; ties go to the lowest frequency.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.power.iter().enumerate().skip(1) {
            if p > self.power[best] {
                best = i;
            }
        }
        best
    }
}

/// Precomputed `cos`/`sin` of `2 pi f T n` for every grid frequency and
/// every absolute index of one window.
pub(crate) struct Twiddles {
    len: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Twiddles {
    pub(crate) fn new(freqs: &[f64], period_s: f64, start_index: usize, len: usize) -> Self {
        let mut cos = Vec::with_capacity(freqs.len() * len);
        let mut sin = Vec::with_capacity(freqs.len() * len);
        for &f in freqs {
            let omega = TAU * f * period_s;
            for k in 0..len {
                let (s, c) = (omega * (start_index + k) as f64).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        Self { len, cos, sin }
    }

    /// Power of `y` at the `fi`-th frequency.
    pub(crate) fn power(&self, fi: usize, y: &[f64]) -> f64 {
        let c = &self.cos[fi * self.len..(fi + 1) * self.len];
        let s = &self.sin[fi * self.len..(fi + 1) * self.len];
        let mut re = 0.0;
        let mut im = 0.0;
        for ((&v, &c), &s) in y.iter().zip(c).zip(s) {
            re += v * c;
            im -= v * s;
        }
        re * re + im * im
    }
}

/// Sum over links of each link's power at every grid frequency. All links
/// must have the same length and share `start_index`.
pub fn sum_psd<S: AsRef<[f64]>>(
    signals: &[S],
    grid: &FrequencyGrid,
    period_s: f64,
    start_index: usize,
) -> Result<Spectrum> {
    let first = signals.first().ok_or(Error::Empty("link set"))?;
    let len = first.as_ref().len();
    for s in signals {
        let s = s.as_ref();
        if s.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: s.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal"));
        }
    }
    let twiddles = Twiddles::new(grid.frequencies(), period_s, start_index, len);
    let mut power = vec![0.0; grid.len()];
    for s in signals {
        let s = s.as_ref();
        for (fi, p) in power.iter_mut().enumerate() {
            *p += twiddles.power(fi, s);
        }
    }
    Ok(Spectrum {
        frequencies: grid.frequencies().to_vec(),
        power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_includes_endpoints() {
        let g = FrequencyGrid::new(0.1, 0.4, 0.002, 0.428).unwrap();
        assert_eq!(g.len(), 151);
        assert_eq!(g.frequencies()[0], 0.1);
        assert_eq!(*g.frequencies().last().unwrap(), 0.4);

        let g = FrequencyGrid::new(0.1, 0.35, 0.1, 0.428).unwrap();
        assert_eq!(g.frequencies().len(), 4);
        assert_eq!(*g.frequencies().last().unwrap(), 0.35);
    }

    #[test]
    fn grid_rejects_bad_bands() {
        assert!(FrequencyGrid::new(0.0, 0.4, 0.002, 0.428).is_err());
        assert!(FrequencyGrid::new(0.4, 0.1, 0.002, 0.428).is_err());
        // Nyquist at T = 1 s is 0.5 Hz
        assert!(FrequencyGrid::new(0.1, 0.6, 0.002, 1.0).is_err());
        assert!(FrequencyGrid::new(0.1, 0.4, 0.0, 0.428).is_err());
    }

    #[test]
    fn mean_examples() {
        assert_eq!(window_mean(&[3.0, 5.0, 7.0]).unwrap(), 5.0);
        assert_eq!(window_mean(&[-4.25; 9]).unwrap(), -4.25);
        assert!(window_mean(&[]).is_err());
    }

    #[test]
    fn sinusoid_over_whole_periods_has_zero_mean() {
        // 70 samples, 7 full periods of 10 samples
        let x: Vec<f64> = (0..70).map(|n| (TAU * n as f64 / 10.0).sin() * 3.0).collect();
        assert!(window_mean(&x).unwrap().abs() < 1e-9);
    }

    #[test]
    fn basic_mean_removal() {
        assert_eq!(remove_mean_basic(&[3.0, 5.0, 7.0]).unwrap(), vec![-2.0, 0.0, 2.0]);
        assert_eq!(remove_mean_basic(&[8.0; 5]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn basic_mean_removal_strips_offset() {
        let wave: Vec<f64> = (0..70).map(|n| (TAU * n as f64 / 14.0).cos()).collect();
        let shifted: Vec<f64> = wave.iter().map(|v| v - 63.5).collect();
        let y = remove_mean_basic(&shifted).unwrap();
        let wave_mean = wave.iter().sum::<f64>() / 70.0;
        for (a, b) in y.iter().zip(&wave) {
            assert!((a - (b - wave_mean)).abs() < 1e-12);
        }
        assert!(y.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn psd_of_zero_signal_is_zero() {
        assert_eq!(psd_at(&[0.0; 70], 0.17, 0.428, 1000).unwrap(), 0.0);
    }

    #[test]
    fn psd_of_cosine_at_its_frequency() {
        // 70 samples at T = 0.5 s, f0 = 1/7 Hz: 5 whole periods
        let t = 0.5;
        let f0 = 1.0 / 7.0;
        let n0 = 210;
        let y: Vec<f64> = (n0..n0 + 70).map(|n| (TAU * f0 * t * n as f64).cos()).collect();
        assert_relative_eq!(psd_at(&y, f0, t, n0).unwrap(), 35.0 * 35.0, max_relative = 1e-9);
    }

    #[test]
    fn psd_rejects_bad_input() {
        assert!(psd_at(&[1.0, f64::NAN], 0.2, 0.5, 0).is_err());
        assert!(psd_at(&[1.0, 2.0], -0.2, 0.5, 0).is_err());
    }

    #[test]
    fn sum_psd_linearity() {
        let grid = FrequencyGrid::new(0.1, 0.4, 0.01, 0.428).unwrap();
        let y: Vec<f64> = (0..70).map(|n| ((n * 37 % 11) as f64) - 5.0).collect();
        let one = sum_psd(&[&y], &grid, 0.428, 12).unwrap();
        let two = sum_psd(&[&y, &y], &grid, 0.428, 12).unwrap();
        for (a, b) in one.power.iter().zip(&two.power) {
            assert_eq!(2.0 * a, *b);
        }
        for (f, p) in grid.frequencies().iter().zip(&one.power) {
            assert_relative_eq!(*p, psd_at(&y, *f, 0.428, 12).unwrap(), max_relative = 1e-9);
        }
    }

    #[test]
    fn sum_psd_errors() {
        let grid = FrequencyGrid::new(0.1, 0.4, 0.01, 0.428).unwrap();
        let empty: [&[f64]; 0] = [];
        assert!(sum_psd(&empty, &grid, 0.428, 0).is_err());
        assert!(sum_psd(&[&[1.0, 2.0][..], &[1.0][..]], &grid, 0.428, 0).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_frequency_on_ties() {
        let s = Spectrum {
            frequencies: vec![0.1, 0.2, 0.3],
            power: vec![1.0, 3.0, 3.0],
        };
        assert_eq!(s.argmax(), 1);
    }
}
