//! End-to-end runs over a whole trace: sliding-window rate estimation,
//! per-window localization and evaluation against ground truth.

use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{LocationRow, RateRow, RunConfig};
use crate::model::{Point, Trace};
use crate::rate::{evaluate_rates, median_smooth, Method, RateEstimate, RateEstimator, RateMetrics, RatePoint};
use crate::simulator::GroundTruth;
use crate::tomography::{BreathingImage, ImagingModel};

/// Rate and location rows must share window end times to this tolerance.
pub const TIME_MATCH_TOL_S: f64 = 1e-3;

/// Sliding-window rate estimates over the whole trace.
pub fn run_estimate(trace: &Trace, config: &RunConfig, method: Method) -> Result<Vec<RateEstimate>> {
    let estimator = RateEstimator::new(config.estimator.clone(), trace.period_s)?;
    let estimates = estimator.estimate_sliding(&trace.series, method)?;
    if estimates.is_empty() {
        return Err(Error::input(format!(
            "trace of {} samples is shorter than one {}-sample window",
            trace.sample_count(),
            config.estimator.window
        )));
    }
    Ok(estimates)
}

/// Rate CSV rows, including the centered running median.
pub fn rate_rows(estimates: &[RateEstimate], median_span_s: f64) -> Vec<RateRow> {
    let times: Vec<f64> = estimates.iter().map(|e| e.window_end_time_s).collect();
    let bpm: Vec<f64> = estimates.iter().map(RateEstimate::bpm).collect();
    let median = median_smooth(&times, &bpm, median_span_s);
    estimates
        .iter()
        .zip(median)
        .map(|(e, m)| RateRow {
            time_s: e.window_end_time_s,
            bpm: e.bpm(),
            motion: e.motion_detected,
            median_bpm: m,
        })
        .collect()
}

pub struct LocalizeRun {
    pub model: ImagingModel,
    pub estimates: Vec<RateEstimate>,
    pub images: Vec<BreathingImage>,
    pub rows: Vec<LocationRow>,
    pub build_time: Duration,
    pub window_time: Duration,
}

impl LocalizeRun {
    pub fn mean_location(&self) -> Point {
        mean_location(&self.rows)
    }
}

/// Builds the imaging model once, then images every window.
pub fn run_localize(trace: &Trace, config: &RunConfig) -> Result<LocalizeRun> {
    if trace.nodes.is_empty() {
        return Err(Error::input("trace has no node coordinates"));
    }
    let started = Instant::now();
    let model = ImagingModel::build(&trace.nodes, &trace.links(), config.imaging)?;
    let build_time = started.elapsed();
    log::info!(
        "imaging model: {} links x {} pixels ({}x{}) built in {:.3} s",
        model.links.len(),
        model.grid.len(),
        model.grid.nx(),
        model.grid.ny(),
        build_time.as_secs_f64()
    );

    let started = Instant::now();
    let estimates = run_estimate(trace, config, config.localize_method)?;
    let images = estimates
        .par_iter()
        .map(|e| model.estimate_image(&model.link_vector(e)))
        .collect::<Result<Vec<_>>>()?;
    let window_time = started.elapsed();
    log::info!(
        "{} windows imaged in {:.3} s ({:.4} s per window)",
        images.len(),
        window_time.as_secs_f64(),
        window_time.as_secs_f64() / images.len() as f64
    );

    let rows = estimates
        .iter()
        .zip(&images)
        .map(|(e, im)| LocationRow {
            time_s: e.window_end_time_s,
            location: im.location,
            max_pixel_value: im.max_value,
            degenerate: im.degenerate,
        })
        .collect();
    Ok(LocalizeRun {
        model,
        estimates,
        images,
        rows,
        build_time,
        window_time,
    })
}

pub fn mean_location(rows: &[LocationRow]) -> Point {
    let n = rows.len().max(1) as f64;
    let (sx, sy) = rows
        .iter()
        .fold((0.0, 0.0), |(sx, sy), r| (sx + r.location.x, sy + r.location.y));
    Point::new(sx / n, sy / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationMetrics {
    pub count: usize,
    pub degenerate_count: usize,
    pub mean_location: Point,
    /// Per-window errors; present when the true position is known.
    pub mean_error_m: Option<f64>,
    pub rms_error_m: Option<f64>,
    pub mean_location_error_m: Option<f64>,
}

pub fn evaluate_locations(rows: &[LocationRow], truth: Option<Point>) -> Result<LocationMetrics> {
    if rows.is_empty() {
        return Err(Error::Empty("location estimates"));
    }
    let mean = mean_location(rows);
    let n = rows.len() as f64;
    let (mean_error_m, rms_error_m, mean_location_error_m) = match truth {
        Some(p) => {
            let errors: Vec<f64> = rows.iter().map(|r| r.location.distance(&p)).collect();
            (
                Some(errors.iter().sum::<f64>() / n),
                Some((errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt()),
                Some(mean.distance(&p)),
            )
        }
        None => (None, None, None),
    };
    Ok(LocationMetrics {
        count: rows.len(),
        degenerate_count: rows.iter().filter(|r| r.degenerate).count(),
        mean_location: mean,
        mean_error_m,
        rms_error_m,
        mean_location_error_m,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rate: RateMetrics,
    pub location: Option<LocationMetrics>,
}

/// Metrics for a rate CSV and, optionally, the matching location CSV.
pub fn evaluate(
    rates: &[RateRow],
    locations: Option<&[LocationRow]>,
    truth: Option<&GroundTruth>,
    median_span_s: f64,
) -> Result<Report> {
    let points: Vec<RatePoint> = rates
        .iter()
        .map(|r| RatePoint {
            time_s: r.time_s,
            bpm: r.bpm,
            motion: r.motion,
        })
        .collect();
    let rate = evaluate_rates(&points, truth.map(|t| t.rate_bpm), median_span_s)?;
    let location = match locations {
        Some(rows) => {
            if rows.len() != rates.len() {
                return Err(Error::input(format!(
                    "mismatched time bases: {} rate rows vs {} location rows",
                    rates.len(),
                    rows.len()
                )));
            }
            if let Some((i, (r, l))) = rates
                .iter()
                .zip(rows)
                .enumerate()
                .find(|(_, (r, l))| (r.time_s - l.time_s).abs() > TIME_MATCH_TOL_S)
            {
                return Err(Error::input(format!(
                    "mismatched time bases at row {i}: {} s vs {} s",
                    r.time_s, l.time_s
                )));
            }
            Some(evaluate_locations(rows, truth.map(|t| t.position))?)
        }
        None => None,
    };
    Ok(Report { rate, location })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.digits$}"))
}

impl Report {
    /// `(metric, value)` pairs for the metrics CSV.
    pub fn metrics(&self) -> Vec<(String, String)> {
        let r = &self.rate;
        let mut out = vec![
            ("windows".to_string(), r.count.to_string()),
            ("acceptable_fraction".to_string(), opt(r.acceptable_fraction, 4)),
            ("mean_abs_error_bpm".to_string(), opt(r.mean_abs_error_bpm, 4)),
            ("rms_median_bpm".to_string(), format!("{:.4}", r.rms_median_bpm)),
            ("low_count".to_string(), r.low_count.to_string()),
            ("low_with_motion".to_string(), r.low_with_motion.to_string()),
            ("low_without_motion".to_string(), r.low_without_motion.to_string()),
        ];
        if let Some(l) = &self.location {
            out.extend([
                ("degenerate_images".to_string(), l.degenerate_count.to_string()),
                ("mean_x_m".to_string(), format!("{:.4}", l.mean_location.x)),
                ("mean_y_m".to_string(), format!("{:.4}", l.mean_location.y)),
                ("mean_location_error_m".to_string(), opt(l.mean_error_m, 4)),
                ("rms_location_error_m".to_string(), opt(l.rms_error_m, 4)),
                ("error_of_mean_location_m".to_string(), opt(l.mean_location_error_m, 4)),
            ]);
        }
        out
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.rate;
        writeln!(f, "windows:              {}", r.count)?;
        if let Some(a) = r.acceptable_fraction {
            writeln!(f, "acceptable:           {:.1}%", 100.0 * a)?;
        }
        if let Some(e) = r.mean_abs_error_bpm {
            writeln!(f, "avg. error:           {e:.2} bpm")?;
        }
        writeln!(f, "RMS-median:           {:.2} bpm", r.rms_median_bpm)?;
        writeln!(
            f,
            "low estimates:        {} ({} with motion, {} without)",
            r.low_count, r.low_with_motion, r.low_without_motion
        )?;
        if let Some(l) = &self.location {
            writeln!(
                f,
                "mean location:        ({:.2}, {:.2}) m",
                l.mean_location.x, l.mean_location.y
            )?;
            if let (Some(m), Some(rms), Some(em)) = (l.mean_error_m, l.rms_error_m, l.mean_location_error_m) {
                writeln!(f, "avg. loc. error:      {m:.2} m")?;
                writeln!(f, "RMS loc. error:       {rms:.2} m")?;
                writeln!(f, "error of mean loc.:   {em:.2} m")?;
            }
            writeln!(f, "degenerate images:    {}", l.degenerate_count)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(bpm: &[f64]) -> Vec<RateRow> {
        bpm.iter()
            .enumerate()
            .map(|(i, &b)| RateRow {
                time_s: 30.0 + 5.0 * i as f64,
                bpm: b,
                motion: false,
                median_bpm: b,
            })
            .collect()
    }

    fn truth() -> GroundTruth {
        GroundTruth {
            rate_bpm: 12.0,
            position: Point::new(2.0, 3.0),
            motion_times_s: vec![],
        }
    }

    fn locs(rates: &[RateRow], p: Point) -> Vec<LocationRow> {
        rates
            .iter()
            .map(|r| LocationRow {
                time_s: r.time_s,
                location: p,
                max_pixel_value: 1.0,
                degenerate: false,
            })
            .collect()
    }

    #[test]
    fn perfect_estimates() {
        let r = rows(&[12.0; 10]);
        let l = locs(&r, Point::new(2.0, 3.0));
        let rep = evaluate(&r, Some(&l), Some(&truth()), 90.0).unwrap();
        assert_eq!(rep.rate.acceptable_fraction, Some(1.0));
        assert_eq!(rep.rate.mean_abs_error_bpm, Some(0.0));
        let loc = rep.location.unwrap();
        assert_eq!(loc.mean_error_m, Some(0.0));
        assert_eq!(loc.rms_error_m, Some(0.0));
    }

    #[test]
    fn offset_locations() {
        let r = rows(&[12.0; 10]);
        let l = locs(&r, Point::new(3.0, 3.0));
        let rep = evaluate(&r, Some(&l), Some(&truth()), 90.0).unwrap();
        let loc = rep.location.unwrap();
        assert!((loc.mean_error_m.unwrap() - 1.0).abs() < 1e-12);
        assert!((loc.mean_location_error_m.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_time_bases() {
        let r = rows(&[12.0; 10]);
        let mut l = locs(&r, Point::new(2.0, 3.0));
        assert!(evaluate(&r, Some(&l[..9]), None, 90.0).is_err());
        l[4].time_s += 5.0;
        assert!(evaluate(&r, Some(&l), None, 90.0).is_err());
    }

    #[test]
    fn report_lists_every_metric() {
        let r = rows(&[12.0, 6.0, 12.0]);
        let rep = evaluate(&r, None, None, 90.0).unwrap();
        let names: Vec<String> = rep.metrics().into_iter().map(|(k, _)| k).collect();
        assert!(names.contains(&"rms_median_bpm".to_string()));
        assert_eq!(rep.rate.low_count, 1);
        assert!(rep.to_string().contains("RMS-median"));
    }
}
