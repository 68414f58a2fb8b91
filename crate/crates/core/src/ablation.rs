//! Channel-subset and node-subset sweeps.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::io::RunConfig;
use crate::model::{Channel, NodeId, Trace};
use crate::pipeline::run_estimate;
use crate::rate::{evaluate_rates, Method, RateMetrics, RatePoint};

/// Every non-empty subset of `0..channels` with a size in `sizes`
/// (all sizes when `sizes` is empty), in lexicographic bitmask order.
pub fn channel_subsets(channels: usize, sizes: &[usize]) -> Vec<Vec<Channel>> {
    (1u32..(1 << channels))
        .map(|mask| (0..channels as Channel).filter(|c| mask & (1 << c) != 0).collect::<Vec<_>>())
        .filter(|s| sizes.is_empty() || sizes.contains(&s.len()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetResult {
    pub channels: Vec<Channel>,
    pub links: usize,
    pub metrics: RateMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeSummary {
    pub size: usize,
    pub subsets: usize,
    pub mean_rms_median_bpm: f64,
    pub mean_acceptable_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSweep {
    pub results: Vec<SubsetResult>,
    pub by_size: Vec<SizeSummary>,
}

fn metrics_for(trace: &Trace, config: &RunConfig, method: Method, truth_bpm: Option<f64>) -> Result<RateMetrics> {
    let points: Vec<RatePoint> = run_estimate(trace, config, method)?.iter().map(|e| e.point()).collect();
    evaluate_rates(&points, truth_bpm, config.estimator.median_span_s)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Runs the estimator on each channel subset and averages per subset size.
pub fn channel_sweep(
    trace: &Trace,
    config: &RunConfig,
    method: Method,
    sizes: &[usize],
    truth_bpm: Option<f64>,
) -> Result<ChannelSweep> {
    let subsets = channel_subsets(trace.channels, sizes);
    if subsets.is_empty() {
        return Err(Error::config(format!(
            "no channel subsets of sizes {sizes:?} among {} channels",
            trace.channels
        )));
    }
    let mut results = Vec::with_capacity(subsets.len());
    for channels in subsets {
        let sub = trace.subset(None, Some(&channels))?;
        let metrics = metrics_for(&sub, config, method, truth_bpm)?;
        log::info!("channels {channels:?}: RMS-median {:.3} bpm", metrics.rms_median_bpm);
        results.push(SubsetResult {
            channels,
            links: sub.series.len(),
            metrics,
        });
    }
    let mut by_size = Vec::new();
    for size in 1..=trace.channels {
        let group: Vec<&SubsetResult> = results.iter().filter(|r| r.channels.len() == size).collect();
        if group.is_empty() {
            continue;
        }
        let acceptable = if group.iter().all(|r| r.metrics.acceptable_fraction.is_some()) {
            Some(mean(group.iter().filter_map(|r| r.metrics.acceptable_fraction)))
        } else {
            None
        };
        by_size.push(SizeSummary {
            size,
            subsets: group.len(),
            mean_rms_median_bpm: mean(group.iter().map(|r| r.metrics.rms_median_bpm)),
            mean_acceptable_fraction: acceptable,
        });
    }
    Ok(ChannelSweep { results, by_size })
}

impl ChannelSweep {
    pub fn summary_for(&self, size: usize) -> Option<&SizeSummary> {
        self.by_size.iter().find(|s| s.size == size)
    }

    /// `channels_used,subsets,mean_rms_median_bpm,mean_acceptable_fraction`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("channels_used,subsets,mean_rms_median_bpm,mean_acceptable_fraction\n");
        for r in &self.by_size {
            let acc = r.mean_acceptable_fraction.map_or("NA".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(s, "{},{},{:.4},{acc}", r.size, r.subsets, r.mean_rms_median_bpm);
        }
        s
    }
}

/// A named node subset, e.g. `floor=0,2,4,6`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSubset {
    pub name: String,
    pub nodes: Vec<NodeId>,
}

impl std::str::FromStr for NodeSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, ids) = match s.split_once('=') {
            Some((n, ids)) => (n.trim().to_string(), ids),
            None => (s.trim().to_string(), s),
        };
        Ok(Self {
            name,
            nodes: crate::io::parse_id_list(ids)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSubsetResult {
    pub subset: NodeSubset,
    pub links: usize,
    pub metrics: RateMetrics,
}

/// Rate metrics with only the links among each node subset.
pub fn node_subset_report(
    trace: &Trace,
    config: &RunConfig,
    method: Method,
    subsets: &[NodeSubset],
    truth_bpm: Option<f64>,
) -> Result<Vec<NodeSubsetResult>> {
    subsets
        .iter()
        .map(|subset| {
            let sub = trace.subset(Some(&subset.nodes), None)?;
            let metrics = metrics_for(&sub, config, method, truth_bpm)?;
            Ok(NodeSubsetResult {
                subset: subset.clone(),
                links: sub.series.len(),
                metrics,
            })
        })
        .collect()
}

/// `subset,nodes,links,windows,acceptable_fraction,mean_abs_error_bpm,rms_median_bpm,low_count`.
pub fn node_report_csv(rows: &[NodeSubsetResult]) -> String {
    let mut s = String::from(
        "subset,nodes,links,windows,acceptable_fraction,mean_abs_error_bpm,rms_median_bpm,low_count\n",
    );
    let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
    for r in rows {
        let nodes: Vec<String> = r.subset.nodes.iter().map(|n| n.to_string()).collect();
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.4},{}",
            r.subset.name,
            nodes.join(" "),
            r.links,
            m.count,
            f(m.acceptable_fraction),
            f(m.mean_abs_error_bpm),
            m.rms_median_bpm,
            m.low_count
        );
    }
    s
}
