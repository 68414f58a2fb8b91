//! Nodes, links, sampled RSS series and window extraction.
//!
//! A logical link is one (transmitter, receiver, channel) triple. With `S`
//! fully connected nodes on `C` channels there are `C * S * (S - 1)` links,
//! always ordered channel-major, then by transmitter, then by receiver, so
//! that per-link vectors and weight-matrix rows line up across runs.

use std::cmp::Ordering;
use std::collections::HashSet;

use crate::error::{Error, Result};

pub type NodeId = u16;
pub type Channel = u8;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// A node and its 2-D position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeGeometry {
    pub id: NodeId,
    pub position: Point,
}

impl NodeGeometry {
    pub const fn new(id: NodeId, x: f64, y: f64) -> Self {
        Self {
            id,
            position: Point::new(x, y),
        }
    }
}

/// Checks that node ids are unique and coordinates finite.
pub fn validate_nodes(nodes: &[NodeGeometry]) -> Result<()> {
    let mut seen = HashSet::with_capacity(nodes.len());
    for node in nodes {
        if !node.position.is_finite() {
            return Err(Error::input(format!(
                "node {} has a non-finite coordinate",
                node.id
            )));
        }
        if !seen.insert(node.id) {
            return Err(Error::input(format!("duplicate node id {}", node.id)));
        }
    }
    Ok(())
}

pub fn node_position(nodes: &[NodeGeometry], id: NodeId) -> Option<Point> {
    nodes.iter().find(|n| n.id == id).map(|n| n.position)
}

/// One logical link: transmitter, receiver and frequency channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinkKey {
    pub tx: NodeId,
    pub rx: NodeId,
    pub channel: Channel,
}

impl LinkKey {
    pub fn new(tx: NodeId, rx: NodeId, channel: Channel) -> Result<Self> {
        if tx == rx {
            return Err(Error::input(format!("link with tx == rx == {tx}")));
        }
        Ok(Self { tx, rx, channel })
    }

    /// Unordered node pair; links sharing it share an imaging footprint.
    pub fn node_pair(&self) -> (NodeId, NodeId) {
        (self.tx.min(self.rx), self.tx.max(self.rx))
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.tx == node || self.rx == node
    }
}

impl Ord for LinkKey {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.channel, self.tx, self.rx).cmp(&(other.channel, other.tx, other.rx))
    }
}

impl PartialOrd for LinkKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All links of a fully connected network of nodes `0..node_count` on
/// channels `0..channel_count`.
pub fn enumerate_links(node_count: usize, channel_count: usize) -> Result<Vec<LinkKey>> {
    if node_count < 2 {
        return Err(Error::config(format!(
            "need at least 2 nodes, got {node_count}"
        )));
    }
    if node_count > NodeId::MAX as usize + 1 {
        return Err(Error::config(format!("too many nodes: {node_count}")));
    }
    let ids: Vec<NodeId> = (0..node_count).map(|i| i as NodeId).collect();
    enumerate_links_among(&ids, channel_count)
}

/// Like [`enumerate_links`] but over an arbitrary set of node ids.
pub fn enumerate_links_among(node_ids: &[NodeId], channel_count: usize) -> Result<Vec<LinkKey>> {
    if channel_count < 1 || channel_count > Channel::MAX as usize + 1 {
        return Err(Error::config(format!(
            "channel count must be in 1..=256, got {channel_count}"
        )));
    }
    let mut ids = node_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::config("need at least 2 distinct nodes"));
    }
    let mut links = Vec::with_capacity(channel_count * ids.len() * (ids.len() - 1));
    for channel in 0..channel_count {
        for &tx in &ids {
            for &rx in &ids {
                if tx != rx {
                    links.push(LinkKey {
                        tx,
                        rx,
                        channel: channel as Channel,
                    });
                }
            }
        }
    }
    Ok(links)
}

/// RSS samples (dB) of one link at a uniform sampling period.
///
/// Sample `n` was taken at time `n * period_s`. Missing samples are kept in
/// the mask; their slot in `samples` holds 0.0 and is never read.
#[derive(Debug, Clone, PartialEq)]
pub struct RssSeries {
    pub link: LinkKey,
    period_s: f64,
    samples: Vec<f64>,
    present: Vec<bool>,
}

impl RssSeries {
    pub fn new(link: LinkKey, period_s: f64, samples: Vec<Option<f64>>) -> Result<Self> {
        if !(period_s > 0.0 && period_s.is_finite()) {
            return Err(Error::config(format!("invalid sampling period {period_s}")));
        }
        let mut values = Vec::with_capacity(samples.len());
        let mut present = Vec::with_capacity(samples.len());
        for s in samples {
            match s {
                Some(v) if !v.is_finite() => return Err(Error::NonFinite("RSS sample")),
                Some(v) => {
                    values.push(v);
                    present.push(true);
                }
                None => {
                    values.push(0.0);
                    present.push(false);
                }
            }
        }
        Ok(Self {
            link,
            period_s,
            samples: values,
            present,
        })
    }

    /// Series without gaps.
    pub fn complete(link: LinkKey, period_s: f64, samples: Vec<f64>) -> Result<Self> {
        Self::new(link, period_s, samples.into_iter().map(Some).collect())
    }

    pub fn period_s(&self) -> f64 {
        self.period_s
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, n: usize) -> Option<f64> {
        match self.present.get(n) {
            Some(true) => Some(self.samples[n]),
            _ => None,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        (0..self.len()).map(move |n| self.get(n))
    }

    pub fn present_count(&self, range: std::ops::Range<usize>) -> usize {
        let end = range.end.min(self.len());
        let start = range.start.min(end);
        self.present[start..end].iter().filter(|&&p| p).count()
    }

    /// Most recent present sample strictly before `n`.
    fn last_before(&self, n: usize) -> Option<f64> {
        (0..n.min(self.len())).rev().find_map(|m| self.get(m))
    }
}

/// A window of `len` aligned samples for every included link, covering
/// absolute sample indices `start..start + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct RssFrame {
    start: usize,
    len: usize,
    period_s: f64,
    links: Vec<LinkKey>,
    data: Vec<f64>,
}

impl RssFrame {
    /// Builds a frame from already-aligned rows; every row must have `len`
    /// finite samples.
    pub fn from_rows(
        start: usize,
        period_s: f64,
        rows: Vec<(LinkKey, Vec<f64>)>,
    ) -> Result<Self> {
        let len = rows.first().map(|(_, r)| r.len()).ok_or(Error::Empty("frame rows"))?;
        if len < 2 {
            return Err(Error::config(format!("frame length must be >= 2, got {len}")));
        }
        if !(period_s > 0.0 && period_s.is_finite()) {
            return Err(Error::config(format!("invalid sampling period {period_s}")));
        }
        let mut links = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * len);
        for (link, row) in rows {
            if row.len() != len {
                return Err(Error::DimensionMismatch {
                    expected: len,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("frame sample"));
            }
            links.push(link);
            data.extend(row);
        }
        Ok(Self {
            start,
            len,
            period_s,
            links,
            data,
        })
    }

    /// Absolute index of the first sample.
    pub fn start(&self) -> usize {
        self.start
    }

    /// Absolute index of the last sample (the current time `i`).
    pub fn end(&self) -> usize {
        self.start + self.len - 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn period_s(&self) -> f64 {
        self.period_s
    }

    pub fn links(&self) -> &[LinkKey] {
        &self.links
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn samples(&self, link_index: usize) -> &[f64] {
        &self.data[link_index * self.len..(link_index + 1) * self.len]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&LinkKey, &[f64])> {
        self.links.iter().zip(self.data.chunks_exact(self.len))
    }
}

/// Extracts the window of `len` samples ending at absolute index `end_index`.
///
/// Links with fewer than `len / 2` present samples in the window are
/// dropped. Gaps in the remaining links are filled with the most recent
/// earlier present value; a gap at the very start of a series with no
/// earlier value takes the first present value after it.
pub fn extract_frame(series: &[RssSeries], end_index: usize, len: usize) -> Result<RssFrame> {
    if len < 2 {
        return Err(Error::config(format!("frame length must be >= 2, got {len}")));
    }
    if end_index + 1 < len {
        return Err(Error::EmptyFrame { end_index, len });
    }
    let period_s = match series.first() {
        Some(s) => s.period_s,
        None => return Err(Error::Empty("series set")),
    };
    if series.iter().any(|s| s.period_s != period_s) {
        return Err(Error::input("series have different sampling periods"));
    }
    let start = end_index + 1 - len;
    let mut rows = Vec::new();
    for s in series {
        let present = s.present_count(start..end_index + 1);
        if present * 2 < len {
            continue;
        }
        let mut carry = s.last_before(start);
        if carry.is_none() {
            carry = (start..=end_index).find_map(|n| s.get(n));
        }
        let mut row = Vec::with_capacity(len);
        for n in start..=end_index {
            if let Some(v) = s.get(n) {
                carry = Some(v);
            }
            // present >= 1 guarantees carry is set
            row.push(carry.expect("at least one present sample"));
        }
        rows.push((s.link, row));
    }
    if rows.is_empty() {
        return Err(Error::EmptyFrame { end_index, len });
    }
    RssFrame::from_rows(start, period_s, rows)
}

/// A complete measurement set: geometry, channel count, period and series.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub period_s: f64,
    pub channels: usize,
    pub nodes: Vec<NodeGeometry>,
    pub series: Vec<RssSeries>,
}

impl Trace {
    /// Number of sample slots (one past the largest index of any series).
    pub fn sample_count(&self) -> usize {
        self.series.iter().map(RssSeries::len).max().unwrap_or(0)
    }

    pub fn links(&self) -> Vec<LinkKey> {
        self.series.iter().map(|s| s.link).collect()
    }

    /// Keeps only links whose endpoints are both in `nodes` and whose channel
    /// is in `channels`; `None` keeps everything on that axis.
    pub fn subset(&self, nodes: Option<&[NodeId]>, channels: Option<&[Channel]>) -> Result<Trace> {
        let keep = |link: &LinkKey| {
            nodes.is_none_or(|ns| ns.contains(&link.tx) && ns.contains(&link.rx))
                && channels.is_none_or(|cs| cs.contains(&link.channel))
        };
        let series: Vec<RssSeries> = self.series.iter().filter(|s| keep(&s.link)).cloned().collect();
        if series.is_empty() {
            return Err(Error::config("node/channel subset leaves no links"));
        }
        let node_list = match nodes {
            Some(ns) => self.nodes.iter().filter(|n| ns.contains(&n.id)).copied().collect(),
            None => self.nodes.clone(),
        };
        Ok(Trace {
            period_s: self.period_s,
            channels: self.channels,
            nodes: node_list,
            series,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(tx: NodeId, rx: NodeId) -> LinkKey {
        LinkKey::new(tx, rx, 0).unwrap()
    }

    #[test]
    fn two_nodes_one_channel() {
        let links = enumerate_links(2, 1).unwrap();
        assert_eq!(links, vec![link(0, 1), link(1, 0)]);
    }

    #[test]
    fn deployment_link_counts() {
        assert_eq!(enumerate_links(33, 4).unwrap().len(), 4224);
        assert_eq!(enumerate_links(12, 5).unwrap().len(), 660);
    }

    #[test]
    fn link_order_is_channel_major() {
        let links = enumerate_links(3, 2).unwrap();
        assert!(links.windows(2).all(|w| w[0] < w[1]));
        assert!(links[..6].iter().all(|l| l.channel == 0));
    }

    #[test]
    fn rejects_bad_network_sizes() {
        assert!(matches!(enumerate_links(1, 4), Err(Error::InvalidConfig(_))));
        assert!(matches!(enumerate_links(4, 0), Err(Error::InvalidConfig(_))));
        assert!(LinkKey::new(3, 3, 0).is_err());
    }

    #[test]
    fn frame_covers_expected_indices() {
        let s = RssSeries::complete(link(0, 1), 0.5, (0..100).map(f64::from).collect()).unwrap();
        let frame = extract_frame(&[s], 99, 70).unwrap();
        assert_eq!(frame.start(), 30);
        assert_eq!(frame.end(), 99);
        assert_eq!(frame.samples(0)[0], 30.0);
        assert_eq!(frame.samples(0)[69], 99.0);
    }

    #[test]
    fn sparse_link_is_excluded() {
        let full = RssSeries::complete(link(0, 1), 0.5, vec![-50.0; 70]).unwrap();
        let sparse: Vec<Option<f64>> = (0..70).map(|n| (n >= 40).then_some(-60.0)).collect();
        let sparse = RssSeries::new(link(1, 0), 0.5, sparse).unwrap();
        let frame = extract_frame(&[full, sparse], 69, 70).unwrap();
        assert_eq!(frame.links(), &[link(0, 1)]);
    }

    #[test]
    fn gap_is_carried_forward() {
        let mut samples = vec![Some(10.0); 100];
        samples[50] = None;
        let s = RssSeries::new(link(0, 1), 0.5, samples).unwrap();
        let frame = extract_frame(&[s], 99, 70).unwrap();
        assert_eq!(frame.samples(0)[50 - 30], 10.0);
    }

    #[test]
    fn leading_gap_uses_first_value() {
        let samples = vec![None, None, Some(3.0), Some(4.0)];
        let s = RssSeries::new(link(0, 1), 1.0, samples).unwrap();
        let frame = extract_frame(&[s], 3, 4).unwrap();
        assert_eq!(frame.samples(0), &[3.0, 3.0, 3.0, 4.0]);
    }

    #[test]
    fn frame_errors() {
        let s = RssSeries::complete(link(0, 1), 0.5, vec![1.0; 10]).unwrap();
        assert!(matches!(
            extract_frame(std::slice::from_ref(&s), 5, 10),
            Err(Error::EmptyFrame { .. })
        ));
        // beyond the end of the series every slot is missing
        assert!(matches!(
            extract_frame(&[s], 40, 10),
            Err(Error::EmptyFrame { .. })
        ));
    }

    #[test]
    fn subset_filters_links() {
        let nodes: Vec<NodeGeometry> = (0..4).map(|i| NodeGeometry::new(i, f64::from(i), 0.0)).collect();
        let series = enumerate_links(4, 2)
            .unwrap()
            .into_iter()
            .map(|l| RssSeries::complete(l, 1.0, vec![0.0; 4]).unwrap())
            .collect();
        let trace = Trace {
            period_s: 1.0,
            channels: 2,
            nodes,
            series,
        };
        assert_eq!(trace.subset(Some(&[0, 2]), None).unwrap().series.len(), 4);
        assert_eq!(trace.subset(None, Some(&[1])).unwrap().series.len(), 12);
        assert!(trace.subset(Some(&[0]), None).is_err());
    }

    #[test]
    fn duplicate_nodes_rejected() {
        let nodes = [NodeGeometry::new(1, 0.0, 0.0), NodeGeometry::new(1, 1.0, 0.0)];
        assert!(validate_nodes(&nodes).is_err());
        assert!(validate_nodes(&[NodeGeometry::new(0, f64::NAN, 0.0)]).is_err());
    }
}
