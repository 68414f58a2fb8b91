//! Deterministic synthetic RSS traces with known breathing rate, breathing
//! location and motion events.
//!
//! Link `l` at sample `n` reads
//!
//! ```text
//! r_l[n] = b_l + A s_l sin(2 pi f_b T n + phi_l) + m_l[n] + w_l[n]
//! ```
//!
//! with a per-link baseline `b_l`, breathing amplitude `A`, sensitivity
//! `s_l` in `[0, 1]`, random phase `phi_l`, motion term `m_l` and white
//! Gaussian noise `w_l`. The sensitivity is 1 when the person lies inside the
//! link's imaging ellipse and decays as `exp(-excess / decay)` with the
//! excess path length beyond it. This is a stand-in forward model for
//! end-to-end testing, not a propagation model.
//!
//! A motion event on an affected link adds a zero-mean random walk while the
//! event lasts and then a persistent level shift of `step_db`.
//!
//! Each link draws from its own ChaCha stream derived from `(seed, link
//! index)`, and each motion event from its own stream, so output depends on
//! nothing but the configuration.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{enumerate_links_among, validate_nodes, LinkKey, NodeGeometry, NodeId, Point, RssSeries, Trace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Person {
    pub position: Point,
    pub rate_bpm: f64,
    /// Breathing amplitude on a fully sensitive link, dB.
    pub amplitude_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionEvent {
    pub time_s: f64,
    /// Fraction of all links affected.
    pub link_fraction: f64,
    /// Persistent level shift after the event, dB.
    pub step_db: f64,
    /// Length of the random-walk transient, seconds.
    pub transient_s: f64,
}

impl MotionEvent {
    /// Events every `interval_s` seconds starting at `first_s`, up to
    /// `duration_s`.
    pub fn periodic(
        first_s: f64,
        interval_s: f64,
        duration_s: f64,
        link_fraction: f64,
        step_db: f64,
        transient_s: f64,
    ) -> Vec<MotionEvent> {
        let mut out = Vec::new();
        let mut t = first_s;
        while t < duration_s {
            out.push(MotionEvent {
                time_s: t,
                link_fraction,
                step_db,
                transient_s,
            });
            t += interval_s;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub nodes: Vec<NodeGeometry>,
    pub channels: usize,
    pub period_s: f64,
    pub duration_s: f64,
    pub person: Person,
    pub motion_events: Vec<MotionEvent>,
    pub noise_sigma_db: f64,
    /// Per-link baselines are drawn uniformly from this range, dB.
    pub baseline_db: (f64, f64),
    /// Round every sample to whole dB, like radio RSS registers.
    pub quantize: bool,
    /// Probability that any one sample is dropped.
    pub missing_prob: f64,
    pub ellipse_m: f64,
    pub sensitivity_decay_m: f64,
    /// Keep breathing only on this many links closest to the person.
    pub max_sensitive_links: Option<usize>,
    pub seed: u64,
}

/// Node positions of a 12-node bedroom deployment on a 5.3 m x 5.3 m floor.
///
/// Nodes come in co-located pairs, the even id on the floor and the odd id
/// raised: 0/1 and 2/3 at the head corners of a bed, 4/5 and 6/7 at its
/// foot corners, 8/9 and 10/11 at two outlets away from the bed.
pub fn nap_layout() -> Vec<NodeGeometry> {
    let outlets = [(1.6, 4.0), (3.4, 4.0), (3.4, 1.8), (1.6, 1.8), (5.0, 2.9), (0.3, 0.3)];
    outlets
        .iter()
        .enumerate()
        .flat_map(|(i, &(x, y))| {
            let id = 2 * i as NodeId;
            [NodeGeometry::new(id, x, y), NodeGeometry::new(id + 1, x, y)]
        })
        .collect()
}

/// Chest position of the sleeper in [`nap_layout`].
pub const NAP_CHEST: Point = Point::new(2.5, 3.3);

/// 33 nodes spaced evenly around the walls of a 7 m x 8 m apartment.
pub fn apartment_layout() -> Vec<NodeGeometry> {
    let (w, h) = (7.0, 8.0);
    let perimeter = 2.0 * (w + h);
    let count = 33;
    (0..count)
        .map(|i| {
            let s = perimeter * i as f64 / count as f64;
            let (x, y) = if s < w {
                (s, 0.0)
            } else if s < w + h {
                (w, s - w)
            } else if s < 2.0 * w + h {
                (w - (s - w - h), h)
            } else {
                (0.0, h - (s - 2.0 * w - h))
            };
            NodeGeometry::new(i as NodeId, x, y)
        })
        .collect()
}

impl ScenarioConfig {
    /// Two nodes 3 m apart on one channel, person on the link line.
    pub fn two_node(seed: u64) -> Self {
        Self {
            nodes: vec![NodeGeometry::new(0, 0.0, 0.0), NodeGeometry::new(1, 3.0, 0.0)],
            channels: 1,
            period_s: 0.428,
            duration_s: 60.0,
            person: Person {
                position: Point::new(1.5, 0.0),
                rate_bpm: 12.0,
                amplitude_db: 1.0,
            },
            motion_events: Vec::new(),
            noise_sigma_db: 0.3,
            baseline_db: (-60.0, -60.0),
            quantize: false,
            missing_prob: 0.0,
            ellipse_m: 1.0,
            sensitivity_decay_m: 0.5,
            max_sensitive_links: None,
            seed,
        }
    }

    /// 33-node apartment, 4 channels at 0.428 s, 10 bpm breather, breathing
    /// visible on 15 links, 5 minutes.
    pub fn apartment(seed: u64) -> Self {
        Self {
            nodes: apartment_layout(),
            channels: 4,
            period_s: 0.428,
            duration_s: 300.0,
            person: Person {
                position: Point::new(2.0, 5.5),
                rate_bpm: 10.0,
                amplitude_db: 1.0,
            },
            motion_events: Vec::new(),
            noise_sigma_db: 0.3,
            baseline_db: (-85.0, -45.0),
            quantize: false,
            missing_prob: 0.0,
            ellipse_m: 1.0,
            sensitivity_decay_m: 0.5,
            max_sensitive_links: Some(15),
            seed,
        }
    }

    /// 12-node bedroom, 5 channels at 0.1796 s, sleeper at [`NAP_CHEST`],
    /// 66 minutes with an occasional movement.
    pub fn nap(seed: u64) -> Self {
        let duration_s = 66.0 * 60.0;
        Self {
            nodes: nap_layout(),
            channels: 5,
            period_s: 0.1796,
            duration_s,
            person: Person {
                position: NAP_CHEST,
                rate_bpm: 12.0,
                amplitude_db: 0.5,
            },
            motion_events: MotionEvent::periodic(300.0, 600.0, duration_s, 0.2, 3.0, 3.0),
            noise_sigma_db: 0.5,
            baseline_db: (-85.0, -45.0),
            quantize: true,
            missing_prob: 0.0,
            ellipse_m: 1.0,
            sensitivity_decay_m: 0.5,
            max_sensitive_links: None,
            seed,
        }
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s / self.period_s + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        validate_nodes(&self.nodes)?;
        if self.nodes.len() < 2 {
            return Err(Error::config("scenario needs at least 2 nodes"));
        }
        if self.channels < 1 {
            return Err(Error::config("scenario needs at least 1 channel"));
        }
        if !(self.period_s > 0.0 && self.period_s.is_finite()) {
            return Err(Error::config(format!("invalid sampling period {}", self.period_s)));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::config(format!("invalid duration {}", self.duration_s)));
        }
        let nyquist_bpm = 60.0 / (2.0 * self.period_s);
        let p = &self.person;
        if !(p.rate_bpm > 0.0 && p.rate_bpm < nyquist_bpm) {
            return Err(Error::config(format!(
                "breathing rate must be in (0, {nyquist_bpm}) bpm, got {}",
                p.rate_bpm
            )));
        }
        if !p.position.is_finite() || !p.amplitude_db.is_finite() || p.amplitude_db < 0.0 {
            return Err(Error::config("invalid person position or amplitude"));
        }
        if !(self.noise_sigma_db >= 0.0 && self.noise_sigma_db.is_finite()) {
            return Err(Error::config(format!("invalid noise sigma {}", self.noise_sigma_db)));
        }
        let (lo, hi) = self.baseline_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config("invalid baseline range"));
        }
        if !(0.0..1.0).contains(&self.missing_prob) {
            return Err(Error::config(format!("missing probability must be in [0, 1), got {}", self.missing_prob)));
        }
        if !(self.ellipse_m > 0.0 && self.sensitivity_decay_m > 0.0) {
            return Err(Error::config("ellipse size and sensitivity decay must be positive"));
        }
        for e in &self.motion_events {
            if !(e.time_s.is_finite()
                && (0.0..=1.0).contains(&e.link_fraction)
                && e.step_db.is_finite()
                && e.transient_s >= 0.0)
            {
                return Err(Error::config(format!("invalid motion event {e:?}")));
            }
        }
        Ok(())
    }
}

/// What the simulator knows and the estimators should recover.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub rate_bpm: f64,
    pub position: Point,
    pub motion_times_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub trace: Trace,
    pub truth: GroundTruth,
    /// Breathing sensitivity of each link, aligned with `trace.series`.
    pub sensitivity: Vec<f64>,
    /// Links touched by each motion event, as indices into `trace.series`.
    pub affected_links: Vec<Vec<usize>>,
}

fn excess_path(a: Point, b: Point, person: Point) -> f64 {
    a.distance(&person) + b.distance(&person) - a.distance(&b)
}

/// Breathing sensitivity of the link between `a` and `b`.
pub fn link_sensitivity(a: Point, b: Point, person: Point, ellipse_m: f64, decay_m: f64) -> f64 {
    let excess = (excess_path(a, b, person) - ellipse_m).max(0.0);
    (-excess / decay_m).exp()
}

fn link_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const EVENT_STREAM_BASE: u64 = 1 << 40;

pub fn generate(config: &ScenarioConfig) -> Result<Simulation> {
    config.validate()?;
    let ids: Vec<NodeId> = config.nodes.iter().map(|n| n.id).collect();
    let links = enumerate_links_among(&ids, config.channels)?;
    let position = |id: NodeId| {
        config
            .nodes
            .iter()
            .find(|n| n.id == id)
            .map(|n| n.position)
            .expect("links are built from node ids")
    };
    let person = config.person.position;

    let mut sensitivity: Vec<f64> = links
        .iter()
        .map(|l| {
            link_sensitivity(
                position(l.tx),
                position(l.rx),
                person,
                config.ellipse_m,
                config.sensitivity_decay_m,
            )
        })
        .collect();
    if let Some(keep) = config.max_sensitive_links {
        let mut order: Vec<usize> = (0..links.len()).collect();
        let excess: Vec<f64> = links
            .iter()
            .map(|l| excess_path(position(l.tx), position(l.rx), person))
            .collect();
        order.sort_by(|&i, &j| excess[i].total_cmp(&excess[j]).then(i.cmp(&j)));
        for &i in &order[keep.min(order.len())..] {
            sensitivity[i] = 0.0;
        }
    }

    let n_samples = config.sample_count();
    let period = config.period_s;
    let sample_range = |t0: f64, t1: f64| {
        let a = ((t0 / period).ceil().max(0.0) as usize).min(n_samples);
        let b = ((t1 / period).ceil().max(0.0) as usize).min(n_samples);
        a..b.max(a)
    };

    // motion[l] collects the event contribution of link l, built per event
    let mut motion: Vec<Option<Vec<f64>>> = vec![None; links.len()];
    let mut affected_links = Vec::with_capacity(config.motion_events.len());
    for (e, event) in config.motion_events.iter().enumerate() {
        let mut rng = link_rng(config.seed, EVENT_STREAM_BASE + e as u64);
        let count = ((event.link_fraction * links.len() as f64).round() as usize).min(links.len());
        let mut affected = sample(&mut rng, links.len(), count).into_vec();
        affected.sort_unstable();
        let walk = Normal::new(0.0, event.step_db.abs() / 4.0).map_err(|e| Error::config(e.to_string()))?;
        let transient = sample_range(event.time_s, event.time_s + event.transient_s);
        let settled = sample_range(event.time_s + event.transient_s, f64::INFINITY);
        for &l in &affected {
            let m = motion[l].get_or_insert_with(|| vec![0.0; n_samples]);
            let mut level = 0.0;
            for n in transient.clone() {
                level += walk.sample(&mut rng);
                m[n] += level;
            }
            for n in settled.clone() {
                m[n] += event.step_db;
            }
        }
        affected_links.push(affected);
    }

    let noise = Normal::new(0.0, config.noise_sigma_db).map_err(|e| Error::config(e.to_string()))?;
    let omega = TAU * config.person.rate_bpm / 60.0 * period;
    let (lo, hi) = config.baseline_db;
    let series = links
        .iter()
        .enumerate()
        .map(|(l, link)| {
            let mut rng = link_rng(config.seed, l as u64);
            let baseline = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            let phase = rng.gen_range(0.0..TAU);
            let amplitude = config.person.amplitude_db * sensitivity[l];
            let samples = (0..n_samples)
                .map(|n| {
                    let mut r = baseline + amplitude * (omega * n as f64 + phase).sin() + noise.sample(&mut rng);
                    if let Some(m) = &motion[l] {
                        r += m[n];
                    }
                    if config.quantize {
                        r = r.round();
                    }
                    let dropped = config.missing_prob > 0.0 && rng.gen_bool(config.missing_prob);
                    (!dropped).then_some(r)
                })
                .collect();
            RssSeries::new(*link, period, samples)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Simulation {
        trace: Trace {
            period_s: period,
            channels: config.channels,
            nodes: config.nodes.clone(),
            series,
        },
        truth: GroundTruth {
            rate_bpm: config.person.rate_bpm,
            position: person,
            motion_times_s: config.motion_events.iter().map(|e| e.time_s).collect(),
        },
        sensitivity,
        affected_links,
    })
}

/// Links of a fully connected scenario in trace order.
pub fn scenario_links(config: &ScenarioConfig) -> Result<Vec<LinkKey>> {
    let ids: Vec<NodeId> = config.nodes.iter().map(|n| n.id).collect();
    enumerate_links_among(&ids, config.channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silent_scenario_is_flat() {
        let mut c = ScenarioConfig::two_node(1);
        c.person.amplitude_db = 0.0;
        c.noise_sigma_db = 0.0;
        c.baseline_db = (-60.0, -50.0);
        let sim = generate(&c).unwrap();
        for s in &sim.trace.series {
            let first = s.get(0).unwrap();
            assert!((-60.0..-50.0).contains(&first));
            assert!(s.iter().all(|v| v == Some(first)));
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let mut c = ScenarioConfig::two_node(42);
        c.motion_events = MotionEvent::periodic(10.0, 20.0, 60.0, 0.5, 6.0, 2.0);
        c.missing_prob = 0.05;
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a, b);
        c.seed = 43;
        assert_ne!(a.trace, generate(&c).unwrap().trace);
    }

    #[test]
    fn person_on_link_line_is_fully_sensitive() {
        let s = link_sensitivity(Point::new(0.0, 0.0), Point::new(4.0, 0.0), Point::new(1.0, 0.0), 1.0, 0.5);
        assert_eq!(s, 1.0);
        let far = link_sensitivity(Point::new(0.0, 0.0), Point::new(4.0, 0.0), Point::new(2.0, 4.0), 1.0, 0.5);
        assert!(far < 0.01);
    }

    #[test]
    fn sensitive_link_limit() {
        let sim = generate(&ScenarioConfig::apartment(3)).unwrap();
        assert_eq!(sim.trace.series.len(), 4224);
        assert_eq!(sim.sensitivity.iter().filter(|&&s| s > 0.0).count(), 15);
    }

    #[test]
    fn quantized_samples_are_whole_db() {
        let mut c = ScenarioConfig::two_node(5);
        c.quantize = true;
        let sim = generate(&c).unwrap();
        assert!(sim.trace.series[0].iter().flatten().all(|v| v == v.round()));
    }

    #[test]
    fn sample_count_and_layouts() {
        assert_eq!(ScenarioConfig::nap(0).sample_count(), 22048);
        assert_eq!(nap_layout().len(), 12);
        let apt = apartment_layout();
        assert_eq!(apt.len(), 33);
        assert!(validate_nodes(&apt).is_ok());
        assert!(apt.iter().all(|n| (0.0..=7.0).contains(&n.position.x) && (0.0..=8.0).contains(&n.position.y)));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = ScenarioConfig::two_node(0);
        c.person.rate_bpm = 80.0; // Nyquist at 0.428 s is ~70 bpm
        assert!(generate(&c).is_err());
        let mut c = ScenarioConfig::two_node(0);
        c.nodes[1].id = 0;
        assert!(generate(&c).is_err());
        let mut c = ScenarioConfig::two_node(0);
        c.noise_sigma_db = -1.0;
        assert!(generate(&c).is_err());
    }
}
