//! Text file formats: traces, node and meta companions, ground truth,
//! run configuration, scenario files and result CSVs.
//!
//! A trace `run.csv` travels with `run.nodes.csv` (node coordinates),
//! `run.meta` (sampling period and network size) and, for simulated traces,
//! `run.truth`. Configuration-like files are flat `key = value` lines; `#`
//! starts a comment.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Channel, LinkKey, NodeGeometry, NodeId, Point, RssSeries, Trace};
use crate::rate::{EstimatorConfig, Method};
use crate::simulator::{GroundTruth, MotionEvent, ScenarioConfig};
use crate::tomography::{BreathingImage, ImagingParams, PixelGrid};

pub const TRACE_HEADER: [&str; 5] = ["sample_index", "tx", "rx", "channel", "rss_db"];
pub const NODES_HEADER: [&str; 3] = ["node_id", "x_m", "y_m"];
pub const RATE_HEADER: [&str; 4] = ["window_end_time_s", "f_hat_bpm", "motion_flag", "median_bpm"];
pub const LOCATION_HEADER: [&str; 5] = ["window_end_time_s", "x_m", "y_m", "max_pixel_value", "degenerate"];

/// `dir/run.csv` -> `dir/run.<suffix>`.
pub fn companion_path(trace: &Path, suffix: &str) -> PathBuf {
    let stem = trace.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    trace.with_file_name(format!("{stem}.{suffix}"))
}

pub fn nodes_path(trace: &Path) -> PathBuf {
    companion_path(trace, "nodes.csv")
}

pub fn meta_path(trace: &Path) -> PathBuf {
    companion_path(trace, "meta")
}

pub fn truth_path(trace: &Path) -> PathBuf {
    companion_path(trace, "truth")
}

/// Writes through a temporary file in the destination directory and renames
/// it into place.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `key = value` pairs with their line numbers.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, i + 1, format!("expected key = value, got {line:?}")))?;
        let key = k.trim().to_string();
        if seen.insert(key.clone(), i + 1).is_some() {
            return Err(Error::parse(path, i + 1, format!("duplicate key {key}")));
        }
        out.push((key, v.trim().to_string(), i + 1));
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(value: &str, key: &str, path: &Path, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::parse(path, line, format!("{key}: {e}")))
}

fn parse_bool(value: &str, key: &str, path: &Path, line: usize) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::parse(path, line, format!("{key}: expected true/false, got {value:?}"))),
    }
}

/// Comma-separated list, e.g. `0,2,4,6`.
pub fn parse_id_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::config(format!("empty list {text:?}")));
    }
    items
        .into_iter()
        .map(|s| s.parse().map_err(|e| Error::config(format!("bad list item {s:?}: {e}"))))
        .collect()
}

fn csv_writer(w: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn csv_to_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn check_header(reader: &mut csv::Reader<fs::File>, expected: &[&str], path: &Path) -> Result<()> {
    let header = reader.headers()?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != expected {
        return Err(Error::parse(
            path,
            1,
            format!("expected header {}, got {}", expected.join(","), found.join(",")),
        ));
    }
    Ok(())
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, path: &Path, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = record.get(i).ok_or_else(|| Error::parse(path, line, format!("missing column {i}")))?;
    raw.parse()
        .map_err(|e| Error::parse(path, line, format!("column {i} ({raw:?}): {e}")))
}

/// Sampling period and network size of a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceMeta {
    pub period_s: f64,
    pub nodes: usize,
    pub channels: usize,
}

pub fn write_meta(path: &Path, meta: &TraceMeta) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "period_s = {}", meta.period_s)?;
        writeln!(w, "nodes = {}", meta.nodes)?;
        writeln!(w, "channels = {}", meta.channels)
    })
}

pub fn read_meta(path: &Path) -> Result<TraceMeta> {
    let text = read_to_string(path)?;
    let mut period_s = None;
    let mut nodes = None;
    let mut channels = None;
    for (k, v, line) in parse_key_values(&text, path)? {
        match k.as_str() {
            "period_s" => period_s = Some(parse_value::<f64>(&v, &k, path, line)?),
            "nodes" => nodes = Some(parse_value(&v, &k, path, line)?),
            "channels" => channels = Some(parse_value(&v, &k, path, line)?),
            _ => return Err(Error::parse(path, line, format!("unknown key {k}"))),
        }
    }
    let missing = |k: &str| Error::parse(path, 0, format!("missing key {k}"));
    let meta = TraceMeta {
        period_s: period_s.ok_or_else(|| missing("period_s"))?,
        nodes: nodes.ok_or_else(|| missing("nodes"))?,
        channels: channels.ok_or_else(|| missing("channels"))?,
    };
    if !(meta.period_s > 0.0 && meta.period_s.is_finite()) || meta.channels == 0 {
        return Err(Error::parse(path, 0, "period_s must be positive and channels >= 1"));
    }
    Ok(meta)
}

pub fn write_nodes(path: &Path, nodes: &[NodeGeometry]) -> Result<()> {
    write_atomic(path, |w| {
        let mut csv = csv_writer(w);
        csv.write_record(NODES_HEADER).map_err(csv_to_io)?;
        for n in nodes {
            csv.write_record([n.id.to_string(), n.position.x.to_string(), n.position.y.to_string()])
                .map_err(csv_to_io)?;
        }
        csv.flush()
    })
}

pub fn read_nodes(path: &Path) -> Result<Vec<NodeGeometry>> {
    let mut reader = open_csv(path)?;
    check_header(&mut reader, &NODES_HEADER, path)?;
    let mut nodes = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        nodes.push(NodeGeometry::new(
            field(&rec, 0, path, line)?,
            field(&rec, 1, path, line)?,
            field(&rec, 2, path, line)?,
        ));
    }
    crate::model::validate_nodes(&nodes)?;
    Ok(nodes)
}

/// Writes the sample rows of a trace: every link at sample 0, then every
/// link at sample 1, and so on; a missing sample leaves `rss_db` empty.
pub fn write_trace_csv(path: &Path, trace: &Trace) -> Result<()> {
    let count = trace.sample_count();
    write_atomic(path, |w| {
        writeln!(w, "{}", TRACE_HEADER.join(","))?;
        let mut line = String::new();
        for n in 0..count {
            for s in &trace.series {
                if n >= s.len() {
                    continue;
                }
                line.clear();
                let l = s.link;
                let _ = write!(line, "{n},{},{},{},", l.tx, l.rx, l.channel);
                if let Some(v) = s.get(n) {
                    let _ = write!(line, "{v}");
                }
                line.push('\n');
                w.write_all(line.as_bytes())?;
            }
        }
        Ok(())
    })
}

/// Writes a trace with its nodes and meta companions.
pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    write_trace_csv(path, trace)?;
    write_nodes(&nodes_path(path), &trace.nodes)?;
    write_meta(
        &meta_path(path),
        &TraceMeta {
            period_s: trace.period_s,
            nodes: trace.nodes.len(),
            channels: trace.channels,
        },
    )
}

/// Parses sample rows into per-link series (channel-major link order).
pub fn read_trace_csv(path: &Path, meta: &TraceMeta) -> Result<Vec<RssSeries>> {
    let mut reader = open_csv(path)?;
    check_header(&mut reader, &TRACE_HEADER, path)?;
    let mut index: HashMap<LinkKey, usize> = HashMap::new();
    let mut columns: Vec<(LinkKey, Vec<Option<f64>>)> = Vec::new();
    let mut last_index = 0usize;
    let mut record = csv::StringRecord::new();
    let mut line = 1;
    while reader.read_record(&mut record)? {
        line += 1;
        let n: usize = field(&record, 0, path, line)?;
        let tx: NodeId = field(&record, 1, path, line)?;
        let rx: NodeId = field(&record, 2, path, line)?;
        let channel: Channel = field(&record, 3, path, line)?;
        let raw = record.get(4).unwrap_or("");
        let rss = if raw.is_empty() {
            None
        } else {
            let v: f64 = field(&record, 4, path, line)?;
            if !v.is_finite() {
                return Err(Error::parse(path, line, "non-finite rss_db"));
            }
            Some(v)
        };
        if n < last_index {
            return Err(Error::parse(path, line, "sample_index decreases"));
        }
        last_index = n;
        if channel as usize >= meta.channels {
            return Err(Error::parse(path, line, format!("channel {channel} >= {}", meta.channels)));
        }
        let link = LinkKey::new(tx, rx, channel).map_err(|e| Error::parse(path, line, e.to_string()))?;
        let slot = *index.entry(link).or_insert_with(|| {
            columns.push((link, Vec::new()));
            columns.len() - 1
        });
        let samples = &mut columns[slot].1;
        if n < samples.len() {
            return Err(Error::parse(path, line, format!("duplicate row for sample {n} on {link:?}")));
        }
        samples.resize(n, None);
        samples.push(rss);
    }
    if columns.is_empty() {
        return Err(Error::parse(path, line, "trace has no samples"));
    }
    columns.sort_by_key(|c| c.0);
    columns
        .into_iter()
        .map(|(link, samples)| RssSeries::new(link, meta.period_s, samples))
        .collect()
}

/// Reads a trace and its nodes and meta companions.
pub fn read_trace(path: &Path) -> Result<Trace> {
    let meta = read_meta(&meta_path(path))?;
    let nodes_file = nodes_path(path);
    let nodes = if nodes_file.exists() {
        read_nodes(&nodes_file)?
    } else {
        Vec::new()
    };
    let series = read_trace_csv(path, &meta)?;
    Ok(Trace {
        period_s: meta.period_s,
        channels: meta.channels,
        nodes,
        series,
    })
}

pub fn write_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "rate_bpm = {}", truth.rate_bpm)?;
        writeln!(w, "x_m = {}", truth.position.x)?;
        writeln!(w, "y_m = {}", truth.position.y)?;
        let times: Vec<String> = truth.motion_times_s.iter().map(f64::to_string).collect();
        writeln!(w, "motion_times_s = {}", times.join(","))
    })
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    let text = read_to_string(path)?;
    let mut rate = None;
    let mut x = None;
    let mut y = None;
    let mut motion = Vec::new();
    for (k, v, line) in parse_key_values(&text, path)? {
        match k.as_str() {
            "rate_bpm" => rate = Some(parse_value(&v, &k, path, line)?),
            "x_m" => x = Some(parse_value(&v, &k, path, line)?),
            "y_m" => y = Some(parse_value(&v, &k, path, line)?),
            "motion_times_s" if v.is_empty() => {}
            "motion_times_s" => {
                motion = parse_id_list(&v).map_err(|e| Error::parse(path, line, e.to_string()))?
            }
            _ => return Err(Error::parse(path, line, format!("unknown key {k}"))),
        }
    }
    let missing = |k: &str| Error::parse(path, 0, format!("missing key {k}"));
    Ok(GroundTruth {
        rate_bpm: rate.ok_or_else(|| missing("rate_bpm"))?,
        position: Point::new(x.ok_or_else(|| missing("x_m"))?, y.ok_or_else(|| missing("y_m"))?),
        motion_times_s: motion,
    })
}

/// Everything a run needs besides the trace itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub estimator: EstimatorConfig,
    pub imaging: ImagingParams,
    /// Mean removal used for rate estimates.
    pub rate_method: Method,
    /// Mean removal used for the link powers fed to imaging.
    pub localize_method: Method,
    pub rate_out: Option<PathBuf>,
    pub location_out: Option<PathBuf>,
    pub image_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorConfig::default(),
            imaging: ImagingParams::default(),
            rate_method: Method::Breakpoint,
            localize_method: Method::Basic,
            rate_out: None,
            location_out: None,
            image_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_str_at(text: &str, path: &Path) -> Result<Self> {
        let mut c = RunConfig::default();
        for (k, v, line) in parse_key_values(text, path)? {
            let e = &mut c.estimator;
            let im = &mut c.imaging;
            match k.as_str() {
                "window_samples" => e.window = parse_value(&v, &k, path, line)?,
                "f_min_hz" => e.f_min_hz = parse_value(&v, &k, path, line)?,
                "f_max_hz" => e.f_max_hz = parse_value(&v, &k, path, line)?,
                "grid_step_hz" => e.grid_step_hz = parse_value(&v, &k, path, line)?,
                "ttest_q" => e.ttest.q = parse_value(&v, &k, path, line)?,
                "ttest_epsilon_db" => e.ttest.epsilon = parse_value(&v, &k, path, line)?,
                "ttest_gamma" => e.ttest.gamma = parse_value(&v, &k, path, line)?,
                "hop_s" => e.hop_s = parse_value(&v, &k, path, line)?,
                "median_span_s" => e.median_span_s = parse_value(&v, &k, path, line)?,
                "pixel_width_m" => im.pixel_width_m = parse_value(&v, &k, path, line)?,
                "pixel_variance" => im.pixel_variance = parse_value(&v, &k, path, line)?,
                "correlation_distance_m" => im.correlation_distance_m = parse_value(&v, &k, path, line)?,
                "ellipse_m" => im.ellipse_m = parse_value(&v, &k, path, line)?,
                "grid_padding_m" => im.padding_m = parse_value(&v, &k, path, line)?,
                "rate_method" => c.rate_method = parse_value(&v, &k, path, line)?,
                "localize_method" => c.localize_method = parse_value(&v, &k, path, line)?,
                "rate_out" => c.rate_out = Some(PathBuf::from(v)),
                "location_out" => c.location_out = Some(PathBuf::from(v)),
                "image_dir" => c.image_dir = Some(PathBuf::from(v)),
                _ => return Err(Error::parse(path, line, format!("unknown key {k}"))),
            }
        }
        c.imaging.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_str_at(&read_to_string(path)?, path)
    }

    pub fn to_key_values(&self) -> String {
        let e = &self.estimator;
        let im = &self.imaging;
        let mut s = String::new();
        let _ = writeln!(s, "window_samples = {}", e.window);
        let _ = writeln!(s, "f_min_hz = {}", e.f_min_hz);
        let _ = writeln!(s, "f_max_hz = {}", e.f_max_hz);
        let _ = writeln!(s, "grid_step_hz = {}", e.grid_step_hz);
        let _ = writeln!(s, "ttest_q = {}", e.ttest.q);
        let _ = writeln!(s, "ttest_epsilon_db = {}", e.ttest.epsilon);
        let _ = writeln!(s, "ttest_gamma = {}", e.ttest.gamma);
        let _ = writeln!(s, "hop_s = {}", e.hop_s);
        let _ = writeln!(s, "median_span_s = {}", e.median_span_s);
        let _ = writeln!(s, "pixel_width_m = {}", im.pixel_width_m);
        let _ = writeln!(s, "pixel_variance = {}", im.pixel_variance);
        let _ = writeln!(s, "correlation_distance_m = {}", im.correlation_distance_m);
        let _ = writeln!(s, "ellipse_m = {}", im.ellipse_m);
        let _ = writeln!(s, "grid_padding_m = {}", im.padding_m);
        let _ = writeln!(s, "rate_method = {}", self.rate_method);
        let _ = writeln!(s, "localize_method = {}", self.localize_method);
        for (k, v) in [
            ("rate_out", &self.rate_out),
            ("location_out", &self.location_out),
            ("image_dir", &self.image_dir),
        ] {
            if let Some(p) = v {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
        s
    }
}

/// Parses a scenario file: a `preset` (`nap`, `apartment` or `two_node`)
/// plus overrides. Periodic motion is given by `motion_*` keys; setting
/// `motion_interval_s = 0` removes all events. A relative `nodes_file` is
/// resolved against the scenario file's directory.
pub fn read_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = read_to_string(path)?;
    let pairs = parse_key_values(&text, path)?;
    let lookup: HashMap<&str, (&str, usize)> = pairs.iter().map(|(k, v, l)| (k.as_str(), (v.as_str(), *l))).collect();
    let seed: u64 = match lookup.get("seed") {
        Some(&(v, l)) => parse_value(v, "seed", path, l)?,
        None => 0,
    };
    let mut c = match lookup.get("preset").map(|p| p.0).unwrap_or("two_node") {
        "nap" => ScenarioConfig::nap(seed),
        "apartment" => ScenarioConfig::apartment(seed),
        "two_node" => ScenarioConfig::two_node(seed),
        other => {
            let line = lookup["preset"].1;
            return Err(Error::parse(path, line, format!("unknown preset {other:?}")));
        }
    };
    let mut first = 30.0;
    let mut interval = None;
    let mut fraction = 0.2;
    let mut step = 6.0;
    let mut transient = 2.0;
    for (k, v, line) in &pairs {
        let (k, v, line) = (k.as_str(), v.as_str(), *line);
        match k {
            "preset" | "seed" => {}
            "duration_s" => c.duration_s = parse_value(v, k, path, line)?,
            "period_s" => c.period_s = parse_value(v, k, path, line)?,
            "channels" => c.channels = parse_value(v, k, path, line)?,
            "rate_bpm" => c.person.rate_bpm = parse_value(v, k, path, line)?,
            "person_x_m" => c.person.position.x = parse_value(v, k, path, line)?,
            "person_y_m" => c.person.position.y = parse_value(v, k, path, line)?,
            "amplitude_db" => c.person.amplitude_db = parse_value(v, k, path, line)?,
            "noise_db" => c.noise_sigma_db = parse_value(v, k, path, line)?,
            "baseline_min_db" => c.baseline_db.0 = parse_value(v, k, path, line)?,
            "baseline_max_db" => c.baseline_db.1 = parse_value(v, k, path, line)?,
            "quantize" => c.quantize = parse_bool(v, k, path, line)?,
            "missing_prob" => c.missing_prob = parse_value(v, k, path, line)?,
            "ellipse_m" => c.ellipse_m = parse_value(v, k, path, line)?,
            "sensitivity_decay_m" => c.sensitivity_decay_m = parse_value(v, k, path, line)?,
            "max_sensitive_links" => {
                c.max_sensitive_links = match v {
                    "none" | "" => None,
                    _ => Some(parse_value(v, k, path, line)?),
                }
            }
            "motion_first_s" => first = parse_value(v, k, path, line)?,
            "motion_interval_s" => interval = Some(parse_value::<f64>(v, k, path, line)?),
            "motion_fraction" => fraction = parse_value(v, k, path, line)?,
            "motion_step_db" => step = parse_value(v, k, path, line)?,
            "motion_transient_s" => transient = parse_value(v, k, path, line)?,
            "nodes_file" => {
                let p = Path::new(v);
                let p = if p.is_relative() {
                    path.parent().unwrap_or(Path::new(".")).join(p)
                } else {
                    p.to_path_buf()
                };
                c.nodes = read_nodes(&p)?;
            }
            _ => return Err(Error::parse(path, line, format!("unknown key {k}"))),
        }
    }
    let motion_keys = ["motion_first_s", "motion_fraction", "motion_step_db", "motion_transient_s"];
    match interval {
        Some(i) if i > 0.0 => {
            c.motion_events = MotionEvent::periodic(first, i, c.duration_s, fraction, step, transient);
        }
        Some(_) => c.motion_events.clear(),
        None if motion_keys.iter().any(|k| lookup.contains_key(k)) => {
            return Err(Error::parse(path, 0, "motion_* keys need motion_interval_s"));
        }
        None => {}
    }
    c.validate()?;
    Ok(c)
}

/// One line of the rate CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub time_s: f64,
    pub bpm: f64,
    pub motion: bool,
    pub median_bpm: f64,
}

pub fn write_rates_to(w: &mut dyn Write, rows: &[RateRow]) -> io::Result<()> {
    writeln!(w, "{}", RATE_HEADER.join(","))?;
    for r in rows {
        writeln!(w, "{:.3},{:.2},{},{:.2}", r.time_s, r.bpm, u8::from(r.motion), r.median_bpm)?;
    }
    Ok(())
}

pub fn write_rates(path: &Path, rows: &[RateRow]) -> Result<()> {
    write_atomic(path, |w| write_rates_to(w, rows))
}

pub fn read_rates(path: &Path) -> Result<Vec<RateRow>> {
    let mut reader = open_csv(path)?;
    check_header(&mut reader, &RATE_HEADER, path)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let flag: u8 = field(&rec, 2, path, line)?;
        rows.push(RateRow {
            time_s: field(&rec, 0, path, line)?,
            bpm: field(&rec, 1, path, line)?,
            motion: flag != 0,
            median_bpm: field(&rec, 3, path, line)?,
        });
    }
    Ok(rows)
}

/// One line of the location CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationRow {
    pub time_s: f64,
    pub location: Point,
    pub max_pixel_value: f64,
    pub degenerate: bool,
}

pub fn write_locations_to(w: &mut dyn Write, rows: &[LocationRow]) -> io::Result<()> {
    writeln!(w, "{}", LOCATION_HEADER.join(","))?;
    for r in rows {
        writeln!(
            w,
            "{:.3},{:.3},{:.3},{:e},{}",
            r.time_s,
            r.location.x,
            r.location.y,
            r.max_pixel_value,
            u8::from(r.degenerate)
        )?;
    }
    Ok(())
}

pub fn write_locations(path: &Path, rows: &[LocationRow]) -> Result<()> {
    write_atomic(path, |w| write_locations_to(w, rows))
}

pub fn read_locations(path: &Path) -> Result<Vec<LocationRow>> {
    let mut reader = open_csv(path)?;
    check_header(&mut reader, &LOCATION_HEADER, path)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let flag: u8 = field(&rec, 4, path, line)?;
        rows.push(LocationRow {
            time_s: field(&rec, 0, path, line)?,
            location: Point::new(field(&rec, 1, path, line)?, field(&rec, 2, path, line)?),
            max_pixel_value: field(&rec, 3, path, line)?,
            degenerate: flag != 0,
        });
    }
    Ok(rows)
}

/// Image as a CSV matrix: one row per grid row (increasing y), one column
/// per grid column (increasing x).
pub fn write_image(path: &Path, image: &BreathingImage, grid: &PixelGrid) -> Result<()> {
    write_atomic(path, |w| {
        for row in image.rows(grid) {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    })
}

pub fn read_image(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|c| c.trim().parse().map_err(|e| Error::parse(path, i + 1, format!("{e}"))))
                .collect()
        })
        .collect()
}

/// `metric,value` CSV.
pub fn write_metrics(path: &Path, metrics: &[(String, String)]) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "metric,value")?;
        for (k, v) in metrics {
            writeln!(w, "{k},{v}")?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::generate;

    #[test]
    fn companion_names() {
        let p = Path::new("/tmp/x/run.csv");
        assert_eq!(nodes_path(p), Path::new("/tmp/x/run.nodes.csv"));
        assert_eq!(meta_path(p), Path::new("/tmp/x/run.meta"));
        assert_eq!(truth_path(p), Path::new("/tmp/x/run.truth"));
    }

    #[test]
    fn key_value_parsing() {
        let p = Path::new("cfg");
        let kv = parse_key_values("# comment\n a = 1 \n\nb=two # trailing\n", p).unwrap();
        assert_eq!(kv, vec![("a".into(), "1".into(), 2), ("b".into(), "two".into(), 4)]);
        assert!(parse_key_values("a = 1\na = 2\n", p).is_err());
        assert!(parse_key_values("just words\n", p).is_err());
    }

    #[test]
    fn default_config_values() {
        let c = RunConfig::from_str_at("", Path::new("empty")).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.estimator.window, 70);
        assert_eq!(c.imaging.ellipse_m, 1.0);
        assert_eq!(c.imaging.pixel_width_m, 0.2);
        assert_eq!(c.imaging.pixel_variance, 2.0);
        assert_eq!(c.imaging.correlation_distance_m, 2.0);
    }

    #[test]
    fn config_round_trips_through_text() {
        let mut c = RunConfig::default();
        c.estimator.window = 167;
        c.estimator.ttest.q = 33;
        c.localize_method = Method::Breakpoint;
        c.image_dir = Some("imgs".into());
        let back = RunConfig::from_str_at(&c.to_key_values(), Path::new("c")).unwrap();
        assert_eq!(back, c);
        assert!(RunConfig::from_str_at("bogus = 1", Path::new("c")).is_err());
        assert!(RunConfig::from_str_at("ttest_q = x", Path::new("c")).is_err());
    }

    #[test]
    fn id_lists() {
        assert_eq!(parse_id_list::<u16>("0, 2,4,6").unwrap(), vec![0, 2, 4, 6]);
        assert!(parse_id_list::<u16>("").is_err());
        assert!(parse_id_list::<u16>("1,x").is_err());
    }

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut cfg = ScenarioConfig::two_node(9);
        cfg.duration_s = 10.0;
        cfg.missing_prob = 0.1;
        let trace = generate(&cfg).unwrap().trace;
        write_trace(&path, &trace).unwrap();
        let back = read_trace(&path).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn trace_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let meta = TraceMeta {
            period_s: 0.5,
            nodes: 2,
            channels: 1,
        };
        let bad = [
            "sample_index,tx,rx,channel,rss_db\n1,0,1,0,-50\n0,0,1,0,-50\n",
            "sample_index,tx,rx,channel,rss_db\n0,0,1,0,-50\n0,0,1,0,-51\n",
            "sample_index,tx,rx,channel,rss_db\n0,0,1,3,-50\n",
            "sample_index,tx,rx,channel,rss_db\n0,1,1,0,-50\n",
            "index,tx,rx,channel,rss\n0,0,1,0,-50\n",
        ];
        for text in bad {
            fs::write(&path, text).unwrap();
            assert!(read_trace_csv(&path, &meta).is_err(), "{text}");
        }
        fs::write(&path, "sample_index,tx,rx,channel,rss_db\n0,0,1,0,-50\n2,0,1,0,\n3,0,1,0,-49.5\n").unwrap();
        let s = read_trace_csv(&path, &meta).unwrap();
        assert_eq!(s[0].iter().collect::<Vec<_>>(), vec![Some(-50.0), None, None, Some(-49.5)]);
    }

    #[test]
    fn scenario_file_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.conf");
        fs::write(
            &path,
            "preset = two_node\nseed = 7\nduration_s = 30\nrate_bpm = 15\nmotion_interval_s = 10\nmotion_step_db = 4\n",
        )
        .unwrap();
        let c = read_scenario(&path).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.person.rate_bpm, 15.0);
        assert_eq!(c.motion_events.len(), 0); // first event at 30 s is past the end
        fs::write(&path, "preset = nap\nmotion_interval_s = 0\n").unwrap();
        assert!(read_scenario(&path).unwrap().motion_events.is_empty());
        fs::write(&path, "preset = moon\n").unwrap();
        assert!(read_scenario(&path).is_err());
        fs::write(&path, "motion_step_db = 3\n").unwrap();
        assert!(read_scenario(&path).is_err());
    }

    #[test]
    fn result_csvs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rates = vec![
            RateRow { time_s: 29.532, bpm: 10.08, motion: false, median_bpm: 10.08 },
            RateRow { time_s: 34.668, bpm: 6.0, motion: true, median_bpm: 8.04 },
        ];
        let p = dir.path().join("r.csv");
        write_rates(&p, &rates).unwrap();
        assert_eq!(read_rates(&p).unwrap(), rates);

        let locs = vec![LocationRow {
            time_s: 29.532,
            location: Point::new(2.5, 3.3),
            max_pixel_value: 12.5,
            degenerate: false,
        }];
        let p = dir.path().join("l.csv");
        write_locations(&p, &locs).unwrap();
        assert_eq!(read_locations(&p).unwrap(), locs);
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.truth");
        let truth = GroundTruth {
            rate_bpm: 10.0,
            position: Point::new(1.25, 4.0),
            motion_times_s: vec![15.0, 45.0],
        };
        write_truth(&p, &truth).unwrap();
        assert_eq!(read_truth(&p).unwrap(), truth);
        let none = GroundTruth { motion_times_s: vec![], ..truth };
        write_truth(&p, &none).unwrap();
        assert_eq!(read_truth(&p).unwrap(), none);
    }
}
