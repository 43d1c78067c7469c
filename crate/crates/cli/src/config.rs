//! Experiment configuration: flat `key = value` lines with dotted keys.
//!
//! ```text
//! geometry.source.1 = 0, 0.25
//! geometry.source.2 = 0, -0.25
//! geometry.destination = 2, 0
//! geometry.relay.y = 0
//! geometry.relay.x.start = 0.1
//! geometry.relay.x.stop = 1.9
//! geometry.relay.x.points = 25
//! channel.gamma = 3
//! channel.theta = 0.5
//! budget.source.1 = 10
//! budget.relay = 10
//! ensemble.n = 20000
//! ensemble.seed = 2024
//! solver.kkt_tol = 1e-7
//! output.path = sweep.csv
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Every problem found is
//! reported; a config is returned only when there are none.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use marc_core::{Budget, Geometry, SolverConfig};
use thiserror::Error;

pub const DEFAULT_GAMMA: f64 = 3.0;
pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_SAMPLES: usize = 20_000;
pub const DEFAULT_POWER: f64 = 10.0;
pub const DEFAULT_SEED: u64 = 2024;
pub const DEFAULT_POINTS: usize = 25;
/// Largest gap between the DF and cutset values that still counts as a
/// sum-capacity match.
pub const DEFAULT_CAPACITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{key}: {msg}")]
    Field { key: String, msg: String },
    #[error("missing geometry")]
    MissingGeometry,
    #[error("unknown key {0}")]
    UnknownKey(String),
}

fn field(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Every problem found in a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Relay x-coordinates `start, ..., stop`, evenly spaced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRange {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl SweepRange {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.start + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sources: Vec<[f64; 2]>,
    pub destination: [f64; 2],
    pub relay_y: f64,
    pub relay_x: SweepRange,
    pub gamma: f64,
    pub theta: f64,
    pub source_power: Vec<f64>,
    pub relay_power: f64,
    pub samples: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub capacity_tol: f64,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    /// Two sources at `(0, ±0.25)`, destination at `(2, 0)`, relay swept
    /// along the axis from 0.1 to 1.9.
    fn default() -> Self {
        ExperimentConfig {
            sources: vec![[0.0, 0.25], [0.0, -0.25]],
            destination: [2.0, 0.0],
            relay_y: 0.0,
            relay_x: SweepRange {
                start: 0.1,
                stop: 1.9,
                points: DEFAULT_POINTS,
            },
            gamma: DEFAULT_GAMMA,
            theta: DEFAULT_THETA,
            source_power: vec![DEFAULT_POWER; 2],
            relay_power: DEFAULT_POWER,
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
            solver: SolverConfig::default(),
            capacity_tol: DEFAULT_CAPACITY_TOL,
            output: Some(PathBuf::from("sweep.csv")),
        }
    }
}

impl ExperimentConfig {
    /// Geometry with the relay at `x` on the sweep line.
    pub fn geometry_at(&self, x: f64) -> Result<Geometry, marc_core::FadingError> {
        Geometry::new(self.sources.clone(), [x, self.relay_y], self.destination, self.gamma)
    }

    pub fn budget(&self) -> Result<Budget, marc_core::FadingError> {
        let mut p = self.source_power.clone();
        p.push(self.relay_power);
        Budget::new(p, self.theta)
    }

    /// Config text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        for (i, s) in self.sources.iter().enumerate() {
            put(&format!("geometry.source.{}", i + 1), point(s));
        }
        put("geometry.destination", point(&self.destination));
        put("geometry.relay.y", format!("{:?}", self.relay_y));
        put("geometry.relay.x.start", format!("{:?}", self.relay_x.start));
        put("geometry.relay.x.stop", format!("{:?}", self.relay_x.stop));
        put("geometry.relay.x.points", self.relay_x.points.to_string());
        put("channel.gamma", format!("{:?}", self.gamma));
        put("channel.theta", format!("{:?}", self.theta));
        for (i, p) in self.source_power.iter().enumerate() {
            put(&format!("budget.source.{}", i + 1), format!("{p:?}"));
        }
        put("budget.relay", format!("{:?}", self.relay_power));
        put("ensemble.n", self.samples.to_string());
        put("ensemble.seed", self.seed.to_string());
        put("solver.power_tol", format!("{:e}", self.solver.power_tol));
        put("solver.kkt_tol", format!("{:e}", self.solver.kkt_tol));
        put("solver.iter_tol", format!("{:e}", self.solver.iter_tol));
        put("solver.max_iters", self.solver.max_iters.to_string());
        put("solver.alpha_tol", format!("{:e}", self.solver.alpha_tol));
        put("solver.capacity_tol", format!("{:e}", self.capacity_tol));
        if let Some(p) = &self.output {
            put("output.path", p.display().to_string());
        }
        out
    }
}

fn point(p: &[f64; 2]) -> String {
    format!("{:?}, {:?}", p[0], p[1])
}

fn parse_point(v: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [x, y] => Ok([parse_num(x)?, parse_num(y)?]),
        _ => Err(format!("expected `x, y`, got `{v}`")),
    }
}

fn parse_num<T: FromStr>(v: &str) -> Result<T, String> {
    v.trim().parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn finite(v: &str) -> Result<f64, String> {
    let x: f64 = parse_num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("`{v}` is not finite"))
    }
}

/// Collects numbered keys like `geometry.source.N` into a dense list.
fn numbered<T>(
    prefix: &str,
    entries: &mut BTreeMap<String, (usize, String)>,
    parse: impl Fn(&str) -> Result<T, String>,
    errors: &mut Vec<ConfigError>,
) -> Vec<T> {
    let keys: Vec<String> = entries.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
    let mut found: BTreeMap<usize, T> = BTreeMap::new();
    for key in keys {
        let (_, value) = entries.remove(&key).expect("key listed above");
        match key[prefix.len()..].parse::<usize>() {
            Ok(i) if i >= 1 => match parse(&value) {
                Ok(v) => {
                    found.insert(i, v);
                }
                Err(msg) => errors.push(field(&key, msg)),
            },
            _ => errors.push(ConfigError::UnknownKey(key)),
        }
    }
    let len = found.keys().next_back().copied().unwrap_or(0);
    if found.len() != len {
        errors.push(field(
            prefix.trim_end_matches('.'),
            format!("indices must run 1..={len} without gaps"),
        ));
    }
    found.into_values().collect()
}

/// Parses and validates config text. Absent keys take their defaults, except
/// the geometry, which has to be given.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let mut errors = Vec::new();
    let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(ConfigError::Syntax {
                line: n + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            });
            continue;
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if key.is_empty() || value.is_empty() {
            errors.push(ConfigError::Syntax {
                line: n + 1,
                msg: "empty key or value".into(),
            });
            continue;
        }
        if let Some((first, _)) = entries.get(&key) {
            errors.push(ConfigError::Syntax {
                line: n + 1,
                msg: format!("{key} already set on line {first}"),
            });
            continue;
        }
        entries.insert(key, (n + 1, value));
    }

    let defaults = ExperimentConfig::default();
    let mut cfg = defaults.clone();
    let has_geometry = entries.keys().any(|k| k.starts_with("geometry."));
    let sources = numbered("geometry.source.", &mut entries, parse_point, &mut errors);
    let powers = numbered("budget.source.", &mut entries, finite, &mut errors);
    let mut take = |key: &str| entries.remove(key).map(|(_, v)| v);

    macro_rules! value {
        ($key:expr, $parse:expr, $slot:expr) => {
            if let Some(v) = take($key) {
                match $parse(&v) {
                    Ok(x) => $slot = x,
                    Err(msg) => errors.push(field($key, msg)),
                }
            }
        };
    }

    let destination = take("geometry.destination");
    let start = take("geometry.relay.x.start");
    let stop = take("geometry.relay.x.stop");
    value!("geometry.relay.y", finite, cfg.relay_y);
    value!("geometry.relay.x.points", parse_num::<usize>, cfg.relay_x.points);
    value!("channel.gamma", finite, cfg.gamma);
    value!("channel.theta", finite, cfg.theta);
    value!("budget.relay", finite, cfg.relay_power);
    value!("ensemble.n", parse_num::<usize>, cfg.samples);
    value!("ensemble.seed", parse_num::<u64>, cfg.seed);
    value!("solver.power_tol", finite, cfg.solver.power_tol);
    value!("solver.kkt_tol", finite, cfg.solver.kkt_tol);
    value!("solver.iter_tol", finite, cfg.solver.iter_tol);
    value!("solver.max_iters", parse_num::<usize>, cfg.solver.max_iters);
    value!("solver.alpha_tol", finite, cfg.solver.alpha_tol);
    value!("solver.capacity_tol", finite, cfg.capacity_tol);
    cfg.output = take("output.path").map(PathBuf::from);

    if !has_geometry {
        errors.push(ConfigError::MissingGeometry);
    } else {
        if sources.is_empty() {
            errors.push(field("geometry.source", "at least one source is required"));
        }
        match destination {
            Some(v) => match parse_point(&v) {
                Ok(p) => cfg.destination = p,
                Err(msg) => errors.push(field("geometry.destination", msg)),
            },
            None => errors.push(field("geometry.destination", "missing")),
        }
        for (key, raw, slot) in [
            ("geometry.relay.x.start", start, &mut cfg.relay_x.start),
            ("geometry.relay.x.stop", stop, &mut cfg.relay_x.stop),
        ] {
            match raw.map(|v| finite(&v)) {
                Some(Ok(x)) => *slot = x,
                Some(Err(msg)) => errors.push(field(key, msg)),
                None => errors.push(field(key, "missing")),
            }
        }
    }
    for key in entries.into_keys() {
        errors.push(ConfigError::UnknownKey(key));
    }

    if !sources.is_empty() {
        cfg.sources = sources;
    }
    let k = cfg.sources.len();
    if powers.is_empty() {
        cfg.source_power = vec![DEFAULT_POWER; k];
    } else if powers.len() != k {
        errors.push(field(
            "budget.source",
            format!("{} limits for {k} sources", powers.len()),
        ));
    } else {
        cfg.source_power = powers;
    }
    if k > marc_core::casealgo::MAX_USERS_CUTSET {
        errors.push(field(
            "geometry.source",
            format!(
                "at most {} sources are supported",
                marc_core::casealgo::MAX_USERS_CUTSET
            ),
        ));
    }
    if !(cfg.theta > 0.0 && cfg.theta < 1.0) {
        errors.push(field("channel.theta", "theta out of (0,1)"));
    }
    if !(cfg.gamma > 0.0) {
        errors.push(field("channel.gamma", "gamma must be positive"));
    }
    if cfg.source_power.iter().chain([&cfg.relay_power]).any(|p| *p < 0.0) {
        errors.push(field("budget", "power limits must be nonnegative"));
    }
    if cfg.relay_x.points == 0 {
        errors.push(field("geometry.relay.x.points", "need at least one sweep point"));
    }
    if cfg.samples == 0 {
        errors.push(field("ensemble.n", "need at least one sample"));
    }
    if cfg.solver.validate().is_err() {
        errors.push(field("solver", "tolerances and max_iters must be positive"));
    }
    if !(cfg.capacity_tol > 0.0) {
        errors.push(field("solver.capacity_tol", "must be positive"));
    }
    if errors.is_empty() {
        for x in cfg.relay_x.values() {
            if let Err(e) = cfg.geometry_at(x) {
                errors.push(field("geometry", format!("relay at x={x}: {e}")));
            }
        }
    }

    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errors))
    }
}
