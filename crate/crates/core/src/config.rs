//! Scenario files.
//!
//! A scenario is a TOML document with a top-level `capacity_kbps`, an ordered
//! `classes` list, one `[class.<name>]` block per listed class and a
//! `[simulation]` block:
//!
//! ```toml
//! capacity_kbps = 6000
//! classes = ["voice", "web"]
//!
//! [class.voice]
//! bandwidth_kbps = 32
//! gamma0 = 0.0
//! gamma_decay = 0.95
//! weight = 3
//! mean_duration_s = 120
//! elastic = false
//!
//! [class.web]
//! bandwidth_kbps = 120
//! gamma0 = 0.6
//! gamma_decay = 0.95
//! weight = 3
//! mean_duration_s = 120
//! elastic = true
//!
//! [simulation]
//! lambda = 0.5
//! dwell_s = 240          # `inf` disables handovers
//! duration_s = 100000
//! warmup_s = 5000
//! seed = 1
//! scheme = "proposed_priority_multilevel"
//! ```
//!
//! A class block may give an explicit `gamma = [...]` row (one factor per
//! priority `0..=M`) instead of `gamma0`/`gamma_decay`. `batches` in the
//! simulation block is optional (default 20). Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::engine::{ScenarioConfig, ScenarioError};
use crate::model::{gamma_row, TrafficClass};
use crate::policy::SchemeKind;

/// The shipped reference scenario.
pub const REFERENCE_CONFIG: &str = include_str!("../config/reference.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing section [{0}]")]
    MissingSection(String),
    #[error("section [{0}] is not listed in `classes`")]
    UnlistedSection(String),
    #[error("[{section}]: {message}")]
    Invalid { section: String, message: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    capacity_kbps: f64,
    classes: Vec<String>,
    #[serde(default)]
    class: BTreeMap<String, RawClass>,
    simulation: Option<RawSimulation>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClass {
    bandwidth_kbps: f64,
    gamma0: Option<f64>,
    gamma_decay: Option<f64>,
    gamma: Option<Vec<f64>>,
    weight: f64,
    mean_duration_s: f64,
    elastic: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    lambda: f64,
    dwell_s: f64,
    duration_s: f64,
    warmup_s: f64,
    seed: u64,
    scheme: String,
    batches: Option<usize>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a scenario from its text.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;

    for name in raw.class.keys() {
        if !raw.classes.contains(name) {
            return Err(ConfigError::UnlistedSection(format!("class.{name}")));
        }
    }
    let num = raw.classes.len();
    let mut classes = Vec::with_capacity(num);
    for name in &raw.classes {
        let section = format!("class.{name}");
        let c = raw.class.get(name).ok_or_else(|| ConfigError::MissingSection(section.clone()))?;
        let invalid = |message: &str| ConfigError::Invalid { section: section.clone(), message: message.into() };
        let gamma = match (&c.gamma, c.gamma0) {
            (Some(row), None) if c.gamma_decay.is_none() => row.clone(),
            (None, Some(g0)) => gamma_row(g0, c.gamma_decay.unwrap_or(1.0), num),
            (Some(_), _) => return Err(invalid("give either `gamma` or `gamma0`/`gamma_decay`, not both")),
            (None, None) => return Err(invalid("missing `gamma0` (or an explicit `gamma` row)")),
        };
        classes.push(TrafficClass {
            name: name.clone(),
            requested_kbps: c.bandwidth_kbps,
            gamma,
            arrival_weight: c.weight,
            mean_duration: c.mean_duration_s,
            elastic: c.elastic,
        });
    }

    let sim = raw.simulation.ok_or_else(|| ConfigError::MissingSection("simulation".into()))?;
    let scheme: SchemeKind = sim
        .scheme
        .parse()
        .map_err(|message| ConfigError::Invalid { section: "simulation".into(), message })?;
    let config = ScenarioConfig {
        capacity_kbps: raw.capacity_kbps,
        classes,
        lambda: sim.lambda,
        mean_dwell: sim.dwell_s.is_finite().then_some(sim.dwell_s),
        scheme,
        sim_duration: sim.duration_s,
        warmup: sim.warmup_s,
        seed: sim.seed,
        batches: sim.batches.unwrap_or(20),
        check_invariants: false,
    };
    config.prepare()?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config(&text)
}
