//! Scenario file schema (TOML) and its semantic validation.
//!
//! Units: one slot is one second, demands and rate caps are data units per
//! slot, `steps` counts recorded instants.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::engine::EventKind;
use crate::error::{Error, Result};
use crate::network::{NetworkModel, NodeId, DEFAULT_MAX_HOPS};
use crate::price::PriceModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Slots per period.
    pub period: usize,
    /// Recorded instants `t = 0..steps-1`.
    pub steps: usize,
    #[serde(default = "default_gamma")]
    pub gamma: usize,
    #[serde(default)]
    pub seed: u64,
    /// Convergence tolerance on the update norm.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_hops")]
    pub max_hops: usize,
    /// Agents reported individually in the metrics: an agent id, or a group
    /// name standing for that group's lowest id.
    #[serde(default)]
    pub track: Vec<TrackRef>,
    pub network: NetworkSpec,
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub population: PopulationSpec,
    #[serde(default)]
    pub price: PriceModel,
    #[serde(default)]
    pub external: Vec<ExternalSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
}

fn default_gamma() -> usize {
    1
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_hops() -> usize {
    DEFAULT_MAX_HOPS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrackRef {
    Agent(usize),
    Group(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub nodes: Vec<NodeId>,
    pub links: Vec<[NodeId; 2]>,
}

/// Population-wide sampling supports; every field can be overridden per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationSpec {
    /// Inclusive bounds of the window length parameter (slots after the start).
    pub window: [usize; 2],
    /// Inclusive bounds of the window start within the period; defaults to
    /// the whole period.
    pub offset: Option<[usize; 2]>,
    pub demand_min: f64,
    /// Upper demand bound as a fraction of the agent's window capacity.
    pub demand_max_fraction: Option<f64>,
    /// Absolute upper demand bound; exclusive with `demand_max_fraction`.
    pub demand_max: Option<f64>,
    pub rate_cap: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            window: [2, 5],
            offset: None,
            demand_min: 0.5,
            demand_max_fraction: None,
            demand_max: None,
            rate_cap: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub count: usize,
    pub source: NodeId,
    pub sink: NodeId,
    #[serde(default)]
    pub window: Option<[usize; 2]>,
    #[serde(default)]
    pub offset: Option<[usize; 2]>,
    #[serde(default)]
    pub demand_min: Option<f64>,
    #[serde(default)]
    pub demand_max_fraction: Option<f64>,
    #[serde(default)]
    pub demand_max: Option<f64>,
    #[serde(default)]
    pub rate_cap: Option<f64>,
}

/// Background traffic on a link (`link = [from, to]`) or along every link of
/// a node path (`path = [n0, n1, ...]`). `load` has one value per phase, or a
/// single value applied to all phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    #[serde(default)]
    pub link: Option<[NodeId; 2]>,
    #[serde(default)]
    pub path: Option<Vec<NodeId>>,
    pub load: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub time: usize,
    pub kind: EventKind,
    pub group: String,
}

/// Upper end of the demand support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DemandUpper {
    Fraction(f64),
    Absolute(f64),
}

/// Sampling parameters of one group after applying overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupParams {
    pub window: [usize; 2],
    pub offset: [usize; 2],
    pub demand_min: f64,
    pub demand_upper: DemandUpper,
    pub rate_cap: f64,
}

impl GroupParams {
    pub fn demand_bounds(&self, window: usize, n_paths: usize) -> (f64, f64) {
        let capacity = (window + 1) as f64 * n_paths as f64 * self.rate_cap;
        let hi = match self.demand_upper {
            DemandUpper::Fraction(f) => f * capacity,
            DemandUpper::Absolute(v) => v,
        };
        (self.demand_min, hi)
    }
}

/// Line and column (1-based) of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

impl Scenario {
    /// Parses without semantic validation; syntax and schema errors carry the
    /// offending line.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    Error::Config(format!("line {line}, column {col}: {msg}"))
                }
                None => Error::Config(msg),
            }
        })
    }

    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let scn = Self::parse(text)?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn total_agents(&self) -> usize {
        self.groups.iter().map(|g| g.count).sum()
    }

    pub fn group_params(&self, g: &GroupSpec) -> GroupParams {
        let pop = &self.population;
        let demand_upper = match (g.demand_max, g.demand_max_fraction) {
            (Some(v), _) => DemandUpper::Absolute(v),
            (None, Some(f)) => DemandUpper::Fraction(f),
            (None, None) => match (pop.demand_max, pop.demand_max_fraction) {
                (Some(v), _) => DemandUpper::Absolute(v),
                (None, Some(f)) => DemandUpper::Fraction(f),
                (None, None) => DemandUpper::Fraction(0.5),
            },
        };
        GroupParams {
            window: g.window.unwrap_or(pop.window),
            offset: g
                .offset
                .or(pop.offset)
                .unwrap_or([0, self.period.saturating_sub(1)]),
            demand_min: g.demand_min.unwrap_or(pop.demand_min),
            demand_upper,
            rate_cap: g.rate_cap.unwrap_or(pop.rate_cap),
        }
    }

    /// Network with every simple path of each group's source-sink pair.
    pub fn build_network(&self) -> Result<NetworkModel> {
        let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
        for g in &self.groups {
            if !pairs.contains(&(g.source, g.sink)) {
                pairs.push((g.source, g.sink));
            }
        }
        let links = self.network.links.iter().map(|l| (l[0], l[1])).collect();
        NetworkModel::enumerate(self.network.nodes.clone(), links, &pairs, self.max_hops)
    }

    /// Checks every modelling requirement and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<String> = Vec::new();
        let t = self.period;
        if t == 0 {
            errs.push("period must be at least 1".into());
        }
        if self.steps == 0 {
            errs.push("steps must be at least 1".into());
        }
        if self.gamma == 0 {
            errs.push("gamma must be at least 1".into());
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            errs.push(format!("tol must be positive, got {}", self.tol));
        }
        if let Err(e) = self.price.validate() {
            errs.push(format!("price: {e}"));
        }
        let network = match self.build_network() {
            Ok(n) => Some(n),
            Err(e) => {
                errs.push(format!("network: {e}"));
                None
            }
        };

        let both = "set at most one of demand_max and demand_max_fraction";
        if self.population.demand_max.is_some() && self.population.demand_max_fraction.is_some() {
            errs.push(format!("population: {both}"));
        }
        let mut names = BTreeSet::new();
        for g in &self.groups {
            let label = format!("group '{}'", g.name);
            if !names.insert(g.name.as_str()) {
                errs.push(format!("{label}: duplicate name"));
            }
            if g.demand_max.is_some() && g.demand_max_fraction.is_some() {
                errs.push(format!("{label}: {both}"));
            }
            let p = self.group_params(g);
            if p.window[0] > p.window[1] || p.window[1] >= t.max(1) {
                errs.push(format!(
                    "{label}: window bounds {:?} must satisfy lo <= hi < period {t}",
                    p.window
                ));
            }
            if p.offset[0] > p.offset[1] || p.offset[1] >= t.max(1) {
                errs.push(format!(
                    "{label}: offset bounds {:?} must satisfy lo <= hi < period {t}",
                    p.offset
                ));
            }
            if !(p.rate_cap.is_finite() && p.rate_cap > 0.0) {
                errs.push(format!("{label}: rate_cap must be positive"));
            }
            if !(p.demand_min.is_finite() && p.demand_min >= 0.0) {
                errs.push(format!("{label}: demand_min must be nonnegative"));
            }
            if let DemandUpper::Fraction(f) = p.demand_upper {
                if !(f.is_finite() && f > 0.0 && f <= 1.0) {
                    errs.push(format!(
                        "{label}: demand_max_fraction must lie in (0, 1], got {f}"
                    ));
                }
            }
            let Some(net) = &network else { continue };
            let n_paths = net.paths_between(g.source, g.sink).len();
            if n_paths == 0 {
                errs.push(format!("{label}: no path from {} to {}", g.source, g.sink));
                continue;
            }
            // every window length in the support must admit its whole demand range
            for w in p.window[0]..=p.window[1].min(t.saturating_sub(1)) {
                let (lo, hi) = p.demand_bounds(w, n_paths);
                let capacity = (w + 1) as f64 * n_paths as f64 * p.rate_cap;
                if hi < lo {
                    errs.push(format!(
                        "{label}: demand support [{lo}, {hi}] is empty for window {w}"
                    ));
                    break;
                }
                if hi > capacity {
                    errs.push(format!(
                        "{label}: demand up to {hi} exceeds window capacity {capacity} for window {w}"
                    ));
                    break;
                }
            }
        }

        if let Some(net) = &network {
            for (k, e) in self.external.iter().enumerate() {
                let label = format!("external[{k}]");
                match (&e.link, &e.path) {
                    (Some(l), None) => {
                        if net.link_index(l[0], l[1]).is_none() {
                            errs.push(format!("{label}: no link {}->{}", l[0], l[1]));
                        }
                    }
                    (None, Some(p)) => {
                        if let Err(err) = net.links_along(p) {
                            errs.push(format!("{label}: {err}"));
                        }
                    }
                    _ => errs.push(format!("{label}: give exactly one of link or path")),
                }
                if e.load.len() != 1 && e.load.len() != t {
                    errs.push(format!(
                        "{label}: load needs 1 or {t} values, got {}",
                        e.load.len()
                    ));
                }
                if e.load.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    errs.push(format!("{label}: loads must be finite and nonnegative"));
                }
            }
        }

        let mut last_time = None;
        let mut faulted: BTreeMap<&str, bool> = BTreeMap::new();
        for e in &self.events {
            let label = format!("event at t={}", e.time);
            if last_time.is_some_and(|prev| e.time <= prev) {
                errs.push(format!("{label}: event times must be strictly increasing"));
            }
            last_time = Some(e.time);
            if e.time == 0 {
                errs.push(format!("{label}: events take effect from t = 1"));
            }
            if !names.contains(e.group.as_str()) {
                errs.push(format!("{label}: unknown group '{}'", e.group));
                continue;
            }
            let down = faulted.entry(e.group.as_str()).or_insert(false);
            match (e.kind, *down) {
                (EventKind::Fault, true) => {
                    errs.push(format!("{label}: group '{}' is already faulted", e.group))
                }
                (EventKind::Repair, false) => errs.push(format!(
                    "{label}: repair of '{}' without a prior fault",
                    e.group
                )),
                _ => *down = !*down,
            }
        }

        let n = self.total_agents();
        for r in &self.track {
            match r {
                TrackRef::Agent(i) if *i >= n => {
                    errs.push(format!("track: agent {i} does not exist ({n} agents)"))
                }
                TrackRef::Group(name) => match self.groups.iter().find(|g| &g.name == name) {
                    None => errs.push(format!("track: unknown group '{name}'")),
                    Some(g) if g.count == 0 => errs.push(format!("track: group '{name}' is empty")),
                    _ => {}
                },
                _ => {}
            }
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}
