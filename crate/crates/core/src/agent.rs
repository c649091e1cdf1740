use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkModel, NodeId};

/// One transmitting agent: it must move `demand` data units from `source` to
/// `sink` inside the slots `offset ..= offset + window` of every period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: usize,
    pub source: NodeId,
    pub sink: NodeId,
    pub demand: f64,
    /// Window length minus one: the window spans `window + 1` slots.
    pub window: usize,
    /// Phase of the first window slot within the period.
    pub offset: usize,
    /// Per-slot, per-path transmission cap.
    pub rate_cap: f64,
    /// Global indices of the paths connecting `source` to `sink`.
    pub paths: Vec<usize>,
    pub active: bool,
}

impl AgentSpec {
    /// Largest demand the window can absorb.
    pub fn capacity(&self) -> f64 {
        self.rate_cap * (self.window + 1) as f64 * self.paths.len() as f64
    }

    /// Whether slot `slot` of a horizon that starts at phase `phase` falls in
    /// one of this agent's window instances.
    pub fn in_window(&self, slot: usize, phase: usize, period: usize) -> bool {
        (phase + slot + period - self.offset % period) % period <= self.window
    }

    /// An agent is aligned with a horizon when its window starts at slot 0.
    pub fn is_aligned(&self, phase: usize) -> bool {
        self.offset == phase
    }

    pub fn uses_path(&self, p: usize) -> bool {
        self.paths.contains(&p)
    }

    pub fn validate(&self, net: &NetworkModel, period: usize) -> Result<()> {
        let fail = |reason: String| Error::InfeasibleAgent {
            agent: self.id,
            reason,
        };
        if self.window >= period || self.offset >= period {
            return Err(fail(format!(
                "window {} / offset {} must lie in 0..{period}",
                self.window, self.offset
            )));
        }
        if !(self.rate_cap.is_finite() && self.rate_cap > 0.0) {
            return Err(fail(format!(
                "rate cap must be positive, got {}",
                self.rate_cap
            )));
        }
        if !(self.demand.is_finite() && self.demand >= 0.0) {
            return Err(fail(format!(
                "demand must be nonnegative, got {}",
                self.demand
            )));
        }
        if self.demand > 0.0 && self.paths.is_empty() {
            return Err(fail("positive demand but no path".into()));
        }
        if self.demand > self.capacity() {
            return Err(fail(format!(
                "demand {} exceeds window capacity {}",
                self.demand,
                self.capacity()
            )));
        }
        for &p in &self.paths {
            if p >= net.n_paths() {
                return Err(fail(format!("unknown path {p}")));
            }
            if net.path_source(p) != self.source || net.path_sink(p) != self.sink {
                return Err(fail(format!(
                    "path {p} does not connect {} to {}",
                    self.source, self.sink
                )));
            }
        }
        Ok(())
    }
}
