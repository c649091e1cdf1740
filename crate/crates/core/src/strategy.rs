use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense plan `x[agent][slot][path]` over one prediction horizon of `period`
/// slots. Storage is agent-major, then slot, then path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodStrategy {
    n_agents: usize,
    period: usize,
    n_paths: usize,
    data: Vec<f64>,
}

impl PeriodStrategy {
    pub fn zeros(n_agents: usize, period: usize, n_paths: usize) -> Self {
        Self {
            n_agents,
            period,
            n_paths,
            data: vec![0.0; n_agents * period * n_paths],
        }
    }

    pub fn from_flat(
        n_agents: usize,
        period: usize,
        n_paths: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != n_agents * period * n_paths {
            return Err(Error::Dimension(format!(
                "expected {} entries for {n_agents}x{period}x{n_paths}, got {}",
                n_agents * period * n_paths,
                data.len()
            )));
        }
        Ok(Self {
            n_agents,
            period,
            n_paths,
            data,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    #[inline]
    pub fn index(&self, agent: usize, slot: usize, path: usize) -> usize {
        (agent * self.period + slot) * self.n_paths + path
    }

    #[inline]
    pub fn get(&self, agent: usize, slot: usize, path: usize) -> f64 {
        self.data[self.index(agent, slot, path)]
    }

    #[inline]
    pub fn set(&mut self, agent: usize, slot: usize, path: usize, value: f64) {
        let k = self.index(agent, slot, path);
        self.data[k] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Entries of one agent, slot-major.
    pub fn agent(&self, agent: usize) -> &[f64] {
        let w = self.period * self.n_paths;
        &self.data[agent * w..(agent + 1) * w]
    }

    pub fn agent_mut(&mut self, agent: usize) -> &mut [f64] {
        let w = self.period * self.n_paths;
        &mut self.data[agent * w..(agent + 1) * w]
    }

    /// Path vector of one agent at one slot.
    pub fn cell(&self, agent: usize, slot: usize) -> &[f64] {
        let k = self.index(agent, slot, 0);
        &self.data[k..k + self.n_paths]
    }

    /// All agents' path vectors at `slot`, agent-major (`n_agents * n_paths`).
    pub fn slot_slice(&self, slot: usize) -> Vec<f64> {
        (0..self.n_agents)
            .flat_map(|i| self.cell(i, slot).iter().copied())
            .collect()
    }

    /// Builds a plan from `period` consecutive slot slices as returned by
    /// [`PeriodStrategy::slot_slice`].
    pub fn from_slot_slices(n_agents: usize, n_paths: usize, slices: &[&[f64]]) -> Result<Self> {
        let period = slices.len();
        let mut out = Self::zeros(n_agents, period, n_paths);
        for (slot, slice) in slices.iter().enumerate() {
            if slice.len() != n_agents * n_paths {
                return Err(Error::Dimension(format!(
                    "slot slice {slot} has {} entries, expected {}",
                    slice.len(),
                    n_agents * n_paths
                )));
            }
            for i in 0..n_agents {
                for p in 0..n_paths {
                    out.set(i, slot, p, slice[i * n_paths + p]);
                }
            }
        }
        Ok(out)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_agents == other.n_agents
            && self.period == other.period
            && self.n_paths == other.n_paths
    }

    /// Euclidean norm; squares are summed in sorted order so the value is
    /// invariant under any permutation of the entries.
    pub fn norm(&self) -> f64 {
        crate::model::sorted_sum(self.data.iter().map(|v| v * v).collect()).sqrt()
    }

    /// Euclidean distance over the flattened tensor.
    pub fn distance(&self, other: &Self) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean distance restricted to one agent's entries.
    pub fn agent_distance(&self, other: &Self, agent: usize) -> f64 {
        self.agent(agent)
            .iter()
            .zip(other.agent(agent))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Total mass scheduled by one agent over the horizon.
    pub fn agent_mass(&self, agent: usize) -> f64 {
        self.agent(agent).iter().sum()
    }
}

/// Exogenous traffic `e[link][phase]`, periodic in the phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalLoad {
    n_links: usize,
    period: usize,
    data: Vec<f64>,
}

impl ExternalLoad {
    pub fn zeros(n_links: usize, period: usize) -> Self {
        Self {
            n_links,
            period,
            data: vec![0.0; n_links * period],
        }
    }

    /// `table[link][phase]`.
    pub fn from_table(table: &[Vec<f64>], period: usize) -> Result<Self> {
        let mut out = Self::zeros(table.len(), period);
        for (l, row) in table.iter().enumerate() {
            if row.len() != period {
                return Err(Error::Dimension(format!(
                    "external load row {l} has {} slots, expected {period}",
                    row.len()
                )));
            }
            for (phase, &v) in row.iter().enumerate() {
                out.add(l, phase, v)?;
            }
        }
        Ok(out)
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn period(&self) -> usize {
        self.period
    }

    #[inline]
    pub fn get(&self, link: usize, phase: usize) -> f64 {
        self.data[link * self.period + phase % self.period]
    }

    pub fn add(&mut self, link: usize, phase: usize, value: f64) -> Result<()> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::Domain(format!(
                "external load must be finite and nonnegative, got {value}"
            )));
        }
        if link >= self.n_links || phase >= self.period {
            return Err(Error::Dimension(format!(
                "external load index ({link}, {phase})"
            )));
        }
        self.data[link * self.period + phase] += value;
        Ok(())
    }

    /// Rejects deserialised tables with a wrong length or bad values.
    pub fn checked(self) -> Result<Self> {
        if self.data.len() != self.n_links * self.period {
            return Err(Error::Dimension(format!(
                "external load holds {} values, expected {}x{}",
                self.data.len(),
                self.n_links,
                self.period
            )));
        }
        if let Some(v) = self.data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!("external load value {v}")));
        }
        Ok(self)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}
