//! The routing game: link loads, path prices, per-period costs, the global
//! potential and feasibility of a planned strategy.

use serde::{Deserialize, Serialize};

use crate::agent::AgentSpec;
use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::price::PriceModel;
use crate::strategy::{ExternalLoad, PeriodStrategy};

/// Absolute tolerance for the per-window demand equalities.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Everything needed to price a plan. Strategies passed to the methods are
/// horizons of `period` slots; the `phase` argument is the position of slot 0
/// within the period and only matters for indexing the external load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingGame {
    pub network: NetworkModel,
    pub agents: Vec<AgentSpec>,
    pub price: PriceModel,
    pub external: ExternalLoad,
    pub period: usize,
}

impl RoutingGame {
    pub fn new(
        network: NetworkModel,
        agents: Vec<AgentSpec>,
        price: PriceModel,
        external: ExternalLoad,
        period: usize,
    ) -> Result<Self> {
        if period == 0 {
            return Err(Error::Config("period must be at least one slot".into()));
        }
        price.validate()?;
        if external.n_links() != network.n_links() || external.period() != period {
            return Err(Error::Dimension(format!(
                "external load is {}x{}, network has {} links and period {period}",
                external.n_links(),
                external.period(),
                network.n_links()
            )));
        }
        for (i, a) in agents.iter().enumerate() {
            if a.id != i {
                return Err(Error::Config(format!(
                    "agent at position {i} has id {}",
                    a.id
                )));
            }
            a.validate(&network, period)?;
        }
        Ok(Self {
            network,
            agents,
            price,
            external,
            period,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn empty_strategy(&self) -> PeriodStrategy {
        PeriodStrategy::zeros(self.agents.len(), self.period, self.network.n_paths())
    }

    pub(crate) fn check_shape(&self, x: &PeriodStrategy) -> Result<()> {
        if x.n_agents() != self.agents.len()
            || x.period() != self.period
            || x.n_paths() != self.network.n_paths()
        {
            return Err(Error::Dimension(format!(
                "strategy is {}x{}x{}, game is {}x{}x{}",
                x.n_agents(),
                x.period(),
                x.n_paths(),
                self.agents.len(),
                self.period,
                self.network.n_paths()
            )));
        }
        Ok(())
    }

    /// Total traffic on every link at horizon slot `slot`.
    pub fn aggregate_traffic(
        &self,
        x: &PeriodStrategy,
        slot: usize,
        phase: usize,
    ) -> Result<Vec<f64>> {
        self.check_shape(x)?;
        if slot >= self.period {
            return Err(Error::Dimension(format!(
                "slot {slot} outside period {}",
                self.period
            )));
        }
        let mut loads = vec![0.0; self.network.n_links()];
        self.fill_loads(x, slot, phase, &mut loads);
        Ok(loads)
    }

    /// Writes the link loads of one slot into `loads`. The summation order is
    /// fixed so that identical slot contents always give identical loads.
    pub(crate) fn fill_loads(
        &self,
        x: &PeriodStrategy,
        slot: usize,
        phase: usize,
        loads: &mut [f64],
    ) {
        let abs = (phase + slot) % self.period;
        for (l, v) in loads.iter_mut().enumerate() {
            *v = self.external.get(l, abs);
        }
        for (i, agent) in self.agents.iter().enumerate() {
            let cell = x.cell(i, slot);
            for &p in &agent.paths {
                let amount = cell[p];
                if amount != 0.0 {
                    for &l in self.network.path(p) {
                        loads[l] += amount;
                    }
                }
            }
        }
    }

    /// Price of path `p` under the given link loads.
    /// Link loads of one implemented slot at absolute phase `phase`, from an
    /// agent-major `n_agents x n_paths` slice.
    pub fn slice_loads(&self, slice: &[f64], phase: usize) -> Vec<f64> {
        let n_paths = self.network.n_paths();
        let mut loads: Vec<f64> = (0..self.network.n_links())
            .map(|l| self.external.get(l, phase % self.period))
            .collect();
        for (i, agent) in self.agents.iter().enumerate() {
            for &p in &agent.paths {
                let amount = slice[i * n_paths + p];
                if amount != 0.0 {
                    for &l in self.network.path(p) {
                        loads[l] += amount;
                    }
                }
            }
        }
        loads
    }

    pub fn path_price(&self, loads: &[f64], p: usize) -> f64 {
        self.network
            .path(p)
            .iter()
            .map(|&l| self.price.price(loads[l]))
            .sum()
    }

    pub(crate) fn fill_path_prices(&self, loads: &[f64], prices: &mut [f64]) {
        for (p, v) in prices.iter_mut().enumerate() {
            *v = self.path_price(loads, p);
        }
    }

    /// Cost of agent `i` over one horizon.
    pub fn local_cost(&self, i: usize, x: &PeriodStrategy, phase: usize) -> Result<f64> {
        self.check_shape(x)?;
        let agent = self
            .agents
            .get(i)
            .ok_or_else(|| Error::Dimension(format!("no agent {i}")))?;
        let mut loads = vec![0.0; self.network.n_links()];
        let mut cost = 0.0;
        for slot in 0..self.period {
            if agent.paths.iter().all(|&p| x.get(i, slot, p) == 0.0) {
                continue;
            }
            self.fill_loads(x, slot, phase, &mut loads);
            for &p in &agent.paths {
                cost += self.path_price(&loads, p) * x.get(i, slot, p);
            }
        }
        Ok(cost)
    }

    /// Potential of a single slot's link loads.
    pub fn slot_potential(&self, loads: &[f64]) -> f64 {
        loads
            .iter()
            .map(|&v| self.price.gamma_unchecked(v.max(0.0)))
            .sum()
    }

    /// Global potential: sum over slots and links of the link potential.
    ///
    /// Per-slot terms are summed in sorted order, which makes the value
    /// bit-identical under any permutation of the slots.
    pub fn potential(&self, x: &PeriodStrategy, phase: usize) -> Result<f64> {
        self.check_shape(x)?;
        let mut loads = vec![0.0; self.network.n_links()];
        let per_slot: Vec<f64> = (0..self.period)
            .map(|slot| {
                self.fill_loads(x, slot, phase, &mut loads);
                self.slot_potential(&loads)
            })
            .collect();
        Ok(sorted_sum(per_slot))
    }

    /// Horizon slots covered by agent `i`'s window instances.
    pub fn window_slots(&self, i: usize, phase: usize) -> Vec<usize> {
        let agent = &self.agents[i];
        (0..self.period)
            .filter(|&s| agent.in_window(s, phase, self.period))
            .collect()
    }

    /// Checks box bounds, the per-window demand equality and that nothing is
    /// scheduled outside the window or on foreign paths. Inactive agents must
    /// have an all-zero plan.
    pub fn feasibility_check(&self, x: &PeriodStrategy, phase: usize) -> Result<FeasibilityReport> {
        self.check_shape(x)?;
        let agents = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, agent)| {
                let mut rep = AgentFeasibility {
                    agent: i,
                    ..Default::default()
                };
                let mut window_mass = 0.0;
                for slot in 0..self.period {
                    let inside = agent.active && agent.in_window(slot, phase, self.period);
                    for (p, &v) in x.cell(i, slot).iter().enumerate() {
                        let allowed = inside && agent.uses_path(p);
                        if !allowed {
                            rep.outside_violation = rep.outside_violation.max(v.abs());
                            continue;
                        }
                        rep.box_violation =
                            rep.box_violation.max(-v).max(v - agent.rate_cap).max(0.0);
                        window_mass += v;
                    }
                }
                if agent.active {
                    rep.sum_violation = (window_mass - agent.demand).abs();
                }
                rep
            })
            .collect();
        Ok(FeasibilityReport { agents })
    }

    /// Spreads agent `i`'s demand evenly over its window cells at `phase`,
    /// overwriting whatever the agent had planned. Cells are capped at the
    /// rate limit; any overflow goes to the remaining cells in (slot, path)
    /// order.
    pub fn fill_window(&self, x: &mut PeriodStrategy, i: usize, phase: usize) {
        let agent = &self.agents[i];
        x.agent_mut(i).fill(0.0);
        let mut paths = agent.paths.clone();
        paths.sort_unstable();
        let cells: Vec<(usize, usize)> = self
            .window_slots(i, phase)
            .into_iter()
            .flat_map(|s| paths.iter().map(move |&p| (s, p)))
            .collect();
        if cells.is_empty() || agent.demand == 0.0 {
            return;
        }
        let share = (agent.demand / cells.len() as f64).min(agent.rate_cap);
        for &(s, p) in &cells {
            x.set(i, s, p, share);
        }
        let mut overflow = agent.demand - share * cells.len() as f64;
        for &(s, p) in &cells {
            if overflow <= 0.0 {
                break;
            }
            let room = agent.rate_cap - x.get(i, s, p);
            let add = room.min(overflow);
            x.set(i, s, p, x.get(i, s, p) + add);
            overflow -= add;
        }
    }
}

pub(crate) fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentFeasibility {
    pub agent: usize,
    /// Largest excursion outside `[0, rate_cap]`.
    pub box_violation: f64,
    /// `|window mass - demand|`.
    pub sum_violation: f64,
    /// Largest magnitude scheduled outside the window or on a foreign path.
    pub outside_violation: f64,
}

impl AgentFeasibility {
    pub fn passed(&self) -> bool {
        self.box_violation == 0.0
            && self.outside_violation == 0.0
            && self.sum_violation <= FEASIBILITY_TOL
    }

    pub fn worst(&self) -> f64 {
        self.box_violation
            .max(self.sum_violation)
            .max(self.outside_violation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub agents: Vec<AgentFeasibility>,
}

impl FeasibilityReport {
    pub fn passed(&self) -> bool {
        self.agents.iter().all(AgentFeasibility::passed)
    }

    pub fn worst_violation(&self) -> f64 {
        self.agents
            .iter()
            .map(AgentFeasibility::worst)
            .fold(0.0, f64::max)
    }

    pub fn worst_sum_violation(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| a.sum_violation)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AgentFeasibility> {
        self.agents.iter().filter(|a| !a.passed())
    }
}
