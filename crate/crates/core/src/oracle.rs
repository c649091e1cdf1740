//! Equilibrium oracle: per-agent best response against frozen link prices.
//!
//! With every path price held fixed an agent's cost is linear in its own
//! plan, so the optimum over the box-and-demand polytope fills the cheapest
//! window cells up to the rate cap. Nothing here depends on the swap-based
//! update; the two are compared by [`fixed_point_cross_check`].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::RoutingGame;
use crate::par;
use crate::routing::population_update;
use crate::strategy::PeriodStrategy;

/// Relative residual tolerance; the absolute threshold is this times
/// `max(1, max_i J_i)`.
pub const RELATIVE_EPS: f64 = 1e-6;

/// Frozen path prices of every `(slot, path)` cell at `phase`.
fn frozen_prices(game: &RoutingGame, x: &PeriodStrategy, phase: usize) -> Result<Vec<Vec<f64>>> {
    (0..game.period)
        .map(|slot| {
            let loads = game.aggregate_traffic(x, slot, phase)?;
            Ok((0..game.network.n_paths())
                .map(|p| game.path_price(&loads, p))
                .collect())
        })
        .collect()
}

/// Best plan for agent `i` when all path prices are held at their values
/// under `x`, returned as a `period x n_paths` slot-major slice, with its
/// cost.
pub fn frozen_best_response(
    game: &RoutingGame,
    i: usize,
    x: &PeriodStrategy,
    phase: usize,
) -> Result<(Vec<f64>, f64)> {
    let prices = frozen_prices(game, x, phase)?;
    best_response_with(game, i, phase, &prices)
}

fn best_response_with(
    game: &RoutingGame,
    i: usize,
    phase: usize,
    prices: &[Vec<f64>],
) -> Result<(Vec<f64>, f64)> {
    let agent = game
        .agents
        .get(i)
        .ok_or_else(|| Error::Dimension(format!("no agent {i}")))?;
    let n_paths = game.network.n_paths();
    let mut slice = vec![0.0; game.period * n_paths];
    let mut cells: Vec<(f64, usize, usize)> = (0..game.period)
        .filter(|&s| agent.in_window(s, phase, game.period))
        .flat_map(|s| agent.paths.iter().map(move |&p| (s, p)))
        .map(|(s, p)| (prices[s][p], s, p))
        .collect();
    let capacity = cells.len() as f64 * agent.rate_cap;
    if agent.demand > capacity {
        return Err(Error::InfeasibleAgent {
            agent: i,
            reason: format!("demand {} exceeds window capacity {capacity}", agent.demand),
        });
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut left = agent.demand;
    let mut cost = 0.0;
    for (price, s, p) in cells {
        if left <= 0.0 {
            break;
        }
        let z = left.min(agent.rate_cap);
        slice[s * n_paths + p] = z;
        cost += price * z;
        left -= z;
    }
    Ok((slice, cost))
}

/// Per-agent equilibrium gaps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `J_i(x) - J_i(best response)`; `None` for inactive agents.
    pub residuals: Vec<Option<f64>>,
    /// Current cost of each active agent.
    pub costs: Vec<Option<f64>>,
    pub max: f64,
    pub argmax: Option<usize>,
}

impl ResidualReport {
    /// Absolute tolerance derived from the cost scale.
    pub fn default_eps(&self) -> f64 {
        let scale = self
            .costs
            .iter()
            .flatten()
            .fold(1.0f64, |m, &c| m.max(c.abs()));
        RELATIVE_EPS * scale
    }

    /// Mean cost over active agents; 0 for an empty population.
    pub fn mean_cost(&self) -> f64 {
        let costs: Vec<f64> = self.costs.iter().flatten().copied().collect();
        if costs.is_empty() {
            0.0
        } else {
            costs.iter().sum::<f64>() / costs.len() as f64
        }
    }

    pub fn is_equilibrium(&self, eps: f64) -> bool {
        self.max <= eps
    }
}

/// Gap of every active agent between its cost and its frozen-price best
/// response, with `x` read as a horizon starting at `phase`.
pub fn equilibrium_residual(
    game: &RoutingGame,
    x: &PeriodStrategy,
    phase: usize,
) -> Result<ResidualReport> {
    let prices = frozen_prices(game, x, phase)?;
    let n_paths = game.network.n_paths();
    let rows = par::map_indices(game.n_agents(), |i| -> Result<Option<(f64, f64)>> {
        if !game.agents[i].active {
            return Ok(None);
        }
        let own: f64 = (0..game.period)
            .flat_map(|s| (0..n_paths).map(move |p| (s, p)))
            .map(|(s, p)| prices[s][p] * x.get(i, s, p))
            .sum();
        let (_, best) = best_response_with(game, i, phase, &prices)?;
        Ok(Some((own - best, own)))
    });
    let mut residuals = Vec::with_capacity(rows.len());
    let mut costs = Vec::with_capacity(rows.len());
    let mut max = 0.0f64;
    let mut argmax = None;
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        residuals.push(row.map(|r| r.0));
        costs.push(row.map(|r| r.1));
        if let Some((r, _)) = row {
            if argmax.is_none() || r > max {
                max = r;
                argmax = Some(i);
            }
        }
    }
    Ok(ResidualReport {
        residuals,
        costs,
        max,
        argmax,
    })
}

/// Outcome of comparing the update map with the oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCheck {
    /// One population sweep leaves `x` unchanged.
    pub fixed_point: bool,
    /// Every active agent whose window starts at the horizon phase has a
    /// residual within `eps`.
    pub aligned_optimal: bool,
    pub max_aligned_residual: f64,
    pub aligned_agents: Vec<usize>,
}

impl CrossCheck {
    pub fn passed(&self) -> bool {
        self.fixed_point && self.aligned_optimal
    }

    /// A fixed point must leave no aligned agent with a positive gap.
    pub fn consistent(&self) -> bool {
        !self.fixed_point || self.aligned_optimal
    }
}

/// `x` is the rotated plan handed to the update at phase `theta`, so it is
/// evaluated as a horizon starting at `theta + 1`.
pub fn fixed_point_cross_check(
    game: &RoutingGame,
    x: &PeriodStrategy,
    theta: usize,
    eps: f64,
) -> Result<CrossCheck> {
    let phase = (theta + 1) % game.period;
    let fixed_point = population_update(game, x, theta, 1)? == *x;
    let report = equilibrium_residual(game, x, phase)?;
    let aligned_agents: Vec<usize> = game
        .agents
        .iter()
        .filter(|a| a.active && a.is_aligned(phase))
        .map(|a| a.id)
        .collect();
    let max_aligned_residual = aligned_agents
        .iter()
        .filter_map(|&i| report.residuals[i])
        .fold(0.0f64, f64::max);
    Ok(CrossCheck {
        fixed_point,
        aligned_optimal: max_aligned_residual <= eps,
        max_aligned_residual,
        aligned_agents,
    })
}
