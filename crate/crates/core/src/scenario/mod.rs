//! Scenario-driven experiments: seeded population draw, uniform initial plan,
//! scheduled faults and repairs, metrics and exports.

mod config;
mod output;

use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{
    DemandUpper, EventSpec, ExternalSpec, GroupParams, GroupSpec, NetworkSpec, PopulationSpec,
    Scenario, TrackRef,
};
pub use output::{
    load_trajectory_dump, plot_metrics, read_metrics_csv, write_events_log, write_metrics_csv,
    write_trajectory_dump, DumpedState, MetricsTable,
};

use crate::agent::AgentSpec;
use crate::engine::{self, convergence_report_in, ConvergenceReport, Event, Trajectory};
use crate::error::{Error, Result};
use crate::model::{sorted_sum, RoutingGame};
use crate::oracle::{equilibrium_residual, ResidualReport};
use crate::strategy::{ExternalLoad, PeriodStrategy};

/// The shipped demonstration scenario.
pub const DEMO_SCENARIO: &str = include_str!("../../scenarios/demo.toml");

pub fn demo() -> Scenario {
    Scenario::from_toml(DEMO_SCENARIO).expect("shipped demo scenario is valid")
}

/// Drawn agents and the game they play.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub game: RoutingGame,
    /// Group name and member ids, in scenario order.
    pub groups: Vec<(String, Vec<usize>)>,
}

impl Population {
    pub fn members(&self, group: &str) -> Option<&[usize]> {
        self.groups
            .iter()
            .find(|(n, _)| n == group)
            .map(|(_, m)| m.as_slice())
    }

    pub fn group_of(&self, agent: usize) -> Option<&str> {
        self.groups
            .iter()
            .find(|(_, m)| m.contains(&agent))
            .map(|(n, _)| n.as_str())
    }
}

fn external_load(scn: &Scenario, game_net: &crate::network::NetworkModel) -> Result<ExternalLoad> {
    let mut ext = ExternalLoad::zeros(game_net.n_links(), scn.period);
    for e in &scn.external {
        let links = match (&e.link, &e.path) {
            (Some(l), None) => vec![game_net
                .link_index(l[0], l[1])
                .ok_or_else(|| Error::Config(format!("no link {}->{}", l[0], l[1])))?],
            (None, Some(p)) => game_net.links_along(p)?,
            _ => {
                return Err(Error::Config(
                    "external entry needs one of link or path".into(),
                ))
            }
        };
        for phase in 0..scn.period {
            let v = if e.load.len() == 1 {
                e.load[0]
            } else {
                e.load[phase]
            };
            for &l in &links {
                ext.add(l, phase, v)?;
            }
        }
    }
    Ok(ext)
}

fn draw_range(rng: &mut ChaCha8Rng, [lo, hi]: [usize; 2]) -> usize {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Seeded draw of group membership and per-agent window, offset and demand.
/// Group labels are shuffled over agent ids, then agents are drawn in id
/// order.
pub fn generate_population(scn: &Scenario) -> Result<Population> {
    scn.validate()?;
    let network = scn.build_network()?;
    let external = external_load(scn, &network)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    let mut labels: Vec<usize> = scn
        .groups
        .iter()
        .enumerate()
        .flat_map(|(g, group)| std::iter::repeat_n(g, group.count))
        .collect();
    labels.shuffle(&mut rng);

    let params: Vec<GroupParams> = scn.groups.iter().map(|g| scn.group_params(g)).collect();
    let mut agents = Vec::with_capacity(labels.len());
    let mut groups: Vec<(String, Vec<usize>)> = scn
        .groups
        .iter()
        .map(|g| (g.name.clone(), Vec::new()))
        .collect();
    for (id, &g) in labels.iter().enumerate() {
        let group = &scn.groups[g];
        let p = &params[g];
        let paths = network.paths_between(group.source, group.sink);
        let window = draw_range(&mut rng, p.window);
        let offset = draw_range(&mut rng, p.offset);
        let (lo, hi) = p.demand_bounds(window, paths.len());
        let demand = if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        };
        agents.push(AgentSpec {
            id,
            source: group.source,
            sink: group.sink,
            demand,
            window,
            offset,
            rate_cap: p.rate_cap,
            paths,
            active: true,
        });
        groups[g].1.push(id);
    }
    let game = RoutingGame::new(network, agents, scn.price.clone(), external, scn.period)?;
    Ok(Population { game, groups })
}

/// Every agent's demand spread evenly over its window cells at phase 0.
pub fn initial_strategy(game: &RoutingGame) -> PeriodStrategy {
    let mut x = game.empty_strategy();
    for i in 0..game.n_agents() {
        if game.agents[i].active {
            game.fill_window(&mut x, i, 0);
        }
    }
    x
}

/// Engine events for the scenario's group-level schedule.
pub fn resolve_events(scn: &Scenario, pop: &Population) -> Result<Vec<Event>> {
    scn.events
        .iter()
        .map(|e| {
            let agents = pop
                .members(&e.group)
                .ok_or_else(|| Error::Config(format!("unknown group '{}'", e.group)))?
                .to_vec();
            Ok(Event {
                time: e.time,
                kind: e.kind,
                agents,
            })
        })
        .collect()
}

/// Agent ids named by the scenario's `track` list.
pub fn resolve_tracked(scn: &Scenario, pop: &Population) -> Result<Vec<usize>> {
    scn.track
        .iter()
        .map(|r| match r {
            TrackRef::Agent(i) if *i < pop.game.n_agents() => Ok(*i),
            TrackRef::Agent(i) => Err(Error::Config(format!("tracked agent {i} does not exist"))),
            TrackRef::Group(name) => pop
                .members(name)
                .and_then(|m| m.iter().min().copied())
                .ok_or_else(|| Error::Config(format!("tracked group '{name}' is empty"))),
        })
        .collect()
}

/// Per-agent quantities of one metrics row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackedMetrics {
    pub id: usize,
    pub delta_phi: Option<f64>,
    pub j_pred: f64,
    pub j_impl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub t: usize,
    pub v_pred: f64,
    pub v_impl: Option<f64>,
    pub tracked: Vec<TrackedMetrics>,
    pub delta_phi_all: Option<f64>,
    pub update_norm: Option<f64>,
}

/// Metrics for every recorded instant.
pub fn compute_metrics(
    game: &RoutingGame,
    traj: &Trajectory,
    tracked: &[usize],
) -> Result<Vec<MetricsRow>> {
    let period = traj.period;
    let n_paths = game.network.n_paths();
    // per instant: the implemented slot's cost for each tracked agent
    let impl_cost: Vec<Vec<f64>> = traj
        .psi
        .iter()
        .enumerate()
        .map(|(s, psi)| {
            let loads = game.slice_loads(psi, s % period);
            tracked
                .iter()
                .map(|&i| {
                    game.agents[i]
                        .paths
                        .iter()
                        .map(|&p| game.path_price(&loads, p) * psi[i * n_paths + p])
                        .sum()
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(traj.len());
    for t in 0..traj.len() {
        let phase = traj.theta[t];
        let mut per_agent = Vec::with_capacity(tracked.len());
        for (k, &i) in tracked.iter().enumerate() {
            let delta_phi = (t > 0).then(|| traj.phi[t].agent_distance(&traj.phi[t - 1], i));
            let j_pred = game.local_cost(i, &traj.phi[t], phase)?;
            let j_impl = (t + 1 >= period)
                .then(|| sorted_sum((t + 1 - period..=t).map(|s| impl_cost[s][k]).collect()));
            per_agent.push(TrackedMetrics {
                id: i,
                delta_phi,
                j_pred,
                j_impl,
            });
        }
        rows.push(MetricsRow {
            t,
            v_pred: traj.v_pred[t],
            v_impl: traj.v_impl(t),
            tracked: per_agent,
            delta_phi_all: traj.delta_phi[t],
            update_norm: traj.update_norm[t],
        });
    }
    Ok(rows)
}

/// Convergence and equilibrium summary of one event-free segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentSummary {
    pub range: (usize, usize),
    pub convergence: ConvergenceReport,
    /// Oracle residuals at the segment's last instant.
    pub residual: ResidualReport,
    pub mean_cost: f64,
}

impl SegmentSummary {
    /// Largest residual relative to the mean per-agent cost.
    pub fn equilibrium_within(&self, rel: f64) -> bool {
        self.residual.max <= rel * self.mean_cost
    }
}

pub fn summarize_segment(
    game: &RoutingGame,
    traj: &Trajectory,
    range: RangeInclusive<usize>,
    tol: f64,
) -> Result<SegmentSummary> {
    let convergence = convergence_report_in(traj, tol, range.clone());
    let end = *range.end();
    let g = traj.game_at(game, end);
    let residual = equilibrium_residual(&g, &traj.phi[end], traj.theta[end])?;
    let mean_cost = residual.mean_cost();
    Ok(SegmentSummary {
        range: (*range.start(), end),
        convergence,
        residual,
        mean_cost,
    })
}

/// Everything produced by one scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub population: Population,
    pub events: Vec<Event>,
    pub tracked: Vec<usize>,
    pub trajectory: Trajectory,
    pub metrics: Vec<MetricsRow>,
    pub segments: Vec<SegmentSummary>,
}

impl ScenarioOutcome {
    pub fn metrics_table(&self) -> MetricsTable {
        MetricsTable::from_rows(&self.metrics, &self.tracked)
    }
}

/// generate, initialise, run for `steps` instants, evaluate.
pub fn run_scenario(scn: &Scenario) -> Result<ScenarioOutcome> {
    let population = generate_population(scn)?;
    let events = resolve_events(scn, &population)?;
    let tracked = resolve_tracked(scn, &population)?;
    let x0 = initial_strategy(&population.game);
    let trajectory = engine::run(
        &population.game,
        &x0,
        scn.steps.saturating_sub(1),
        &events,
        scn.gamma,
    )?;
    let metrics = compute_metrics(&population.game, &trajectory, &tracked)?;
    let segments = trajectory
        .segments()
        .into_iter()
        .map(|r| summarize_segment(&population.game, &trajectory, r, scn.tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioOutcome {
        population,
        events,
        tracked,
        trajectory,
        metrics,
        segments,
    })
}
