//! Receding-horizon dynamics: rotate the predicted plan by one slot, let the
//! population improve it, implement slot 0, repeat.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sorted_sum, RoutingGame};
use crate::routing::population_update_in_place;
use crate::strategy::PeriodStrategy;

/// Slack allowed on the step-to-step potential comparison.
pub const MONOTONE_TOL: f64 = 1e-9;

/// Tolerance of the rolling demand audit on implemented traffic.
pub const AUDIT_TOL: f64 = 1e-9;

/// Shifts every agent's plan one slot forward: slot `s` takes slot `s + 1`,
/// the last slot takes slot 0.
pub fn rotate(x: &PeriodStrategy) -> PeriodStrategy {
    let (n, t, p) = (x.n_agents(), x.period(), x.n_paths());
    let mut data = Vec::with_capacity(n * t * p);
    for i in 0..n {
        let agent = x.agent(i);
        data.extend_from_slice(&agent[p..]);
        data.extend_from_slice(&agent[..p]);
    }
    PeriodStrategy::from_flat(n, t, p, data).expect("rotation preserves shape")
}

pub fn phase_step(theta: usize, period: usize) -> usize {
    (theta + 1) % period
}

/// Predicted plan `x` for the horizon starting at phase `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RHState {
    pub x: PeriodStrategy,
    pub theta: usize,
}

impl RHState {
    pub fn new(game: &RoutingGame, x: PeriodStrategy, theta: usize) -> Result<Self> {
        if theta >= game.period {
            return Err(Error::Domain(format!(
                "phase {theta} outside 0..{}",
                game.period
            )));
        }
        game.check_shape(&x)?;
        Ok(Self { x, theta })
    }
}

/// One step of the closed loop: rotate, then `gamma` population sweeps.
pub fn rh_step(game: &RoutingGame, state: &RHState, gamma: usize) -> Result<RHState> {
    let mut x = rotate(&state.x);
    population_update_in_place(game, &mut x, state.theta, gamma)?;
    Ok(RHState {
        x,
        theta: phase_step(state.theta, game.period),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Fault,
    Repair,
}

/// Population change taking effect on the plan recorded at `time`. The
/// implemented action at `time - 1` is the pre-event plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub time: usize,
    pub kind: EventKind,
    pub agents: Vec<usize>,
}

/// Full record of a run. Index `t` of every series refers to instant `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub period: usize,
    pub gamma: usize,
    pub phi: Vec<PeriodStrategy>,
    pub theta: Vec<usize>,
    /// Slot-0 slice of `phi[t]`, agent-major.
    pub psi: Vec<Vec<f64>>,
    pub v_pred: Vec<f64>,
    /// Potential of the implemented slot alone, at its absolute phase.
    pub v_slot_impl: Vec<f64>,
    /// `None` at `t = 0`.
    pub delta_phi: Vec<Option<f64>>,
    /// Distance between `phi[t]` and the rotated, post-event `phi[t-1]`:
    /// how much the update map moved the plan.
    pub update_norm: Vec<Option<f64>>,
    pub active: Vec<Vec<bool>>,
    pub feasibility_worst: Vec<f64>,
    /// Worst demand mismatch over window instances visible at `t`; `None`
    /// when no instance is checkable.
    pub audit_worst: Vec<Option<f64>>,
    pub events: Vec<Event>,
    /// Swaps performed by the update at `t` (0 at `t = 0`).
    pub swaps: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn event_times(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.events.iter().map(|e| e.time).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Potential of the last `period` implemented actions; defined from
    /// `t = period - 1`.
    pub fn v_impl(&self, t: usize) -> Option<f64> {
        let start = (t + 1).checked_sub(self.period)?;
        (t < self.len()).then(|| sorted_sum(self.v_slot_impl[start..=t].to_vec()))
    }

    /// Maximal intervals of instants without a population change, as
    /// inclusive ranges.
    pub fn segments(&self) -> Vec<RangeInclusive<usize>> {
        if self.is_empty() {
            return Vec::new();
        }
        let last = self.len() - 1;
        let mut out = Vec::new();
        let mut lo = 0;
        for e in self.event_times() {
            if e > lo && e <= last {
                out.push(lo..=e - 1);
                lo = e;
            }
        }
        out.push(lo..=last);
        out
    }

    /// The game with the activity pattern in force at `t`.
    pub fn game_at(&self, base: &RoutingGame, t: usize) -> RoutingGame {
        let mut g = base.clone();
        for (a, &on) in g.agents.iter_mut().zip(&self.active[t]) {
            a.active = on;
        }
        g
    }
}

/// Per-agent bookkeeping for the demand audit.
#[derive(Debug, Clone, Copy)]
struct Activity {
    active: bool,
    since: usize,
}

/// Runs `steps` transitions from `initial` at phase 0. Every recorded plan is
/// checked for feasibility and the potential must not increase between
/// consecutive instants outside event boundaries.
pub fn run(
    game: &RoutingGame,
    initial: &PeriodStrategy,
    steps: usize,
    events: &[Event],
    gamma: usize,
) -> Result<Trajectory> {
    if gamma == 0 {
        return Err(Error::Contract("gamma must be at least 1".into()));
    }
    let n = game.n_agents();
    for e in events {
        if e.time == 0 {
            return Err(Error::Contract("events must take effect at t >= 1".into()));
        }
        if let Some(&a) = e.agents.iter().find(|&&a| a >= n) {
            return Err(Error::Contract(format!(
                "event at t={} names agent {a}",
                e.time
            )));
        }
    }
    let mut game = game.clone();
    let report = game.feasibility_check(initial, 0)?;
    if !report.passed() {
        return Err(Error::InfeasibleInitial(format!(
            "worst violation {:.3e} (agents {:?})",
            report.worst_violation(),
            report.failures().map(|f| f.agent).collect::<Vec<_>>()
        )));
    }
    let mut activity: Vec<Activity> = game
        .agents
        .iter()
        .map(|a| Activity {
            active: a.active,
            since: 0,
        })
        .collect();
    let period = game.period;
    let mut traj = Trajectory {
        period,
        gamma,
        phi: Vec::with_capacity(steps + 1),
        theta: Vec::with_capacity(steps + 1),
        psi: Vec::with_capacity(steps + 1),
        v_pred: Vec::with_capacity(steps + 1),
        v_slot_impl: Vec::with_capacity(steps + 1),
        delta_phi: Vec::with_capacity(steps + 1),
        update_norm: Vec::with_capacity(steps + 1),
        active: Vec::with_capacity(steps + 1),
        feasibility_worst: Vec::with_capacity(steps + 1),
        audit_worst: Vec::with_capacity(steps + 1),
        events: Vec::new(),
        swaps: Vec::with_capacity(steps + 1),
    };
    record(
        &mut traj,
        &game,
        initial.clone(),
        0,
        &activity,
        None,
        report.worst_violation(),
        0,
    )?;

    for t in 1..=steps {
        let prev = traj.phi.last().expect("nonempty").clone();
        let theta = traj.theta[t - 1];
        let mut x = prev.clone();
        let todays: Vec<&Event> = events.iter().filter(|e| e.time == t).collect();
        for e in &todays {
            for &a in &e.agents {
                let slot = x.agent_mut(a);
                slot.iter_mut().for_each(|v| *v = 0.0);
                match e.kind {
                    EventKind::Fault => {
                        game.agents[a].active = false;
                        activity[a].active = false;
                    }
                    EventKind::Repair => {
                        game.agents[a].active = true;
                        game.fill_window(&mut x, a, theta);
                        activity[a] = Activity {
                            active: true,
                            since: t,
                        };
                    }
                }
            }
            traj.events.push((*e).clone());
        }
        let rotated = rotate(&x);
        let mut next = rotated.clone();
        let swaps = population_update_in_place(&game, &mut next, theta, gamma)?;
        let phase = phase_step(theta, period);
        let report = game.feasibility_check(&next, phase)?;
        if !report.passed() {
            return Err(Error::Assertion {
                t,
                what: format!(
                    "plan infeasible, worst violation {:.3e}",
                    report.worst_violation()
                ),
            });
        }
        let update = next.distance(&rotated);
        record(
            &mut traj,
            &game,
            next,
            t,
            &activity,
            Some(update),
            report.worst_violation(),
            swaps,
        )?;
        if todays.is_empty() && traj.v_pred[t] > traj.v_pred[t - 1] + MONOTONE_TOL {
            return Err(Error::Assertion {
                t,
                what: format!(
                    "potential rose from {} to {}",
                    traj.v_pred[t - 1],
                    traj.v_pred[t]
                ),
            });
        }
    }
    Ok(traj)
}

#[allow(clippy::too_many_arguments)]
fn record(
    traj: &mut Trajectory,
    game: &RoutingGame,
    x: PeriodStrategy,
    t: usize,
    activity: &[Activity],
    update: Option<f64>,
    feasibility_worst: f64,
    swaps: usize,
) -> Result<()> {
    let phase = t % game.period;
    let v = game.potential(&x, phase)?;
    let psi = x.slot_slice(0);
    let mut loads = vec![0.0; game.network.n_links()];
    game.fill_loads(&x, 0, phase, &mut loads);
    traj.v_slot_impl.push(game.slot_potential(&loads));
    traj.delta_phi.push(traj.phi.last().map(|p| x.distance(p)));
    traj.update_norm.push(update);
    traj.theta.push(phase);
    traj.v_pred.push(v);
    traj.psi.push(psi);
    traj.active
        .push(activity.iter().map(|a| a.active).collect());
    traj.feasibility_worst.push(feasibility_worst);
    traj.swaps.push(swaps);
    traj.phi.push(x);
    let audit = demand_audit(traj, game, t, activity);
    traj.audit_worst.push(audit);
    Ok(())
}

/// For every window instance that ends inside the current horizon and began
/// after the agent's latest activation, compares implemented plus planned
/// traffic over the instance with the agent's demand.
fn demand_audit(
    traj: &Trajectory,
    game: &RoutingGame,
    t: usize,
    activity: &[Activity],
) -> Option<f64> {
    let period = game.period;
    let n_paths = game.network.n_paths();
    let x = &traj.phi[t];
    let mut worst: Option<f64> = None;
    for (i, agent) in game.agents.iter().enumerate() {
        let act = activity[i];
        if !act.active {
            continue;
        }
        // instance starts are offset + k * period; end = start + window
        let first_end = t;
        let last_end = t + period - 1;
        let mut start = agent.offset;
        while start + agent.window < first_end {
            start += period;
        }
        while start + agent.window <= last_end {
            if start >= act.since {
                let mass: f64 = (start..=start + agent.window)
                    .map(|s| {
                        if s < t {
                            traj.psi[s][i * n_paths..(i + 1) * n_paths]
                                .iter()
                                .sum::<f64>()
                        } else {
                            x.cell(i, s - t).iter().sum::<f64>()
                        }
                    })
                    .sum();
                let err = (mass - agent.demand).abs();
                worst = Some(worst.map_or(err, |w| w.max(err)));
            }
            start += period;
        }
    }
    worst
}

/// Outcome of convergence detection over one segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub segment: (usize, usize),
    pub tol: f64,
    /// First `t` after which the update map stays within `tol` for a full
    /// period of consecutive steps.
    pub t_star: Option<usize>,
    /// Largest `‖ψ(t+T) − ψ(t)‖` with both instants in the segment and
    /// `t >= t_star`.
    pub periodicity_defect: Option<f64>,
}

impl ConvergenceReport {
    pub fn converged(&self) -> bool {
        self.t_star.is_some()
    }
}

/// Convergence detection on the whole trajectory.
pub fn convergence_report(traj: &Trajectory, tol: f64) -> ConvergenceReport {
    let last = traj.len().saturating_sub(1);
    convergence_report_in(traj, tol, 0..=last)
}

/// Convergence detection restricted to the instants in `segment`.
pub fn convergence_report_in(
    traj: &Trajectory,
    tol: f64,
    segment: RangeInclusive<usize>,
) -> ConvergenceReport {
    let (lo, hi) = (
        *segment.start(),
        (*segment.end()).min(traj.len().saturating_sub(1)),
    );
    let period = traj.period;
    let quiet = |s: usize| traj.update_norm[s].is_some_and(|u| u <= tol);
    let mut t_star = None;
    let mut t = lo;
    while t + period <= hi {
        if (t + 1..=t + period).all(quiet) {
            t_star = Some(t);
            break;
        }
        t += 1;
    }
    let periodicity_defect = t_star.and_then(|ts| {
        (ts..=hi.saturating_sub(period))
            .filter(|&s| s + period <= hi)
            .map(|s| distance(&traj.psi[s + period], &traj.psi[s]))
            .reduce(f64::max)
    });
    ConvergenceReport {
        segment: (lo, hi),
        tol,
        t_star,
        periodicity_defect,
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentSpec;
    use crate::model::FEASIBILITY_TOL;
    use crate::network::NetworkModel;
    use crate::price::PriceModel;
    use crate::strategy::ExternalLoad;

    fn diamond_game(n_agents: usize, period: usize) -> RoutingGame {
        let net = NetworkModel::new(
            vec![1, 2, 3, 4],
            vec![(1, 2), (2, 4), (1, 3), (3, 4)],
            vec![vec![0, 1], vec![2, 3]],
        )
        .unwrap();
        let agents = (0..n_agents)
            .map(|i| AgentSpec {
                id: i,
                source: 1,
                sink: 4,
                demand: 1.0 + 0.25 * i as f64,
                window: (i % period).min(period - 1).max(1).min(period - 1),
                offset: (2 * i) % period,
                rate_cap: 1.0,
                paths: vec![0, 1],
                active: true,
            })
            .collect();
        let mut ext = ExternalLoad::zeros(4, period);
        ext.add(0, 1 % period, 0.7).unwrap();
        RoutingGame::new(net, agents, PriceModel::linear(1.0).unwrap(), ext, period).unwrap()
    }

    fn initial(game: &RoutingGame) -> PeriodStrategy {
        let mut x = game.empty_strategy();
        for i in 0..game.n_agents() {
            game.fill_window(&mut x, i, 0);
        }
        x
    }

    #[test]
    fn rotate_examples() {
        let x = PeriodStrategy::from_flat(1, 3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(rotate(&x).as_slice(), &[2.0, 3.0, 1.0]);
        let mut y = x.clone();
        for _ in 0..3 {
            y = rotate(&y);
        }
        assert_eq!(y, x);
        let one = PeriodStrategy::from_flat(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(rotate(&one), one);
    }

    #[test]
    fn phase_step_examples() {
        assert_eq!(phase_step(6, 7), 0);
        assert_eq!(phase_step(0, 7), 1);
        assert_eq!(phase_step(3, 7), 4);
    }

    #[test]
    fn rotation_preserves_norm_and_potential() {
        let g = diamond_game(3, 4);
        let x = initial(&g);
        let r = rotate(&x);
        assert_eq!(r.norm(), x.norm());
        assert_eq!(g.potential(&r, 1).unwrap(), g.potential(&x, 0).unwrap());
    }

    #[test]
    fn steps_zero_records_only_the_initial_state() {
        let g = diamond_game(2, 3);
        let x = initial(&g);
        let tr = run(&g, &x, 0, &[], 1).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.phi[0], x);
        assert_eq!(tr.theta, vec![0]);
        assert_eq!(tr.delta_phi, vec![None]);
    }

    #[test]
    fn run_invariants_hold() {
        let g = diamond_game(4, 5);
        let x = initial(&g);
        let tr = run(&g, &x, 120, &[], 1).unwrap();
        for t in 0..tr.len() {
            assert_eq!(tr.theta[t], t % 5);
            assert_eq!(tr.psi[t], tr.phi[t].slot_slice(0));
            assert!(tr.feasibility_worst[t] <= FEASIBILITY_TOL);
            if let Some(a) = tr.audit_worst[t] {
                assert!(a <= AUDIT_TOL, "audit {a} at {t}");
            }
            if t > 0 {
                assert!(tr.v_pred[t] <= tr.v_pred[t - 1] + MONOTONE_TOL);
            }
        }
        let rep = convergence_report(&tr, 1e-6);
        assert!(rep.converged());
        assert!(rep.periodicity_defect.unwrap() <= 1e-5);
    }

    #[test]
    fn gamma_two_is_no_worse_than_gamma_one() {
        let g = diamond_game(4, 5);
        let s = RHState::new(&g, initial(&g), 0).unwrap();
        let a = rh_step(&g, &s, 1).unwrap();
        let b = rh_step(&g, &s, 2).unwrap();
        assert!(g.potential(&b.x, 1).unwrap() <= g.potential(&a.x, 1).unwrap());
    }

    #[test]
    fn equilibrium_start_is_periodic_immediately() {
        let g = diamond_game(3, 4);
        let warm = run(&g, &initial(&g), 400, &[], 1).unwrap();
        // restart from a converged plan at phase 0
        let t0 = (warm.len() - 1) / 4 * 4;
        let x0 = warm.phi[t0].clone();
        let tr = run(&g, &x0, 12, &[], 1).unwrap();
        let rep = convergence_report(&tr, 1e-12);
        assert_eq!(rep.t_star, Some(0));
        for t in 1..tr.len() {
            assert_eq!(tr.phi[t], rotate(&tr.phi[t - 1]));
            assert_eq!(tr.delta_phi[t], Some(tr.phi[t].distance(&tr.phi[t - 1])));
        }
        for t in 0..tr.len() - 4 {
            assert_eq!(tr.psi[t + 4], tr.psi[t]);
        }
    }

    #[test]
    fn fault_and_repair() {
        let g = diamond_game(4, 5);
        let events = vec![
            Event {
                time: 7,
                kind: EventKind::Fault,
                agents: vec![1, 2],
            },
            Event {
                time: 15,
                kind: EventKind::Repair,
                agents: vec![1, 2],
            },
        ];
        let tr = run(&g, &initial(&g), 30, &events, 1).unwrap();
        assert!(tr.active[6][1] && !tr.active[7][1] && !tr.active[14][2] && tr.active[15][2]);
        assert!(tr.phi[7].agent(1).iter().all(|&v| v == 0.0));
        assert!(tr.phi[6].agent(1).iter().any(|&v| v > 0.0));
        assert!(tr.phi[15].agent(2).iter().any(|&v| v > 0.0));
        assert_eq!(tr.segments(), vec![0..=6, 7..=14, 15..=30]);
        for t in 0..tr.len() {
            if let Some(a) = tr.audit_worst[t] {
                assert!(a <= AUDIT_TOL, "audit {a} at {t}");
            }
        }
    }

    #[test]
    fn infeasible_initial_is_rejected() {
        let g = diamond_game(2, 3);
        let mut x = initial(&g);
        x.set(0, 0, 0, x.get(0, 0, 0) + 0.1);
        assert!(matches!(
            run(&g, &x, 3, &[], 1),
            Err(Error::InfeasibleInitial(_))
        ));
    }

    #[test]
    fn not_converged_when_still_moving() {
        let g = diamond_game(4, 5);
        let tr = run(&g, &initial(&g), 3, &[], 1).unwrap();
        assert!(!convergence_report(&tr, 1e-6).converged());
    }

    #[test]
    fn v_impl_needs_a_full_period() {
        let g = diamond_game(2, 3);
        let tr = run(&g, &initial(&g), 5, &[], 1).unwrap();
        assert_eq!(tr.v_impl(1), None);
        let want = sorted_sum(tr.v_slot_impl[0..=2].to_vec());
        assert_eq!(tr.v_impl(2), Some(want));
    }
}
