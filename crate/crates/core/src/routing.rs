//! Sequential better-response update for the routing game.
//!
//! Each agent, in index order, looks for the single (slot, path) pair swap
//! with the largest gain, moves the amount allowed by the Lipschitz cap and
//! the box bounds, and the link prices are refreshed before the next agent
//! moves. A full pass over the population is repeated `gamma` times.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agent::AgentSpec;
use crate::error::{Error, Result};
use crate::model::RoutingGame;
use crate::par;
use crate::strategy::PeriodStrategy;

/// Gains and amounts at or below this value count as zero, which stops float
/// noise from producing endless microscopic swaps near a fixed point.
pub const GAIN_DEADBAND: f64 = 1e-12;

/// Candidate move of traffic from `(from_slot, from_path)` to
/// `(to_slot, to_path)`. The derived ordering is the lexicographic order on
/// `(to_slot, from_slot, to_path, from_path)` used for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SwapTuple {
    pub to_slot: usize,
    pub from_slot: usize,
    pub to_path: usize,
    pub from_path: usize,
}

impl SwapTuple {
    pub fn new(to_slot: usize, from_slot: usize, to_path: usize, from_path: usize) -> Self {
        Self {
            to_slot,
            from_slot,
            to_path,
            from_path,
        }
    }

    pub fn is_self_swap(&self) -> bool {
        self.to_slot == self.from_slot && self.to_path == self.from_path
    }
}

/// Contiguous run of horizon slots belonging to one window instance, tagged
/// with the period shift that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowImage {
    pub shift: i64,
    pub slots: Vec<usize>,
}

/// Slot pairs between which an agent may move traffic: the union of the
/// Cartesian squares of its window images.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AvailabilityPairs {
    images: Vec<WindowImage>,
}

impl AvailabilityPairs {
    pub fn images(&self) -> &[WindowImage] {
        &self.images
    }

    /// All `(to_slot, from_slot)` pairs in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self
            .images
            .iter()
            .flat_map(|img| {
                img.slots
                    .iter()
                    .flat_map(move |&a| img.slots.iter().map(move |&b| (a, b)))
            })
            .collect();
        set.into_iter().collect()
    }

    pub fn contains(&self, to_slot: usize, from_slot: usize) -> bool {
        self.images
            .iter()
            .any(|img| img.slots.contains(&to_slot) && img.slots.contains(&from_slot))
    }

    pub fn len(&self) -> usize {
        self.pairs().len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.iter().all(|img| img.slots.is_empty())
    }

    /// Slots appearing in any pair.
    pub fn slots(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .images
            .iter()
            .flat_map(|img| img.slots.iter().copied())
            .collect();
        set.into_iter().collect()
    }
}

/// `S x S` with `S = {t1..=t2} ∩ {0..period-1}`.
pub fn availability_pairs_base(t1: i64, t2: i64, period: usize) -> AvailabilityPairs {
    AvailabilityPairs {
        images: clipped_image(t1, t2, period, 0).into_iter().collect(),
    }
}

fn clipped_image(t1: i64, t2: i64, period: usize, shift: i64) -> Option<WindowImage> {
    let lo = t1.max(0);
    let hi = t2.min(period as i64 - 1);
    (lo <= hi).then(|| WindowImage {
        shift,
        slots: (lo..=hi).map(|s| s as usize).collect(),
    })
}

/// Swap pairs for `agent` on a horizon starting at `phase`: the window
/// shifted by `-period`, `0` and `+period`, each clipped to the horizon.
pub fn availability_set(agent: &AgentSpec, phase: usize, period: usize) -> AvailabilityPairs {
    let start = agent.offset as i64 - phase as i64;
    let end = start + agent.window as i64;
    let t = period as i64;
    let images = [-t, 0, t]
        .into_iter()
        .filter_map(|shift| clipped_image(start + shift, end + shift, period, shift))
        .collect();
    AvailabilityPairs { images }
}

/// Link loads and path prices for every slot of a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceBoard {
    phase: usize,
    n_links: usize,
    n_paths: usize,
    loads: Vec<f64>,
    prices: Vec<f64>,
}

impl PriceBoard {
    pub fn new(game: &RoutingGame, x: &PeriodStrategy, phase: usize) -> Result<Self> {
        game.check_shape(x)?;
        let n_links = game.network.n_links();
        let n_paths = game.network.n_paths();
        let mut board = Self {
            phase,
            n_links,
            n_paths,
            loads: vec![0.0; game.period * n_links],
            prices: vec![0.0; game.period * n_paths],
        };
        for slot in 0..game.period {
            board.refresh(game, x, slot);
        }
        Ok(board)
    }

    pub fn phase(&self) -> usize {
        self.phase
    }

    #[inline]
    pub fn price(&self, slot: usize, path: usize) -> f64 {
        self.prices[slot * self.n_paths + path]
    }

    pub fn loads(&self, slot: usize) -> &[f64] {
        &self.loads[slot * self.n_links..(slot + 1) * self.n_links]
    }

    /// Recomputes one slot from scratch.
    pub fn refresh(&mut self, game: &RoutingGame, x: &PeriodStrategy, slot: usize) {
        let loads = &mut self.loads[slot * self.n_links..(slot + 1) * self.n_links];
        game.fill_loads(x, slot, self.phase, loads);
        let prices = &mut self.prices[slot * self.n_paths..(slot + 1) * self.n_paths];
        game.fill_path_prices(loads, prices);
    }
}

fn price_gap(board: &PriceBoard, s: &SwapTuple) -> f64 {
    board.price(s.from_slot, s.from_path) - board.price(s.to_slot, s.to_path)
}

/// Gain of a swap: price advantage times the room left on the target times
/// the mass available at the source.
pub fn swap_gain(
    game: &RoutingGame,
    x: &PeriodStrategy,
    i: usize,
    s: &SwapTuple,
    board: &PriceBoard,
) -> f64 {
    let cap = game.agents[i].rate_cap;
    price_gap(board, s)
        * (cap - x.get(i, s.to_slot, s.to_path))
        * x.get(i, s.from_slot, s.from_path)
}

/// Amount moved by a swap. The first term keeps the target no more expensive
/// than the source after the move; the other two keep the plan inside its box.
pub fn swap_amount(
    game: &RoutingGame,
    x: &PeriodStrategy,
    i: usize,
    s: &SwapTuple,
    board: &PriceBoard,
) -> f64 {
    let gap = price_gap(board, s);
    if !(gap > 0.0) {
        return 0.0;
    }
    let hops = (game.network.path_len(s.to_path) + game.network.path_len(s.from_path)) as f64;
    let lipschitz = game.price.lipschitz();
    let order_cap = if lipschitz > 0.0 {
        gap / (lipschitz * hops)
    } else {
        f64::INFINITY
    };
    let room = game.agents[i].rate_cap - x.get(i, s.to_slot, s.to_path);
    let available = x.get(i, s.from_slot, s.from_path);
    order_cap.min(room).min(available).max(0.0)
}

/// Returns `x` with `delta` moved from the source cell to the target cell of
/// agent `i`.
pub fn apply_swap(
    game: &RoutingGame,
    x: &PeriodStrategy,
    i: usize,
    s: &SwapTuple,
    delta: f64,
) -> Result<PeriodStrategy> {
    game.check_shape(x)?;
    let mut out = x.clone();
    apply_swap_in_place(game, &mut out, i, s, delta)?;
    Ok(out)
}

fn apply_swap_in_place(
    game: &RoutingGame,
    x: &mut PeriodStrategy,
    i: usize,
    s: &SwapTuple,
    delta: f64,
) -> Result<()> {
    let cap = game
        .agents
        .get(i)
        .ok_or_else(|| Error::Dimension(format!("no agent {i}")))?
        .rate_cap;
    if s.to_slot >= x.period()
        || s.from_slot >= x.period()
        || s.to_path >= x.n_paths()
        || s.from_path >= x.n_paths()
    {
        return Err(Error::Dimension(format!("swap {s:?} outside the horizon")));
    }
    let target = x.get(i, s.to_slot, s.to_path);
    let source = x.get(i, s.from_slot, s.from_path);
    if !(delta >= 0.0) || delta > cap - target || delta > source {
        return Err(Error::Contract(format!(
            "swap amount {delta} outside [0, min({}, {source})]",
            cap - target
        )));
    }
    if delta == 0.0 {
        return Ok(());
    }
    x.set(i, s.to_slot, s.to_path, (target + delta).min(cap));
    let source = x.get(i, s.from_slot, s.from_path);
    x.set(i, s.from_slot, s.from_path, (source - delta).max(0.0));
    Ok(())
}

/// Every admissible swap for agent `i` on a horizon at `phase`, in
/// lexicographic order. Self-swaps are excluded.
pub fn candidate_swaps(game: &RoutingGame, i: usize, phase: usize) -> Vec<SwapTuple> {
    let agent = &game.agents[i];
    let mut paths = agent.paths.clone();
    paths.sort_unstable();
    let mut out = Vec::new();
    for (to_slot, from_slot) in availability_set(agent, phase, game.period).pairs() {
        for &to_path in &paths {
            for &from_path in &paths {
                let s = SwapTuple::new(to_slot, from_slot, to_path, from_path);
                if !s.is_self_swap() {
                    out.push(s);
                }
            }
        }
    }
    out
}

/// All candidate swaps attaining the maximal gain, in lexicographic order.
/// `phase` is the phase of the horizon `x` describes (already rotated).
/// Empty only when the agent has no candidate at all.
pub fn best_swaps(
    game: &RoutingGame,
    x: &PeriodStrategy,
    i: usize,
    phase: usize,
    board: &PriceBoard,
) -> Vec<SwapTuple> {
    let candidates = candidate_swaps(game, i, phase);
    let gains = par::map_slice(&candidates, |s| swap_gain(game, x, i, s, board));
    let Some(best) = gains.iter().copied().reduce(f64::max) else {
        return Vec::new();
    };
    candidates
        .into_iter()
        .zip(gains)
        .filter(|&(_, g)| g == best)
        .map(|(s, _)| s)
        .collect()
}

/// Candidate sets at least this large are scored in parallel.
const PAR_SCORING_MIN: usize = 4096;

/// Lexicographically first maximiser and its gain.
fn first_best_swap(
    game: &RoutingGame,
    x: &PeriodStrategy,
    i: usize,
    phase: usize,
    board: &PriceBoard,
) -> Option<(SwapTuple, f64)> {
    let candidates = candidate_swaps(game, i, phase);
    let gains: Vec<f64> = if par::is_parallel() && candidates.len() >= PAR_SCORING_MIN {
        par::map_slice(&candidates, |s| swap_gain(game, x, i, s, board))
    } else {
        candidates
            .iter()
            .map(|s| swap_gain(game, x, i, s, board))
            .collect()
    };
    let mut best: Option<(SwapTuple, f64)> = None;
    for (s, g) in candidates.into_iter().zip(gains) {
        if best.is_none_or(|(_, b)| g > b) {
            best = Some((s, g));
        }
    }
    best
}

/// Applies agent `i`'s best swap in place and keeps `board` current.
/// Returns the swap and amount when something moved.
fn update_agent_in_place(
    game: &RoutingGame,
    x: &mut PeriodStrategy,
    i: usize,
    phase: usize,
    board: &mut PriceBoard,
) -> Result<Option<(SwapTuple, f64)>> {
    if !game.agents[i].active {
        return Ok(None);
    }
    let Some((s, gain)) = first_best_swap(game, x, i, phase, board) else {
        return Ok(None);
    };
    if !(gain > GAIN_DEADBAND) {
        return Ok(None);
    }
    let delta = swap_amount(game, x, i, &s, board);
    if !(delta > GAIN_DEADBAND) {
        return Ok(None);
    }
    apply_swap_in_place(game, x, i, &s, delta)?;
    board.refresh(game, x, s.to_slot);
    if s.from_slot != s.to_slot {
        board.refresh(game, x, s.from_slot);
    }
    Ok(Some((s, delta)))
}

/// One better-response move of agent `i`. `theta` is the phase before
/// rotation; `x` is expected to be the rotated plan, so the swap set is taken
/// at the following phase.
pub fn agent_update(
    game: &RoutingGame,
    x: &PeriodStrategy,
    i: usize,
    theta: usize,
) -> Result<PeriodStrategy> {
    let phase = (theta + 1) % game.period;
    let mut out = x.clone();
    let mut board = PriceBoard::new(game, &out, phase)?;
    if i >= game.n_agents() {
        return Err(Error::Dimension(format!("no agent {i}")));
    }
    update_agent_in_place(game, &mut out, i, phase, &mut board)?;
    Ok(out)
}

/// `gamma` sequential passes of [`agent_update`] over all agents.
pub fn population_update(
    game: &RoutingGame,
    x: &PeriodStrategy,
    theta: usize,
    gamma: usize,
) -> Result<PeriodStrategy> {
    let mut out = x.clone();
    population_update_in_place(game, &mut out, theta, gamma)?;
    Ok(out)
}

/// In-place variant of [`population_update`]; returns the number of swaps.
pub fn population_update_in_place(
    game: &RoutingGame,
    x: &mut PeriodStrategy,
    theta: usize,
    gamma: usize,
) -> Result<usize> {
    if gamma == 0 {
        return Err(Error::Contract("gamma must be at least 1".into()));
    }
    let phase = (theta + 1) % game.period;
    let mut board = PriceBoard::new(game, x, phase)?;
    let mut swaps = 0;
    for _ in 0..gamma {
        for i in 0..game.n_agents() {
            if update_agent_in_place(game, x, i, phase, &mut board)?.is_some() {
                swaps += 1;
            }
        }
    }
    Ok(swaps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkModel;
    use crate::price::PriceModel;
    use crate::strategy::ExternalLoad;

    fn pairs_of(slots: &[usize]) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = slots
            .iter()
            .flat_map(|&a| slots.iter().map(move |&b| (a, b)))
            .collect();
        v.sort();
        v
    }

    fn agent(offset: usize, window: usize) -> AgentSpec {
        AgentSpec {
            id: 0,
            source: 1,
            sink: 2,
            demand: 1.0,
            window,
            offset,
            rate_cap: 1.0,
            paths: vec![0, 1],
            active: true,
        }
    }

    /// Diamond 1->2->4 (links 0, 1) and 1->3->4 (links 2, 3): two disjoint
    /// two-hop paths, unit-slope linear price, full-period windows.
    fn parallel_game(n_agents: usize, period: usize, ext: &[(usize, usize, f64)]) -> RoutingGame {
        let net = NetworkModel::new(
            vec![1, 2, 3, 4],
            vec![(1, 2), (2, 4), (1, 3), (3, 4)],
            vec![vec![0, 1], vec![2, 3]],
        )
        .unwrap();
        let agents = (0..n_agents)
            .map(|i| AgentSpec {
                id: i,
                sink: 4,
                ..agent(0, period - 1)
            })
            .collect();
        let mut load = ExternalLoad::zeros(4, period);
        for &(l, s, v) in ext {
            load.add(l, s, v).unwrap();
        }
        RoutingGame::new(net, agents, PriceModel::linear(1.0).unwrap(), load, period).unwrap()
    }

    #[test]
    fn base_pairs_examples() {
        assert_eq!(availability_pairs_base(-2, 1, 7).pairs(), pairs_of(&[0, 1]));
        assert!(availability_pairs_base(12, 15, 7).is_empty());
        assert!(availability_pairs_base(3, 2, 7).is_empty());
        let full = availability_pairs_base(0, 6, 7);
        assert_eq!(full.len(), 49);
        assert_eq!(full.pairs(), pairs_of(&[0, 1, 2, 3, 4, 5, 6]));
    }

    #[test]
    fn availability_set_examples() {
        let a = availability_set(&agent(5, 3), 0, 7);
        let mut want = pairs_of(&[5, 6]);
        want.extend(pairs_of(&[0, 1]));
        want.sort();
        assert_eq!(a.pairs(), want);
        assert!(!a.contains(0, 5));

        let full = availability_set(&agent(0, 6), 0, 7);
        assert_eq!(full.pairs(), pairs_of(&[0, 1, 2, 3, 4, 5, 6]));

        // at a nonzero phase the full window splits into two images
        let split = availability_set(&agent(0, 6), 4, 7);
        let mut want = pairs_of(&[0, 1, 2]);
        want.extend(pairs_of(&[3, 4, 5, 6]));
        want.sort();
        assert_eq!(split.pairs(), want);
        assert_eq!(split.slots(), vec![0, 1, 2, 3, 4, 5, 6]);

        let single = availability_set(&agent(2, 0), 0, 7);
        assert_eq!(single.pairs(), vec![(2, 2)]);
    }

    #[test]
    fn availability_slots_match_window_membership() {
        for period in 1..=7 {
            for offset in 0..period {
                for window in 0..period {
                    for phase in 0..period {
                        let a = agent(offset, window);
                        let by_pairs = availability_set(&a, phase, period).slots();
                        let by_membership: Vec<usize> = (0..period)
                            .filter(|&s| a.in_window(s, phase, period))
                            .collect();
                        assert_eq!(by_pairs, by_membership);
                    }
                }
            }
        }
    }

    /// Worked instance: in slot 0 the source path costs 4 and the target 1.
    fn worked() -> (RoutingGame, PeriodStrategy, SwapTuple) {
        let g = parallel_game(1, 1, &[(0, 0, 2.8), (2, 0, 0.6)]);
        let mut x = g.empty_strategy();
        x.set(0, 0, 0, 0.6);
        x.set(0, 0, 1, 0.2);
        let s = SwapTuple::new(0, 0, 1, 0);
        (g, x, s)
    }

    #[test]
    fn swap_gain_examples() {
        let (g, x, s) = worked();
        let board = PriceBoard::new(&g, &x, 0).unwrap();
        assert!((board.price(0, 0) - 4.0).abs() < 1e-12);
        assert!((board.price(0, 1) - 1.0).abs() < 1e-12);
        assert!((swap_gain(&g, &x, 0, &s, &board) - 1.44).abs() < 1e-12);

        // equal prices
        let g0 = parallel_game(1, 1, &[]);
        let mut y = g0.empty_strategy();
        y.set(0, 0, 0, 0.5);
        y.set(0, 0, 1, 0.5);
        let b0 = PriceBoard::new(&g0, &y, 0).unwrap();
        assert_eq!(swap_gain(&g0, &y, 0, &s, &b0), 0.0);

        // target already at the cap
        let mut z = x.clone();
        z.set(0, 0, 1, 1.0);
        let bz = PriceBoard::new(&g, &z, 0).unwrap();
        assert_eq!(swap_gain(&g, &z, 0, &s, &bz), 0.0);
    }

    #[test]
    fn swap_amount_examples() {
        let (g, x, s) = worked();
        let board = PriceBoard::new(&g, &x, 0).unwrap();
        assert!((swap_amount(&g, &x, 0, &s, &board) - 0.6).abs() < 1e-12);

        let reverse = SwapTuple::new(0, 0, 0, 1);
        assert_eq!(swap_amount(&g, &x, 0, &reverse, &board), 0.0);

        let mut empty_source = x.clone();
        empty_source.set(0, 0, 0, 0.0);
        let b = PriceBoard::new(&g, &empty_source, 0).unwrap();
        assert_eq!(swap_amount(&g, &empty_source, 0, &s, &b), 0.0);
    }

    #[test]
    fn apply_swap_examples() {
        let (g, x, s) = worked();
        assert_eq!(apply_swap(&g, &x, 0, &s, 0.0).unwrap(), x);
        let board = PriceBoard::new(&g, &x, 0).unwrap();
        let delta = swap_amount(&g, &x, 0, &s, &board);
        let y = apply_swap(&g, &x, 0, &s, delta).unwrap();
        assert!((y.get(0, 0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(y.get(0, 0, 0), 0.0);
        assert!((y.agent_mass(0) - x.agent_mass(0)).abs() < 1e-15);
        assert!(matches!(
            apply_swap(&g, &x, 0, &s, 0.7),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            apply_swap(&g, &x, 0, &s, -0.1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn best_swaps_examples() {
        // identical prices everywhere: every candidate ties at zero
        let g = parallel_game(1, 2, &[]);
        let mut x = g.empty_strategy();
        for s in 0..2 {
            for p in 0..2 {
                x.set(0, s, p, 0.25);
            }
        }
        let board = PriceBoard::new(&g, &x, 0).unwrap();
        let all = best_swaps(&g, &x, 0, 0, &board);
        assert_eq!(all, candidate_swaps(&g, 0, 0));
        assert_eq!(all.len(), 4 * 4 - 4);

        // the worked instance has a single best tuple
        let (g, x, s) = worked();
        let board = PriceBoard::new(&g, &x, 0).unwrap();
        let best = best_swaps(&g, &x, 0, 0, &board);
        assert_eq!(best, vec![s]);

        // an agent with nothing scheduled has only zero gains
        let mut idle = g.clone();
        idle.agents[0].demand = 0.0;
        let z = idle.empty_strategy();
        let bz = PriceBoard::new(&idle, &z, 0).unwrap();
        let ties = best_swaps(&idle, &z, 0, 0, &bz);
        assert_eq!(ties.len(), candidate_swaps(&idle, 0, 0).len());

        let mut pathless = idle.clone();
        pathless.agents[0].paths.clear();
        let bp = PriceBoard::new(&pathless, &z, 0).unwrap();
        assert!(best_swaps(&pathless, &z, 0, 0, &bp).is_empty());
    }

    #[test]
    fn agent_update_applies_the_worked_swap() {
        let (g, x, s) = worked();
        let y = agent_update(&g, &x, 0, 0).unwrap();
        let board = PriceBoard::new(&g, &x, 0).unwrap();
        let delta = swap_amount(&g, &x, 0, &s, &board);
        assert_eq!(y, apply_swap(&g, &x, 0, &s, delta).unwrap());

        let mut faulted = g.clone();
        faulted.agents[0].active = false;
        assert_eq!(agent_update(&faulted, &x, 0, 0).unwrap(), x);

        // after the move no profitable swap remains in slot 0, and a second
        // move either leaves y alone or lowers the potential
        let z = agent_update(&g, &y, 0, 0).unwrap();
        assert!(g.potential(&z, 0).unwrap() <= g.potential(&y, 0).unwrap());
    }

    #[test]
    fn population_update_lowers_potential_on_unbalanced_links() {
        let g = parallel_game(2, 1, &[]);
        let mut x = g.empty_strategy();
        x.set(0, 0, 0, 0.9);
        x.set(0, 0, 1, 0.1);
        x.set(1, 0, 0, 0.8);
        x.set(1, 0, 1, 0.2);
        let v0 = g.potential(&x, 0).unwrap();
        let y = population_update(&g, &x, 0, 1).unwrap();
        assert!(g.potential(&y, 0).unwrap() < v0);
        assert!(g.feasibility_check(&y, 0).unwrap().passed());

        let twice = population_update(&g, &population_update(&g, &x, 0, 1).unwrap(), 0, 1).unwrap();
        assert_eq!(population_update(&g, &x, 0, 2).unwrap(), twice);

        // loads are now equal, so another sweep is the identity
        let balanced = population_update(&g, &x, 0, 5).unwrap();
        assert_eq!(population_update(&g, &balanced, 0, 3).unwrap(), balanced);

        assert!(population_update(&g, &x, 0, 0).is_err());
    }

    #[test]
    fn population_update_matches_composed_agent_updates() {
        let g = parallel_game(3, 3, &[(0, 1, 0.4)]);
        let mut x = g.empty_strategy();
        for i in 0..3 {
            g.fill_window(&mut x, i, 0);
        }
        x.set(1, 0, 0, 0.6);
        x.set(1, 0, 1, 0.0);
        let mut composed = x.clone();
        for i in 0..3 {
            composed = agent_update(&g, &composed, i, 2).unwrap();
        }
        assert_eq!(population_update(&g, &x, 2, 1).unwrap(), composed);
    }
}
