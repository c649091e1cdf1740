//! Seeded random small instances shared by the integration tests.
#![allow(dead_code)]

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhgame::routing::availability_set;
use rhgame::{AgentSpec, ExternalLoad, NetworkModel, PeriodStrategy, PriceModel, RoutingGame};

pub struct Instance {
    pub game: RoutingGame,
    pub x: PeriodStrategy,
    /// Phase of the horizon `x` describes.
    pub phase: usize,
}

#[derive(Clone, Copy)]
pub struct Shape {
    pub max_agents: usize,
    pub max_period: usize,
    pub max_paths: usize,
    pub piecewise: bool,
    pub external: bool,
}

impl Default for Shape {
    fn default() -> Self {
        Self {
            max_agents: 4,
            max_period: 4,
            max_paths: 2,
            piecewise: true,
            external: true,
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Four nodes, six links; paths 1->4 overlap on several links.
pub fn small_network() -> NetworkModel {
    NetworkModel::enumerate(
        vec![1, 2, 3, 4],
        vec![(1, 2), (2, 4), (1, 3), (3, 4), (2, 3), (1, 4)],
        &[(1, 4)],
        6,
    )
    .unwrap()
}

pub fn random_price(rng: &mut ChaCha8Rng, piecewise: bool) -> PriceModel {
    if piecewise && rng.random_bool(0.4) {
        let mut pts = vec![[0.0, rng.random_range(0.0..0.5)]];
        for _ in 0..rng.random_range(1..4) {
            let [s, v] = *pts.last().unwrap();
            pts.push([
                s + rng.random_range(0.3..2.0),
                v + rng.random_range(0.0..2.0),
            ]);
        }
        PriceModel::piecewise(pts).unwrap()
    } else {
        PriceModel::linear(rng.random_range(0.2..3.0)).unwrap()
    }
}

pub fn random_game(rng: &mut ChaCha8Rng, shape: Shape) -> RoutingGame {
    let net = small_network();
    let period = rng.random_range(1..=shape.max_period);
    let n = rng.random_range(1..=shape.max_agents);
    let all: Vec<usize> = (0..net.n_paths()).collect();
    let agents = (0..n)
        .map(|id| {
            let k = rng.random_range(1..=shape.max_paths.min(all.len()));
            let mut paths: Vec<usize> = all.choose_multiple(rng, k).copied().collect();
            paths.sort_unstable();
            let window = rng.random_range(0..period);
            let rate_cap = rng.random_range(0.3..1.5);
            let capacity = (window + 1) as f64 * paths.len() as f64 * rate_cap;
            let demand = match rng.random_range(0..10) {
                0 => 0.0,
                1 => capacity,
                _ => rng.random_range(0.0..capacity),
            };
            AgentSpec {
                id,
                source: 1,
                sink: 4,
                demand,
                window,
                offset: rng.random_range(0..period),
                rate_cap,
                paths,
                active: true,
            }
        })
        .collect();
    let mut ext = ExternalLoad::zeros(net.n_links(), period);
    if shape.external {
        for l in 0..net.n_links() {
            for p in 0..period {
                if rng.random_bool(0.3) {
                    ext.add(l, p, rng.random_range(0.0..1.0)).unwrap();
                }
            }
        }
    }
    let price = random_price(rng, shape.piecewise);
    RoutingGame::new(net, agents, price, ext, period).unwrap()
}

/// Feasible plan at `phase`: uniform fill, then random mass moves inside
/// single window images.
pub fn random_feasible(rng: &mut ChaCha8Rng, game: &RoutingGame, phase: usize) -> PeriodStrategy {
    let mut x = game.empty_strategy();
    for i in 0..game.n_agents() {
        game.fill_window(&mut x, i, phase);
    }
    for _ in 0..rng.random_range(0..30) {
        let i = rng.random_range(0..game.n_agents());
        let a = &game.agents[i];
        let pairs = availability_set(a, phase, game.period).pairs();
        let Some(&(to, from)) = pairs.choose(rng) else {
            continue;
        };
        let mut paths = a.paths.clone();
        paths.shuffle(rng);
        let (pt, pf) = (paths[0], *paths.last().unwrap());
        if (to, pt) == (from, pf) {
            continue;
        }
        let room = a.rate_cap - x.get(i, to, pt);
        let avail = x.get(i, from, pf);
        let d = rng.random_range(0.0..=1.0) * room.min(avail).max(0.0);
        x.set(i, to, pt, (x.get(i, to, pt) + d).min(a.rate_cap));
        x.set(i, from, pf, (x.get(i, from, pf) - d).max(0.0));
    }
    x
}

pub fn random_instance(rng: &mut ChaCha8Rng, shape: Shape) -> Instance {
    let game = random_game(rng, shape);
    let phase = rng.random_range(0..game.period);
    let x = random_feasible(rng, &game, phase);
    Instance { game, x, phase }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}
