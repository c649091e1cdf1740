//! Receding-horizon better-response dynamics for periodic aggregative
//! routing games.
// `!(a > b)` is used on purpose: NaN must fail every guard.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod engine;
pub mod error;
pub mod model;
pub mod network;
pub mod oracle;
pub mod par;
pub mod price;
pub mod routing;
pub mod strategy;

pub use agent::AgentSpec;
pub use engine::{convergence_report, rh_step, rotate, run, Event, EventKind, RHState, Trajectory};
pub use error::{Error, Result};
pub use model::{FeasibilityReport, RoutingGame, FEASIBILITY_TOL};
pub use network::{NetworkModel, NodeId};
pub use oracle::{
    equilibrium_residual, fixed_point_cross_check, frozen_best_response, CrossCheck, ResidualReport,
};
pub use price::PriceModel;
pub use routing::{population_update, SwapTuple};
pub use strategy::{ExternalLoad, PeriodStrategy};
pub mod scenario;

pub use scenario::{run_scenario, Scenario, DEMO_SCENARIO};
