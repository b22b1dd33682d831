//! Two-stage reinforcement learning for traffic-signal control at desk scale.
//!
//! The crate provides a deterministic queue-based traffic microsimulator on a
//! grid network, classical signal controllers, a text protocol between
//! simulator state and decision policies, an asynchronous parity-scheduled
//! communication network, group-relative offline policy optimization,
//! stepwise online trajectory optimization, and out-of-distribution incident
//! evaluation.

pub mod agent;
pub mod comm;
pub mod control;
pub mod env;
pub mod error;
pub mod incident;
pub mod net;
pub mod rl;
pub mod sim;

pub use agent::{AgentMessage, Decision, DecisionContext, DecisionPolicy, ParametricPolicy};
pub use error::{FixtureError, NetError, RlError, SimError, WireError};
pub use net::{
    build_grid, build_grid_with_segments, parity_partition, Approach, GridNetwork,
    IntersectionId, Movement, ParityGroup, ParityPartition, Phase, PHASES,
};
pub use sim::{spawn_flow, FlowSpec, MetricsReport, Observation, Sim, SimConfig};
