//! Link selection for downlink packets in a two-tier network where a
//! grid-powered macro cell and a solar-powered small cell can both serve every
//! packet.
//!
//! The scheduler is a semi-Markov decision process over the radiation state,
//! the small cell battery level and the event that triggered the decision.
//! [`kernel`] builds its transition law, [`solvers`] computes average-cost and
//! discounted-cost policies, and [`simulator`] runs policies on a seeded
//! discrete-event model of the physical system.

pub mod check;
pub mod cli;
pub mod config;
pub mod error;
pub mod kernel;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod simulator;
pub mod solvers;

pub use error::{Error, Result};
pub use model::{validate, Action, DecisionState, Event, Model, SystemParams};
pub use policy::{Policy, PolicyLabel};
