//! Token (scrip) systems under the minimum-token selection rule.
//!
//! A set of agents request and provide service. Each period one agent
//! requests, `d` agents are available, and the available agent with the fewest
//! tokens provides, receiving a token from the requester.
//!
//! * [`dynamics`]: the one-step transition and a seeded [`Chain`](dynamics::Chain).
//! * [`montecarlo`]: long runs, tail estimates with batch-means errors, sweeps.
//! * [`oracle`]: exact transition law and stationary distribution on a truncated box.
//! * [`two_agent`]: closed-form steady state for two agents.
//! * [`meanfield`]: the infinite-agent ODE, its equilibrium and the two-type system.
//! * [`reduction`]: grouping rational asymmetric systems into symmetric ones.
//! * [`kidney`]: a kidney-exchange pool with hospital token ledgers.
//! * [`acceptance`]: the end-to-end checks shared by the test suite and the CLI.

pub mod acceptance;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod kidney;
pub mod meanfield;
pub mod montecarlo;
pub mod oracle;
pub mod reduction;
pub mod rng;
pub mod two_agent;

pub use config::{Rule, SystemConfig};
pub use dynamics::{Chain, Dynamics, StepOutcome, TokenState};
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../book/src/exact.md")]
    struct Exact;
    #[doc = include_str!("../../../book/src/meanfield.md")]
    struct MeanField;
    #[doc = include_str!("../../../book/src/reduction.md")]
    struct Reduction;
    #[doc = include_str!("../../../book/src/kidney.md")]
    struct Kidney;
    #[doc = include_str!("../README.md")]
    struct Readme;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
