//! Simulator and analysis toolkit for decentralized SGD with periodic global
//! averaging (Gossip-PGA), its adaptive variant, and the Parallel, Gossip and
//! Local SGD baselines.

pub mod engine;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod problem;
pub mod rng;
pub mod theory;
pub mod topology;

pub use engine::{run, Period, RunConfig, Simulation, StepSchedule, Variant};
pub use error::{Error, Result};
pub use metrics::{aggregate, detect_transient, Record, TrialEnsemble, Trajectory};
pub use problem::{Batch, Heterogeneity, LogisticProblem, Objective};
pub use topology::{Topology, TopologyKind};
