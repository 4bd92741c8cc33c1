//! Dynamic transferable-utility coalitional games, exact solution concepts,
//! and distributed online algorithms that track the Shapley value and the
//! core over time-varying communication networks.
//!
//! The crate is organized around a pipeline: build an [`game::InstantaneousGame`]
//! (directly, from JSON, or through a market scenario in [`markets`]), pick a
//! communication [`network::NetworkSchedule`], then run one of the trackers in
//! [`tracking`]. Ground-truth baselines live in [`solutions`], independent
//! brute-force checkers in [`oracles`], and run statistics in [`metrics`].

pub mod game;
pub mod markets;
pub mod metrics;
pub mod network;
pub mod oracles;
pub mod solutions;
pub mod tracking;

pub(crate) mod rng;

pub use game::{Coalition, DynamicGame, InstantaneousGame, PayoffMatrix, PayoffVector};
pub use network::{Graph, NetworkSchedule, WeightMatrix};
pub use tracking::TrackerConfig;
