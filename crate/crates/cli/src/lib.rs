//! Library half of the `coalitiond` binary: config resolution and the
//! scenario runner, shared with the integration tests.

pub mod config;
pub mod runner;
