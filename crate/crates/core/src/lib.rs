//! Simulation of a replicated SDN control plane whose replicas route flows on
//! stale views and synchronise under bounded credits.

pub mod credit;
pub mod engine;
pub mod level;
pub mod net;
pub mod selfcheck;
pub mod state;
pub mod sim;
