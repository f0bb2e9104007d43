//! Deterministic simulation of entanglement-based quantum key distribution
//! with quantum mutual authentication.

pub mod adversary;
pub mod bell;
pub mod bits;
pub mod channel;
pub mod postprocess;
pub mod protocols;
pub mod quantum;
pub mod rng;
