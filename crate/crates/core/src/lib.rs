//! Trace-driven simulation of opportunistic data ferrying.
//!
//! A city is partitioned into geohash blocks. Vehicles entering a block that
//! will later pass through the SCMC block (the data sink) are ferry offers.
//! Each block decides online whether to hand its data to the current offer,
//! using one of four hiring policies or a greedy ensemble that activates the
//! policy with the lowest recent average overall delay.

pub mod ensemble;
pub mod geocell;
pub mod harness;
pub mod policies;
pub mod simulator;
pub mod traces;
pub mod world;

/// Epoch seconds.
pub type Timestamp = i64;
/// A duration in seconds.
pub type Seconds = i64;
