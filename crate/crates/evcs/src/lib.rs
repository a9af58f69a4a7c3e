//! Simulation and control of an electric-vehicle charging station under
//! uncertain arrivals and departures.

// `!(x >= 0.0)` style guards are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod behavior;
pub mod cluster;
pub mod data;
pub mod harness;
pub mod optimizer;
pub mod par;
pub mod policy;
pub mod rng;
pub mod scenario;
pub mod station;
pub mod trace;
