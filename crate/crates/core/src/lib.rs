//! Transmission mode selection for D2D-enabled cellular networks with a
//! token incentive system.
//!
//! A UE holding `k` tokens sees a traffic type each slot. With traffic it
//! chooses cellular mode or D2D mode (which costs one token if a peer
//! accepts); when idle it accepts or refuses D2D requests, earning one token
//! per request served. The crate provides the MDP model, an exact solver
//! with structural checks, a tabular Q-learner, MOS-based benefits and
//! Monte-Carlo simulators for single UEs and whole networks.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod learning;
pub mod model;
pub mod mos;
pub mod output;
pub mod presets;
pub mod sim;
pub mod solver;

pub use model::{Action, EnvFactors, MdpModel, ModelError, State, TrafficModel, TrafficType, ValidationReport};
pub use solver::{Policy, SolverConfig, SolverError, ValueFunction};
