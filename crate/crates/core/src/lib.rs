//! Decentralized federated-learning engine built on segmented gossip
//! aggregation, paired with a flow-level network simulator that turns
//! logical training traces into wall-clock timings under bottlenecked
//! peer-to-peer bandwidth.
//!
//! The numeric core ([`params`], [`aggregation`], the bound evaluator in
//! [`tasks`]) is generic over the scalar type; the engine and simulator
//! run on the `f64` aliases below.

pub mod aggregation;
pub mod baselines;
pub mod config;
pub mod error;
pub mod gossip;
pub mod harness;
pub mod ids;
pub mod netsim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tasks;
pub mod trace;

pub use error::{CoreError, Result};
pub use ids::WorkerId;

/// Model parameters at the default precision.
pub type ModelParams = params::Params<f64>;
/// Single-precision variant.
pub type ModelParams32 = params::Params<f32>;
/// A model segment at the default precision.
pub type Segment = params::Segment<f64>;
