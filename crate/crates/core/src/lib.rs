//! Cost-aware exploration delivery lab.
//!
//! A synthetic streaming homepage with ground-truth user tastes, used to
//! decide where a randomized exploration row can live cheaply, compare
//! delivery strategies in simulated A/B tests, measure how popularity
//! concentrates by exposure source, and turn the randomized exposure into a
//! co-occurrence candidate generator.

pub mod artifact;
pub mod behavior;
pub mod bias;
pub mod catalog;
pub mod config;
pub mod error;
pub mod experiment;
pub mod placement;
pub mod recaller;
pub mod rng;
pub mod stats;
pub mod strategies;
pub mod world;

pub use error::{Error, Result};
