//! Cachemask: a library and CLI engine for the crowdsourced query-obfuscation
//! game played between flexible LBS users sharing a PoI cache and an adversary
//! running an optimal Bayesian inference attack.
//!
//! Users take turns querying a platform for nearby points of interest. Each
//! user first checks a shared cache of earlier query locations; if a cached
//! query lies within his service flexibility `Q` he is already served, but may
//! still issue a decoy query to confuse the adversary. The engine provides:
//!
//! - the exact max-min defense as a linear program over a discretized location
//!   grid ([`lp`]), solved by a self-contained dense simplex;
//! - closed-form and grid-searched two-point (1D) and four-point (2D)
//!   reflection schemes ([`approx`]);
//! - the attacker side: posterior updates, distance-minimizing point
//!   inference, and candidate-set inference for the parametric schemes
//!   ([`adversary`]);
//! - a seeded, thread-count-independent Monte Carlo simulator of the
//!   sequential protocol ([`sim`]), plus query-order search under common
//!   random numbers ([`sequence`]);
//! - config parsing, density-map ingestion and byte-stable CSV emission
//!   ([`io`]).
//!
//! All randomness flows from one experiment seed through per-trial, per-user
//! substreams, so results are reproducible and independent of scheduling.

pub mod adversary;
pub mod approx;
pub mod domain;
pub mod error;
pub mod io;
pub mod lp;
pub mod rng;
pub mod sequence;
pub mod sim;

pub use error::{Error, Result};
