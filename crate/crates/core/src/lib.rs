//! Decentralized stochastic optimization over directed graphs.
//!
//! The crate simulates momentum-tracking push-pull (SMTPP) and its baselines
//! on synthetic networks:
//!
//! - [`graph`]: directed topologies and spanning-tree extraction
//! - [`mixing`]: row/column-stochastic weights, Perron vectors, SLEM
//! - [`oracles`]: non-convex logistic regression and noisy quadratics
//! - [`algorithms`]: SMTPP, STPP, SGP, Push-DIGing and centralized momentum SGD
//! - [`metrics`]: consensus/tracking/momentum errors and multi-seed aggregation
//! - [`harness`]: config files, experiment orchestration, CSV output

pub mod algorithms;
pub mod graph;
pub mod harness;
pub mod mixing;
pub mod metrics;
pub mod oracles;
