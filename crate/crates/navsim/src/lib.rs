//! Deterministic desk-scale simulator and decision engine for network-assisted
//! adaptive video streaming.
//!
//! The library models a delivery network of origin, CDN, edge and peer nodes,
//! generates client request workloads, and answers each request with one leaf
//! of a per-framework *action tree* (fetch, transcode or super-resolve from
//! some node). Polynomial-time heuristics are verified against exact
//! enumeration oracles on the same contexts.
//!
//! Module map:
//!
//! * [`topology`] — delivery graph, path selection, residual bandwidth
//! * [`catalog`] — bitrate ladders, segments, LRU caches, candidate sets
//! * [`workload`] — Zipf request generation, churn, bandwidth traces
//! * [`costs`] — transmission/transcode/super-resolution/monetary cost models
//! * [`policy`] — unified actions, feasibility, objectives, exact oracles
//! * [`heuristics`] — greedy and fine-grained schedulers, fairness allocation
//! * [`learning`] — SOM-based online request management
//! * [`engine`] — the time-slotted simulation loop and metrics
//! * [`scenario`] — config files tying the above together

pub mod catalog;
pub mod costs;
pub mod engine;
pub mod heuristics;
pub mod learning;
pub mod policy;
pub mod rng;
pub mod scenario;
#[doc(hidden)]
pub mod testkit;
pub mod topology;
pub mod workload;

pub use scenario::Scenario;
