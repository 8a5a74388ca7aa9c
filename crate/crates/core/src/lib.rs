//! Distributed realtime multimodal streaming middleware.
//!
//! The crate is organized around the path a measurement takes through a
//! sensing mesh:
//!
//! - [`wire`] — bit-exact message framing, topic matching, subscription
//!   routing tables.
//! - [`broker`] — the per-host routing loop and its TCP transport; node-side
//!   client links.
//! - [`stream_store`] — the head-write/tail-read streaming FIFO and the
//!   fixed-length overwrite ring buffer.
//! - [`timesync`] — four-timestamp offset estimation, clock discipline,
//!   sensor propagation-delay estimation, skew budgets.
//! - [`align`] — stale-bounded intra-modality epoch assembly, pull-based
//!   positive-pair drawing, push triggers.
//! - [`sched`] — window/stride and end-to-end time-budget arithmetic.
//! - [`storage`] — periodic flush of stream FIFOs to HDF5 with crash-bounded
//!   loss, plus the external video-encoder frame sink.
//! - [`simharness`] — deterministic sensor/network simulation, loopback
//!   benchmarking, missingness profiling.
//! - [`node`] — producer/consumer/pipeline node runners.
//! - [`config`] — the declarative session config shared by every host.
//! - [`host`] — assembling one host's broker, agents, and nodes; coordinated
//!   shutdown.

pub mod align;
pub mod broker;
pub mod config;
pub mod host;
pub mod node;
pub mod sched;
pub mod simharness;
pub mod storage;
pub mod stream_store;
pub mod timesync;
pub mod wire;

pub use wire::{Sample, TopicId};
