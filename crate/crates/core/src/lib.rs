//! Engine for learning layer-parallel agent execution graphs.
//!
//! A query-conditioned controller builds a layered topology over a catalog of
//! agentic operators. Operators within a layer run concurrently against a
//! pluggable backend; dependencies only cross adjacent layer boundaries, so
//! end-to-end latency is governed by the critical path (the slowest operator
//! of each layer). Training uses policy gradients with a reward that charges
//! cost to every operator but latency only to each layer's bottleneck, which
//! steers the learned topologies wide and shallow instead of narrow and deep.

pub mod accounting;
pub mod baseline;
pub mod catalog;
pub mod config;
pub mod dataset;
pub mod env;
pub mod error;
pub mod executor;
pub mod features;
pub mod harness;
pub mod httpllm;
pub mod policy;
pub mod reward;
pub mod seeds;
pub mod sim;
pub mod topology;
pub mod trace;
pub mod trainer;

pub use catalog::{OperatorCatalog, OperatorId, OperatorKind, OperatorSpec};
pub use topology::{LayerSelection, TopologyGraph};
pub use trace::{ExecutionSummary, ExecutionTrace, OperatorRecord};
