//! Software model of a streaming dataflow accelerator for edge-based dynamic
//! GNN inference (EdgeConv over per-event particle graphs).
//!
//! The crate is split along the pipeline:
//!
//! - [`event`]: particles, collision events, a seedable synthetic generator
//!   and the binary event file format.
//! - [`graph`]: runtime proximity graph construction in CSR form and the
//!   edge partition across message-passing units.
//! - [`model`]: the sequential reference implementation of the three-stage
//!   network (embedding, two EdgeConv layers, readout) and the weights file.
//! - [`sim`]: the cycle-level simulator of the broadcast / MP unit /
//!   adapter / NT unit dataflow with banked double buffers.
//! - [`stats`]: nearest-rank percentiles and latency grouping by graph size.

pub mod event;
pub mod graph;
pub mod model;
pub mod sim;
pub mod stats;

pub use event::{Event, GeneratorConfig, Particle};
pub use graph::{DynamicGraph, EdgePartition};
pub use model::{Aggregation, InferenceResult, ModelWeights, NodeEmbeddingMatrix};
pub use sim::{SimConfig, SimTrace};

/// Width of node embeddings and edge messages throughout the network.
pub const EMBED_DIM: usize = 32;
