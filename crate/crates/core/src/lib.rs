//! Deterministic simulator for model poisoning of federated learning by
//! injected fake clients.
//!
//! The crate is organised bottom-up:
//!
//! - [`vectors`]: parameter-vector arithmetic and seeded random streams
//! - [`model`]: a fully connected classifier with manual backpropagation
//! - [`data`]: synthetic, IDX and CSV datasets plus client partitioning
//! - [`aggregation`]: norm clipping, FedAvg, Median, Trimmed-mean
//! - [`attacks`]: random, history and base-model (MPAF) fake updates
//! - [`engine`]: the round loop, telemetry and multi-run summaries

pub mod aggregation;
pub mod attacks;
pub mod data;
pub mod engine;
pub mod model;
pub mod vectors;

pub use aggregation::{AggregationRule, ClientKind, ClientUpdate, Rule, TrimPolicy};
pub use attacks::{AttackKind, AttackSpec};
pub use engine::{run_simulation, summarize, DataSource, PartitionScheme, RoundRecord, SimConfig, Simulation};
pub use model::{Activation, LocalTraining, MlpSpec};
pub use vectors::{derive_stream, ParamVector, RngStream};
