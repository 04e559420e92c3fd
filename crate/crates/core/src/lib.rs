//! Battery pack inconsistency evaluation.
//!
//! The crate turns raw cell-level measurements of a battery energy storage
//! cluster into a date-keyed record dataset:
//!
//! - [`ingest`] loads per-pack CSV files, cleans them and cuts them into
//!   charge/discharge operations.
//! - [`select`] keeps the standard operations (long enough, flat current).
//! - [`voltage`] and [`rpca`] compute voltage spread statistics and count
//!   inconsistent cells through a robust low-rank projection.
//! - [`thermal`] computes temperature spread and the thermal consistency
//!   coefficient.
//! - [`health`] and [`lof`] estimate pack capacity and SOH from steady current
//!   segments.
//! - [`records`] assembles, persists, queries and renders the record dataset.
//! - [`pipeline`] wires everything together over a directory of CSV files.
//!
//! Batch work (packs, operations, trials) goes through [`par`], which uses
//! rayon when the `parallel` feature is enabled and degrades to plain
//! iteration otherwise.

pub mod health;
pub mod ingest;
pub mod lof;
pub mod par;
pub mod pipeline;
pub mod records;
pub mod rpca;
pub mod select;
pub mod synth;
pub mod thermal;
pub mod voltage;

pub use health::{CapacityPair, HealthParams, HealthResult, SteadySegment};
pub use ingest::{CleanParams, OpType, OperationSegment, RawChannelTable, SegmentParams};
pub use par::ExecMode;
pub use records::{RecordEntry, RecordStore};
pub use rpca::{RpcaParams, RpcaResult};
pub use select::{FitResult, SelectionParams};
pub use thermal::ThermalEvaluation;
pub use voltage::{VoltageEvaluation, VoltageParams};
