//! Execution-trace toolkit: a canonical per-rank trace schema with JSON I/O,
//! host/device ingest and linking, conversion to the canonical DAG form,
//! dependency-aware windowed feeding, an analytical what-if simulator,
//! trace analyses, and synthetic workload generation.

pub mod analyzer;
pub mod converter;
pub mod dot;
pub mod feeder;
pub mod generator;
pub mod ingest;
pub mod linker;
pub mod schema;
pub mod sim;

pub use schema::{parse_trace, serialize_trace, validate_trace, ExecutionTrace, TraceNode};
