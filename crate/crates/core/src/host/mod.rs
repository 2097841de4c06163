//! Simulated multi-core host: trace replay, a last-level cache, the CXL
//! address window and per-core cycle accounting with threshold-based
//! context switching.

mod address;
mod engine;
mod llc;
mod trace;

pub use address::{AddressMap, Region};
pub use engine::{DispatchRecord, Engine, HostConfig, RunError, RunOutcome, SwitchDecision};
pub use llc::{LlcModel, LlcOutcome};
pub use trace::{
    generate_trace, load_trace, parse_trace, write_trace, AddressDistribution, TraceError, TraceFormat, TraceRecord,
    TraceSet, TraceSpec,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Opcode {
    Read,
    Write,
}

/// One 64 B cacheline access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryRequest {
    pub core_id: u16,
    pub thread_id: u16,
    pub opcode: Opcode,
    pub address: u64,
    pub issue_cycle: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HostError {
    #[error("address {0:#x} is not in any configured region")]
    Unmapped(u64),
    #[error("invalid address map: {0}")]
    AddressMap(String),
    #[error("invalid host configuration: {0}")]
    Config(String),
}
