//! Trace-driven, device-in-the-loop simulator of a CXL-attached SSD.
//!
//! A simulated multi-core host replays memory traces. Last-level-cache
//! misses that fall in the CXL window are encoded as custom NVMe commands
//! and executed by firmware logic (write log, page cache, two-level log
//! index, compaction) over a NAND channel/way timing model. The host clock
//! pauses for each command and then charges the measured device latency,
//! plus a fixed interface overhead, converted to cycles.

pub mod experiment;
pub mod firmware;
pub mod host;
pub mod metrics;
pub mod nand;
pub mod transport;
