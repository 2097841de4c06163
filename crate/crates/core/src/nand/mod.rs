//! NAND flash array timing model.
//!
//! The array is a grid of `channels × ways` units. Each unit executes one
//! operation at a time in FIFO order; per-operation latency comes from a
//! pluggable [`LatencyProvider`] plus a linear queue-depth overhead that
//! stands in for flash-controller and firmware cost under load.
//!
//! Page contents are not stored here; this module only resolves *when*
//! operations complete. The firmware keeps the data.

mod array;
mod cost;
mod provider;

pub use array::{NandArray, NandEvent, NandOp, NandRequest, Schedule};
pub use cost::{CostMode, CostParams, LogicCategory, LogicCostModel};
pub use provider::{
    load_empirical, parse_empirical, uniform_pair, BaseModel, KindStats, LatencyModel, LatencyProvider, SampleTable,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// NAND page size used throughout (16 KiB).
pub const DEFAULT_PAGE_SIZE: u64 = 16 * 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NandError {
    #[error("page {page} is outside the array ({total} pages)")]
    PageOutOfRange { page: u64, total: u64 },
    #[error("empty sample table for {0}")]
    EmptyTable(OpKind),
    #[error("no samples for {0} in empirical latency file")]
    MissingKind(OpKind),
    #[error("empirical latency file, line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid latency provider: {0}")]
    InvalidProvider(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("io error: {0}")]
    Io(String),
}

/// NAND operation kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    /// Page read (t_R).
    Read,
    /// Page program (t_Prog).
    Program,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Read => "read",
            OpKind::Program => "program",
        }
    }

    pub(crate) fn stream(self) -> u64 {
        match self {
            OpKind::Read => 0,
            OpKind::Program => 1,
        }
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A (channel, way) unit of the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Unit {
    pub channel: u32,
    pub way: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NandGeometry {
    pub channels: u32,
    pub ways: u32,
    pub page_size: u64,
    pub pages_per_way: u64,
}

impl Default for NandGeometry {
    fn default() -> Self {
        // 4 channels x 8 ways x 4096 pages x 16 KiB = 2 GiB
        Self { channels: 4, ways: 8, page_size: DEFAULT_PAGE_SIZE, pages_per_way: 4096 }
    }
}

impl NandGeometry {
    pub fn new(channels: u32, ways: u32, page_size: u64, pages_per_way: u64) -> Result<Self, NandError> {
        let g = Self { channels, ways, page_size, pages_per_way };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), NandError> {
        if self.channels == 0 || self.ways == 0 || self.pages_per_way == 0 {
            return Err(NandError::InvalidGeometry("channels, ways and pages_per_way must be positive".into()));
        }
        if self.page_size < 64 || !self.page_size.is_multiple_of(64) {
            return Err(NandError::InvalidGeometry(format!(
                "page size {} is not a positive multiple of 64",
                self.page_size
            )));
        }
        self.total_pages()
            .checked_mul(self.page_size)
            .ok_or_else(|| NandError::InvalidGeometry("capacity overflows 64 bits".into()))?;
        Ok(())
    }

    pub fn units(&self) -> usize {
        self.channels as usize * self.ways as usize
    }

    pub fn total_pages(&self) -> u64 {
        self.channels as u64 * self.ways as u64 * self.pages_per_way
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.total_pages() * self.page_size
    }

    /// Cachelines per page (256 for 16 KiB pages).
    pub fn lines_per_page(&self) -> u64 {
        self.page_size / 64
    }

    /// Channel-first striping: consecutive pages land on consecutive channels,
    /// then advance the way.
    pub fn map_page(&self, page: u64) -> Result<Unit, NandError> {
        let total = self.total_pages();
        if page >= total {
            return Err(NandError::PageOutOfRange { page, total });
        }
        let channels = self.channels as u64;
        Ok(Unit { channel: (page % channels) as u32, way: ((page / channels) % self.ways as u64) as u32 })
    }

    pub(crate) fn unit_index(&self, unit: Unit) -> usize {
        unit.channel as usize * self.ways as usize + unit.way as usize
    }
}
