//! CXL-SSD firmware: write log, page data cache, two-level log index and
//! log compaction, running over the NAND timing model.
//!
//! Requests are processed one at a time. Each request runs against a
//! stopwatch that starts at the device clock; logic steps draw their cost
//! from a [`LogicCostModel`] and NAND operations wait on the
//! [`NandArray`] schedule, so a request's latency is always the sum of its
//! per-category costs.

mod cache;
mod index;
mod log;

pub use cache::{DataCache, Evicted, Frame};
pub use index::LogIndex;
pub use log::{Line, LogFull, LogSlot, WriteLog, WriteLogEntry};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Breakdown, Category, EventKind};
use crate::nand::{LogicCategory, LogicCostModel, NandArray, NandError, NandGeometry, NandRequest, OpKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FirmwareError {
    #[error("address {address:#x} is outside the device window")]
    Unmapped { address: u64 },
    #[error(transparent)]
    Nand(#[from] NandError),
    #[error("invalid firmware configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompactionMode {
    /// One page at a time: read, merge, program.
    Sequential,
    /// All reads as one batch, merge, all programs as one batch.
    Parallel,
}

impl CompactionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CompactionMode::Sequential => "sequential",
            CompactionMode::Parallel => "parallel",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirmwareConfig {
    pub geometry: NandGeometry,
    /// Host address of device byte 0.
    pub base_address: u64,
    pub write_log_capacity: usize,
    pub data_cache_frames: usize,
    pub compaction_mode: CompactionMode,
    pub payload_capture: bool,
}

impl Default for FirmwareConfig {
    fn default() -> Self {
        Self {
            geometry: NandGeometry::default(),
            base_address: 0,
            write_log_capacity: 4096,
            data_cache_frames: 1024,
            compaction_mode: CompactionMode::Sequential,
            payload_capture: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadSource {
    DataCache,
    WriteLog,
    Nand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactionReport {
    pub mode: CompactionMode,
    pub pages: u64,
    pub reads: u64,
    pub programs: u64,
    pub elapsed_ns: u64,
    /// Portion of `elapsed_ns` spent waiting on NAND.
    pub nand_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceResult {
    /// Serving tier for reads.
    pub source: Option<ReadSource>,
    pub breakdown: Breakdown,
    /// Line contents for reads when payload capture is on.
    pub payload: Option<Line>,
    pub compaction: Option<CompactionReport>,
}

impl DeviceResult {
    pub fn total_ns(&self) -> u64 {
        self.breakdown.total()
    }

    pub fn nand_wait_ns(&self) -> u64 {
        self.breakdown.get(Category::NandWait)
    }

    /// Firmware logic time, i.e. everything except waiting on NAND.
    pub fn logic_ns(&self) -> u64 {
        self.total_ns() - self.nand_wait_ns()
    }
}

/// Device-side measurement emitted while serving a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceEvent {
    pub kind: EventKind,
    pub latency_ns: u64,
    pub breakdown: Breakdown,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirmwareCounters {
    pub writes: u64,
    pub reads: u64,
    pub log_hits: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub evictions: u64,
    pub dirty_evictions: u64,
    pub compactions: u64,
    pub compaction_programs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexLookup {
    pub slot: Option<LogSlot>,
    pub cost_ns: u64,
}

/// Request-scoped clock.
struct Stopwatch {
    now: u64,
    breakdown: Breakdown,
}

impl Stopwatch {
    fn new(now: u64) -> Self {
        Self { now, breakdown: Breakdown::default() }
    }

    fn charge(&mut self, cat: Category, ns: u64) {
        self.now += ns;
        self.breakdown.add(cat, ns);
    }

    fn wait_until(&mut self, t: u64) {
        let ns = t.saturating_sub(self.now);
        self.charge(Category::NandWait, ns);
    }
}

#[derive(Debug, Clone)]
pub struct Firmware {
    config: FirmwareConfig,
    nand: NandArray,
    costs: LogicCostModel,
    log: WriteLog,
    index: LogIndex,
    cache: DataCache,
    media: HashMap<u64, Box<[u8]>>,
    now_ns: u64,
    events: Vec<DeviceEvent>,
    counters: FirmwareCounters,
}

impl Firmware {
    pub fn new(config: FirmwareConfig, nand: NandArray, costs: LogicCostModel) -> Result<Self, FirmwareError> {
        config.geometry.validate()?;
        if nand.geometry() != &config.geometry {
            return Err(FirmwareError::Config("NAND array geometry differs from firmware geometry".into()));
        }
        if config.write_log_capacity == 0 || config.write_log_capacity > u32::MAX as usize {
            return Err(FirmwareError::Config("write log capacity must be in 1..=2^32-1".into()));
        }
        if config.data_cache_frames == 0 {
            return Err(FirmwareError::Config("data cache needs at least one frame".into()));
        }
        if config.geometry.lines_per_page() > u16::MAX as u64 + 1 {
            return Err(FirmwareError::Config("page size too large for 16-bit line offsets".into()));
        }
        Ok(Self {
            log: WriteLog::new(config.write_log_capacity),
            cache: DataCache::new(config.data_cache_frames),
            index: LogIndex::new(),
            media: HashMap::new(),
            now_ns: 0,
            events: Vec::new(),
            counters: FirmwareCounters::default(),
            config,
            nand,
            costs,
        })
    }

    pub fn config(&self) -> &FirmwareConfig {
        &self.config
    }

    pub fn nand(&self) -> &NandArray {
        &self.nand
    }

    pub fn log(&self) -> &WriteLog {
        &self.log
    }

    pub fn index(&self) -> &LogIndex {
        &self.index
    }

    pub fn cache(&self) -> &DataCache {
        &self.cache
    }

    pub fn counters(&self) -> FirmwareCounters {
        self.counters
    }

    /// Device clock: the sum of all request latencies so far.
    pub fn now_ns(&self) -> u64 {
        self.now_ns
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.config.geometry.capacity_bytes()
    }

    pub fn set_compaction_mode(&mut self, mode: CompactionMode) {
        self.config.compaction_mode = mode;
    }

    /// Persisted bytes of `page` (zeros if never programmed). Requires payload capture.
    pub fn nand_page(&self, page: u64) -> Vec<u8> {
        self.media.get(&page).map(|d| d.to_vec()).unwrap_or_else(|| vec![0; self.config.geometry.page_size as usize])
    }

    /// Programmed pages and their contents, ascending.
    pub fn nand_contents(&self) -> Vec<(u64, &[u8])> {
        let mut v: Vec<(u64, &[u8])> = self.media.iter().map(|(&p, d)| (p, &d[..])).collect();
        v.sort_unstable_by_key(|&(p, _)| p);
        v
    }

    /// Events produced since the last drain, NAND operations included.
    pub fn drain_events(&mut self) -> Vec<DeviceEvent> {
        let mut out = std::mem::take(&mut self.events);
        for op in self.nand.drain_events() {
            let mut b = Breakdown::single(Category::NandMedia, op.media_ns);
            b.add(Category::NandOverhead, op.overhead_ns);
            let kind = match op.kind {
                OpKind::Read => EventKind::NandRead,
                OpKind::Program => EventKind::NandProgram,
            };
            out.push(DeviceEvent { kind, latency_ns: op.latency_ns(), breakdown: b });
        }
        out
    }

    fn locate(&self, address: u64) -> Result<(u64, u16, u64), FirmwareError> {
        let offset = address
            .checked_sub(self.config.base_address)
            .filter(|&o| o < self.capacity_bytes())
            .ok_or(FirmwareError::Unmapped { address })?;
        let line_addr = address & !63;
        let page_size = self.config.geometry.page_size;
        Ok((offset / page_size, ((offset % page_size) / 64) as u16, line_addr))
    }

    fn charge(&mut self, sw: &mut Stopwatch, cat: LogicCategory) -> u64 {
        let ns = self.costs.draw(cat);
        sw.charge(cat.into(), ns);
        ns
    }

    fn zero_page(&self) -> Box<[u8]> {
        vec![0u8; self.config.geometry.page_size as usize].into_boxed_slice()
    }

    fn read_media(&self, page: u64) -> Option<Box<[u8]>> {
        self.config.payload_capture.then(|| self.media.get(&page).cloned().unwrap_or_else(|| self.zero_page()))
    }

    /// Copies every valid logged line of `page` into `data`; returns the line count.
    fn merge_logged(&self, page: u64, data: Option<&mut Box<[u8]>>) -> usize {
        let Some(lines) = self.index.page_lines(page) else { return 0 };
        if let Some(data) = data {
            for (&off, &slot) in lines {
                let entry = self.log.get(slot).expect("index points at a live slot");
                let at = off as usize * 64;
                data[at..at + 64].copy_from_slice(&entry.payload);
            }
        }
        lines.len()
    }

    fn program(&mut self, sw: &mut Stopwatch, page: u64, data: Option<Box<[u8]>>) -> Result<(), FirmwareError> {
        let op = self.nand.submit_one(NandRequest::program(page), sw.now)?;
        sw.wait_until(op.complete_ns);
        if let Some(d) = data {
            self.media.insert(page, d);
        }
        Ok(())
    }

    /// Evicts the LRU frame if the cache is full, programming it when dirty.
    fn make_room(&mut self, sw: &mut Stopwatch) -> Result<Option<(u64, bool)>, FirmwareError> {
        let Some(ev) = self.cache.evict_lru() else { return Ok(None) };
        self.counters.evictions += 1;
        let before = sw.breakdown;
        if ev.was_dirty {
            self.counters.dirty_evictions += 1;
            self.program(sw, ev.page, ev.data)?;
        }
        let cost = sw.breakdown.minus(&before);
        self.events.push(DeviceEvent { kind: EventKind::Eviction, latency_ns: cost.total(), breakdown: cost });
        Ok(Some((ev.page, ev.was_dirty)))
    }

    /// Inserts a non-resident page, evicting (and flushing, if dirty) the LRU frame.
    pub fn cache_admit(
        &mut self,
        page: u64,
        page_bytes: Option<Box<[u8]>>,
    ) -> Result<Option<(u64, bool)>, FirmwareError> {
        let total = self.config.geometry.total_pages();
        if page >= total {
            return Err(NandError::PageOutOfRange { page, total }.into());
        }
        if self.cache.contains(page) {
            return Err(FirmwareError::Config(format!("page {page} is already resident")));
        }
        let mut sw = Stopwatch::new(self.now_ns);
        let evicted = self.make_room(&mut sw)?;
        self.charge(&mut sw, LogicCategory::CacheInsert);
        let data =
            if self.config.payload_capture { Some(page_bytes.unwrap_or_else(|| self.zero_page())) } else { None };
        self.cache.admit(page, data, false);
        self.now_ns = sw.now;
        Ok(evicted)
    }

    /// Looks up the log slot holding `address`, charging an index check.
    pub fn lookup_index(&mut self, address: u64) -> Result<IndexLookup, FirmwareError> {
        let (page, off, _) = self.locate(address)?;
        let mut sw = Stopwatch::new(self.now_ns);
        let cost_ns = self.charge(&mut sw, LogicCategory::IndexCheck);
        self.now_ns = sw.now;
        Ok(IndexLookup { slot: self.index.lookup(page, off), cost_ns })
    }

    pub fn handle_write(&mut self, address: u64, payload: Option<&Line>) -> Result<DeviceResult, FirmwareError> {
        let (page, off, line_addr) = self.locate(address)?;
        self.counters.writes += 1;
        let mut sw = Stopwatch::new(self.now_ns);
        // append, residency probe and resident-line update are one log insert
        self.charge(&mut sw, LogicCategory::LogInsert);
        let bytes = match (self.config.payload_capture, payload) {
            (true, Some(p)) => *p,
            _ => [0u8; 64],
        };
        let slot = self.log.append(line_addr, bytes).expect("log is compacted before it can overflow");
        if let Some(frame) = self.cache.get_mut(page) {
            if let Some(data) = &mut frame.data {
                let at = off as usize * 64;
                data[at..at + 64].copy_from_slice(&bytes);
            }
            frame.dirty = true;
            self.cache.touch(page);
        }
        if let Some(old) = self.index.insert(page, off, slot) {
            self.log.invalidate(old);
        }
        self.charge(&mut sw, LogicCategory::IndexUpdate);
        let insert = sw.breakdown;
        self.events.push(DeviceEvent { kind: EventKind::LogInsert, latency_ns: insert.total(), breakdown: insert });

        let mut compaction = None;
        if self.log.occupancy() >= self.log.capacity() {
            compaction = Some(self.compact_with(&mut sw, self.config.compaction_mode)?);
        }
        self.now_ns = sw.now;
        Ok(DeviceResult { source: None, breakdown: sw.breakdown, payload: None, compaction })
    }

    pub fn handle_read(&mut self, address: u64) -> Result<DeviceResult, FirmwareError> {
        let (page, off, _) = self.locate(address)?;
        self.counters.reads += 1;
        let mut sw = Stopwatch::new(self.now_ns);
        let at = off as usize * 64;
        let line_of = |data: &[u8]| -> Line { data[at..at + 64].try_into().unwrap() };

        self.charge(&mut sw, LogicCategory::CacheCheck);
        if self.cache.contains(page) {
            self.cache.touch(page);
            let payload = self.cache.get(page).and_then(|f| f.data.as_deref()).map(line_of);
            self.counters.cache_hits += 1;
            return Ok(self.finish_read(sw, ReadSource::DataCache, EventKind::CacheHit, payload));
        }

        self.charge(&mut sw, LogicCategory::IndexCheck);
        if let Some(slot) = self.index.lookup(page, off) {
            let payload = self.config.payload_capture.then(|| self.log.get(slot).expect("live slot").payload);
            self.counters.log_hits += 1;
            return Ok(self.finish_read(sw, ReadSource::WriteLog, EventKind::LogHit, payload));
        }

        // NAND path: make room, load, merge newer logged lines, serve
        self.counters.cache_misses += 1;
        self.make_room(&mut sw)?;
        let op = self.nand.submit_one(NandRequest::read(page), sw.now)?;
        sw.wait_until(op.complete_ns);
        let mut data = self.read_media(page);
        let merged = self.merge_logged(page, data.as_mut());
        self.charge(&mut sw, LogicCategory::CacheInsert);
        let payload = data.as_deref().map(line_of);
        self.cache.admit(page, data, merged > 0);
        Ok(self.finish_read(sw, ReadSource::Nand, EventKind::CacheMiss, payload))
    }

    fn finish_read(
        &mut self,
        sw: Stopwatch,
        source: ReadSource,
        kind: EventKind,
        payload: Option<Line>,
    ) -> DeviceResult {
        self.events.push(DeviceEvent { kind, latency_ns: sw.breakdown.total(), breakdown: sw.breakdown });
        self.now_ns = sw.now;
        DeviceResult { source: Some(source), breakdown: sw.breakdown, payload, compaction: None }
    }

    pub fn compact_sequential(&mut self) -> Result<CompactionReport, FirmwareError> {
        let mut sw = Stopwatch::new(self.now_ns);
        let r = self.compact_with(&mut sw, CompactionMode::Sequential);
        self.now_ns = sw.now;
        r
    }

    pub fn compact_parallel(&mut self) -> Result<CompactionReport, FirmwareError> {
        let mut sw = Stopwatch::new(self.now_ns);
        let r = self.compact_with(&mut sw, CompactionMode::Parallel);
        self.now_ns = sw.now;
        r
    }

    /// Persists every indexed page and empties the log and index.
    fn compact_with(&mut self, sw: &mut Stopwatch, mode: CompactionMode) -> Result<CompactionReport, FirmwareError> {
        let start = sw.now;
        let before = sw.breakdown;
        let pages: Vec<u64> = self.index.pages().collect();
        let mut report =
            CompactionReport { mode, pages: pages.len() as u64, reads: 0, programs: 0, elapsed_ns: 0, nand_ns: 0 };
        if pages.is_empty() {
            return Ok(report);
        }
        match mode {
            CompactionMode::Sequential => {
                for &page in &pages {
                    self.charge(sw, LogicCategory::IndexCheck);
                    let data = if let Some(frame) = self.cache.get(page) {
                        // resident frames already carry the logged lines
                        frame.data.clone()
                    } else {
                        let op = self.nand.submit_one(NandRequest::read(page), sw.now)?;
                        sw.wait_until(op.complete_ns);
                        report.reads += 1;
                        let mut data = self.read_media(page);
                        self.merge_logged(page, data.as_mut());
                        data
                    };
                    self.program(sw, page, data)?;
                    report.programs += 1;
                }
            }
            CompactionMode::Parallel => {
                for _ in &pages {
                    self.charge(sw, LogicCategory::IndexCheck);
                }
                let loads: Vec<NandRequest> =
                    pages.iter().filter(|&&p| !self.cache.contains(p)).map(|&p| NandRequest::read(p)).collect();
                let sched = self.nand.submit(&loads, sw.now)?;
                sw.wait_until(sched.done_ns);
                report.reads = loads.len() as u64;
                let mut merged = Vec::with_capacity(pages.len());
                for &page in &pages {
                    let data = match self.cache.get(page) {
                        Some(frame) => frame.data.clone(),
                        None => {
                            let mut data = self.read_media(page);
                            self.merge_logged(page, data.as_mut());
                            data
                        }
                    };
                    merged.push(data);
                }
                let flushes: Vec<NandRequest> = pages.iter().map(|&p| NandRequest::program(p)).collect();
                let sched = self.nand.submit(&flushes, sw.now)?;
                sw.wait_until(sched.done_ns);
                report.programs = flushes.len() as u64;
                for (&page, data) in pages.iter().zip(merged) {
                    if let Some(d) = data {
                        self.media.insert(page, d);
                    }
                }
            }
        }
        for &page in &pages {
            if let Some(frame) = self.cache.get_mut(page) {
                frame.dirty = false;
            }
        }
        self.log.reclaim_all();
        self.index.clear();
        self.counters.compactions += 1;
        self.counters.compaction_programs += report.programs;
        let cost = sw.breakdown.minus(&before);
        report.elapsed_ns = sw.now - start;
        report.nand_ns = cost.get(Category::NandWait);
        self.events.push(DeviceEvent { kind: EventKind::Compaction, latency_ns: cost.total(), breakdown: cost });
        Ok(report)
    }
}

impl crate::transport::CxlDevice for Firmware {
    fn execute(
        &mut self,
        opcode: crate::transport::CxlOpcode,
        address: u64,
    ) -> Result<crate::transport::DeviceResponse, String> {
        use crate::transport::CxlOpcode;
        let result = match opcode {
            CxlOpcode::CxlRead => self.handle_read(address),
            CxlOpcode::CxlWrite => self.handle_write(address, None),
        }
        .map_err(|e| e.to_string())?;
        Ok(crate::transport::DeviceResponse { total_ns: result.total_ns(), cxl_op_overhead_ns: result.logic_ns() })
    }
}
