use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AddressMap, HostError, LlcModel, LlcOutcome, MemoryRequest, Region, TraceSet};
use crate::firmware::Firmware;
use crate::metrics::{Breakdown, CoreReport, Counts, EventKind, Metrics, RunReport, REPORT_SCHEMA_VERSION};
use crate::transport::{finalize_latency, ns_to_cycles, Transport, TransportError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostConfig {
    pub core_count: usize,
    pub threads_per_core: usize,
    pub frequency_hz: u64,
    /// Cycles per non-memory instruction.
    pub instruction_cost_cycles: u64,
    pub llc_bytes: u64,
    pub llc_ways: usize,
    pub llc_hit_cycles: u64,
    /// Fixed cost of an LLC miss served by host DRAM.
    pub dram_access_cycles: u64,
    pub switch_threshold_ns: u64,
    pub switch_penalty_cycles: u64,
    /// Memory accesses to dispatch before stopping; `None` runs every trace to the end.
    pub access_budget: Option<u64>,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            core_count: 1,
            threads_per_core: 1,
            frequency_hz: 2_000_000_000,
            instruction_cost_cycles: 1,
            llc_bytes: 8 << 20,
            llc_ways: 16,
            llc_hit_cycles: 40,
            dram_access_cycles: 200,
            switch_threshold_ns: 2_000,
            switch_penalty_cycles: 0,
            access_budget: None,
        }
    }
}

impl HostConfig {
    pub fn validate(&self) -> Result<(), HostError> {
        let bad = |m: String| Err(HostError::Config(m));
        if self.core_count == 0 || self.core_count > u16::MAX as usize {
            return bad(format!("core_count {} out of range", self.core_count));
        }
        if self.threads_per_core == 0 || self.threads_per_core > u16::MAX as usize {
            return bad(format!("threads_per_core {} out of range", self.threads_per_core));
        }
        if self.frequency_hz == 0 {
            return bad("frequency_hz must be positive".into());
        }
        LlcModel::new(self.llc_bytes, self.llc_ways).map_err(HostError::Config)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchDecision {
    /// The core waits out the latency.
    Stall { cycles: u64 },
    /// The active thread blocks until `wake_cycle` and `to_thread` takes over.
    Switch { to_thread: usize, wake_cycle: u64, penalty_cycles: u64 },
}

#[derive(Debug, Error)]
#[error("request #{ordinal}: {source}")]
pub struct RunError {
    pub ordinal: u64,
    #[source]
    pub source: RunErrorKind,
}

#[derive(Debug, Error)]
pub enum RunErrorKind {
    #[error(transparent)]
    Host(#[from] HostError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// One CXL-bound access as seen by the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub ordinal: u64,
    pub core: u16,
    pub thread: u16,
    pub address: u64,
    /// Core cycle when the command was issued.
    pub issue_cycle: u64,
    /// Device latency from the completion.
    pub device_ns: u64,
    pub cxl_op_overhead_ns: u64,
    /// Device latency plus interface overhead.
    pub total_ns: u64,
    pub latency_cycles: u64,
    pub switched: bool,
    /// Whether another thread on the core could have run.
    pub peer_runnable: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub metrics: Metrics,
    /// Present when dispatch recording was enabled.
    pub dispatches: Option<Vec<DispatchRecord>>,
    /// Device state after the run.
    pub firmware: Firmware,
}

#[derive(Debug, Clone, Default)]
struct ThreadState {
    cursor: usize,
    blocked_until: u64,
}

#[derive(Debug, Clone)]
struct CoreState {
    cycle: u64,
    active: usize,
    threads: Vec<ThreadState>,
    instructions: u64,
    accesses: u64,
    switches: u64,
}

/// Replays traces through the LLC, the transport and the firmware.
pub struct Engine {
    config: HostConfig,
    map: AddressMap,
    llc: LlcModel,
    transport: Transport,
    firmware: Firmware,
    metrics: Metrics,
    record_dispatches: bool,
}

impl Engine {
    pub fn new(
        config: HostConfig,
        map: AddressMap,
        transport: Transport,
        firmware: Firmware,
        keep_events: bool,
    ) -> Result<Self, HostError> {
        config.validate()?;
        map.validate()?;
        let llc = LlcModel::new(config.llc_bytes, config.llc_ways).map_err(HostError::Config)?;
        Ok(Self { config, map, llc, transport, firmware, metrics: Metrics::new(keep_events), record_dispatches: false })
    }

    pub fn record_dispatches(mut self, on: bool) -> Self {
        self.record_dispatches = on;
        self
    }

    pub fn firmware(&self) -> &Firmware {
        &self.firmware
    }

    pub fn config(&self) -> &HostConfig {
        &self.config
    }

    /// Switch if the latency is strictly over the threshold and a peer can run.
    pub fn decide_switch(
        &self,
        latency_ns: u64,
        latency_cycles: u64,
        cycle: u64,
        active: usize,
        runnable_peer: Option<usize>,
    ) -> SwitchDecision {
        match runnable_peer {
            Some(to) if latency_ns > self.config.switch_threshold_ns && to != active => SwitchDecision::Switch {
                to_thread: to,
                wake_cycle: cycle + latency_cycles,
                penalty_cycles: self.config.switch_penalty_cycles,
            },
            _ => SwitchDecision::Stall { cycles: latency_cycles },
        }
    }

    fn next_runnable(core: &CoreState, traces: &TraceSet, core_id: usize, exclude_active: bool) -> Option<usize> {
        let n = core.threads.len();
        let start = if exclude_active { 1 } else { 0 };
        (start..n + start).map(|k| (core.active + k) % n).find(|&t| {
            !(exclude_active && t == core.active)
                && core.threads[t].cursor < traces.stream(core_id, t).len()
                && core.threads[t].blocked_until <= core.cycle
        })
    }

    pub fn run(mut self, traces: &TraceSet) -> Result<RunOutcome, RunError> {
        let cfg = self.config.clone();
        if traces.cores() != cfg.core_count || traces.threads_per_core() != cfg.threads_per_core {
            return Err(RunError {
                ordinal: 0,
                source: HostError::Config(format!(
                    "trace shape {}x{} does not match {} cores x {} threads",
                    traces.cores(),
                    traces.threads_per_core(),
                    cfg.core_count,
                    cfg.threads_per_core
                ))
                .into(),
            });
        }
        let mut cores: Vec<CoreState> = (0..cfg.core_count)
            .map(|_| CoreState {
                cycle: 0,
                active: 0,
                threads: vec![ThreadState::default(); cfg.threads_per_core],
                instructions: 0,
                accesses: 0,
                switches: 0,
            })
            .collect();
        let mut counts = Counts::default();
        let mut dispatches = self.record_dispatches.then(Vec::new);
        let budget = cfg.access_budget.unwrap_or(u64::MAX);
        let mut dispatched = 0u64;

        while dispatched < budget {
            // next core: lowest cycle among cores with work, ties to lowest id
            let pick = cores
                .iter()
                .enumerate()
                .filter(|(c, core)| {
                    core.threads.iter().enumerate().any(|(t, th)| th.cursor < traces.stream(*c, t).len())
                })
                .min_by_key(|(c, core)| (core.cycle, *c))
                .map(|(c, _)| c);
            let Some(c) = pick else { break };

            let core = &cores[c];
            let active_ok = {
                let th = &core.threads[core.active];
                th.cursor < traces.stream(c, core.active).len() && th.blocked_until <= core.cycle
            };
            if !active_ok {
                match Self::next_runnable(core, traces, c, false) {
                    Some(t) => cores[c].active = t,
                    None => {
                        // everything left is blocked: idle until the first wake-up
                        let wake = core
                            .threads
                            .iter()
                            .enumerate()
                            .filter(|(t, th)| th.cursor < traces.stream(c, *t).len())
                            .map(|(_, th)| th.blocked_until)
                            .min()
                            .expect("picked core has work");
                        cores[c].cycle = wake;
                    }
                }
                continue;
            }

            let ordinal = dispatched;
            dispatched += 1;
            let core = &mut cores[c];
            let t = core.active;
            let rec = traces.stream(c, t)[core.threads[t].cursor];
            core.threads[t].cursor += 1;
            core.cycle += rec.gap_instructions * cfg.instruction_cost_cycles;
            core.instructions += rec.gap_instructions + 1;
            core.accesses += 1;
            counts.memory_accesses += 1;

            let line = rec.address & !63;
            if self.llc.access(line) == LlcOutcome::Hit {
                counts.llc_hits += 1;
                core.cycle += cfg.llc_hit_cycles;
                continue;
            }
            counts.llc_misses += 1;
            let region = self.map.classify(line).map_err(|e| RunError { ordinal, source: e.into() })?;
            if region == Region::HostDram {
                counts.host_dram_accesses += 1;
                core.cycle += cfg.dram_access_cycles;
                continue;
            }
            counts.cxl_accesses += 1;

            let req = MemoryRequest {
                core_id: c as u16,
                thread_id: t as u16,
                opcode: rec.opcode,
                address: line,
                issue_cycle: core.cycle,
            };
            let err = |e: TransportError| RunError { ordinal, source: e.into() };
            let cmd = self.transport.encode(&req).map_err(err)?;
            let completion = self.transport.issue(&cmd, &mut self.firmware).map_err(err)?;
            debug_assert_eq!(core.cycle, req.issue_cycle, "host clock is paused during issue");
            let total_ns = finalize_latency(&completion, &self.transport.interface).map_err(err)?;
            let latency_cycles = ns_to_cycles(total_ns, cfg.frequency_hz).map_err(err)?;
            for ev in self.firmware.drain_events() {
                self.metrics.record(ev.kind, ev.latency_ns, ev.breakdown, c as u16, t as u16, req.issue_cycle);
            }

            let peer = Self::next_runnable(core, traces, c, true);
            let decision = self.decide_switch(total_ns, latency_cycles, core.cycle, t, peer);
            let switched = matches!(decision, SwitchDecision::Switch { .. });
            match decision {
                SwitchDecision::Stall { cycles } => core.cycle += cycles,
                SwitchDecision::Switch { to_thread, wake_cycle, penalty_cycles } => {
                    core.threads[t].blocked_until = wake_cycle;
                    core.cycle += penalty_cycles;
                    core.active = to_thread;
                    core.switches += 1;
                    counts.context_switches += 1;
                    self.metrics.record(
                        EventKind::ContextSwitch,
                        total_ns,
                        Breakdown::default(),
                        c as u16,
                        t as u16,
                        req.issue_cycle,
                    );
                }
            }
            if let Some(d) = &mut dispatches {
                d.push(DispatchRecord {
                    ordinal,
                    core: c as u16,
                    thread: t as u16,
                    address: line,
                    issue_cycle: req.issue_cycle,
                    device_ns: completion.total_device_latency_ns as u64,
                    cxl_op_overhead_ns: completion.cxl_op_overhead_ns as u64,
                    total_ns,
                    latency_cycles,
                    switched,
                    peer_runnable: peer.is_some(),
                });
            }
        }

        // a blocked thread's last access still has to finish
        for core in &mut cores {
            let last_wake = core.threads.iter().map(|t| t.blocked_until).max().unwrap_or(0);
            core.cycle = core.cycle.max(last_wake);
        }

        let fw = self.firmware.counters();
        counts.log_inserts = self.metrics.count(EventKind::LogInsert);
        counts.log_hits = self.metrics.count(EventKind::LogHit);
        counts.cache_hits = self.metrics.count(EventKind::CacheHit);
        counts.cache_misses = self.metrics.count(EventKind::CacheMiss);
        counts.evictions = self.metrics.count(EventKind::Eviction);
        counts.dirty_evictions = fw.dirty_evictions;
        counts.compactions = self.metrics.count(EventKind::Compaction);
        counts.nand_reads = self.metrics.count(EventKind::NandRead);
        counts.nand_programs = self.metrics.count(EventKind::NandProgram);

        let core_reports: Vec<CoreReport> = cores
            .iter()
            .enumerate()
            .map(|(i, c)| CoreReport {
                core: i as u16,
                cycles: c.cycle,
                instructions: c.instructions,
                memory_accesses: c.accesses,
                context_switches: c.switches,
            })
            .collect();
        let total_cycles: u64 = core_reports.iter().map(|c| c.cycles).sum();
        let total_instructions: u64 = core_reports.iter().map(|c| c.instructions).sum();
        let report = RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            experiment: String::new(),
            seed: 0,
            config: Default::default(),
            cores: core_reports,
            total_cycles,
            total_instructions,
            cycles_per_instruction: (total_instructions > 0).then(|| total_cycles as f64 / total_instructions as f64),
            counts,
            latency: Default::default(),
            breakdown: Default::default(),
            histograms: Default::default(),
            cdfs: Default::default(),
        };
        Ok(RunOutcome { report, metrics: self.metrics, dispatches, firmware: self.firmware })
    }
}
