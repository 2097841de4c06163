//! Browser demo: three small studies driven from a static page.
//!
//! Each study is a plain function returning a serializable result; the
//! `#[wasm_bindgen]` wrappers hand the page a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cxlssd::experiment::ExperimentConfig;
use cxlssd::firmware::{CompactionMode, Firmware, FirmwareConfig};
use cxlssd::host::{generate_trace, TraceRecord, TraceSet, TraceSpec};
use cxlssd::metrics::{Breakdown, EventKind, HistBin, Metrics};
use cxlssd::nand::{parse_empirical, BaseModel, LatencyProvider, LogicCostModel, NandArray, NandGeometry, OpKind};

const DEPTH8_TABLE: &str = include_str!("../../../recipes/fixtures/nand_depth8.csv");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub log_entries: usize,
    pub pages: usize,
    pub busy_units: usize,
    pub sequential_ns: u64,
    pub parallel_ns: u64,
    pub speedup: f64,
}

/// Fills a write log of each size with random lines over `region_pages`
/// pages, then times one sequential and one parallel compaction.
pub fn compaction_sweep(
    channels: u32,
    ways: u32,
    region_pages: u64,
    read_ns: u64,
    program_ns: u64,
    seed: u64,
) -> Result<Vec<SweepPoint>, String> {
    let g = NandGeometry::new(channels, ways, 16 * 1024, region_pages.div_ceil((channels * ways) as u64).max(1))
        .map_err(|e| e.to_string())?;
    let trace_lines = region_pages * 256;
    let mut out = Vec::new();
    for k in 0..=6 {
        let entries = 1024usize << k;
        let cfg = FirmwareConfig {
            geometry: g,
            write_log_capacity: entries,
            data_cache_frames: 1,
            compaction_mode: CompactionMode::Sequential,
            ..Default::default()
        };
        let nand = NandArray::new(g, LatencyProvider::constant(read_ns, program_ns), 0);
        let mut fw = Firmware::new(cfg, nand, LogicCostModel::static_baseline()).map_err(|e| e.to_string())?;
        let spec = TraceSpec {
            count: entries as u64 - 1,
            read_ratio: 0.0,
            base: 0,
            span_bytes: trace_lines * 64,
            seed,
            ..Default::default()
        };
        for r in generate_trace(&spec).map_err(|e| e.to_string())? {
            fw.handle_write(r.address, None).map_err(|e| e.to_string())?;
        }
        let pages: Vec<u64> = fw.index().pages().collect();
        let mut units: Vec<(u32, u32)> = pages
            .iter()
            .map(|&p| g.map_page(p).map(|u| (u.channel, u.way)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        units.sort_unstable();
        units.dedup();
        let mut par = fw.clone();
        let s = fw.compact_sequential().map_err(|e| e.to_string())?;
        let p = par.compact_parallel().map_err(|e| e.to_string())?;
        out.push(SweepPoint {
            log_entries: entries,
            pages: pages.len(),
            busy_units: units.len(),
            sequential_ns: s.elapsed_ns,
            parallel_ns: p.elapsed_ns,
            speedup: if p.elapsed_ns == 0 { 1.0 } else { s.elapsed_ns as f64 / p.elapsed_ns as f64 },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderHistogram {
    pub mode: String,
    pub draws: u64,
    pub mean_ns: f64,
    pub stddev_ns: f64,
    pub bins: Vec<HistBin>,
}

/// Histogram of `draws` NAND read latencies. `mode` is `constant`,
/// `spike` (constant base) or `empirical` (bundled depth-8 table).
pub fn provider_histogram(
    mode: &str,
    read_ns: u64,
    spike_magnitude_ns: u64,
    spike_probability: f64,
    draws: u64,
    bin_ns: u64,
    seed: u64,
) -> Result<ProviderHistogram, String> {
    let provider = match mode {
        "constant" => LatencyProvider::constant(read_ns, read_ns),
        "spike" => LatencyProvider::spike(
            BaseModel::Constant { read_ns, program_ns: read_ns },
            spike_magnitude_ns,
            spike_probability,
            seed,
        )
        .map_err(|e| e.to_string())?,
        "empirical" => {
            let (read, program) = parse_empirical(DEPTH8_TABLE).map_err(|e| e.to_string())?;
            LatencyProvider::empirical(read, program, seed)
        }
        other => return Err(format!("unknown mode `{other}`")),
    };
    let mut m = Metrics::new(false);
    for i in 0..draws {
        m.record(EventKind::NandRead, provider.sample(OpKind::Read, i), Breakdown::default(), 0, 0, 0);
    }
    let s = m.summary(EventKind::NandRead);
    Ok(ProviderHistogram {
        mode: mode.into(),
        draws,
        mean_ns: s.mean,
        stddev_ns: s.stddev,
        bins: m.histogram(EventKind::NandRead, bin_ns).map_err(|e| e.to_string())?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchPoint {
    pub threads_per_core: usize,
    pub total_cycles: u64,
    pub context_switches: u64,
    pub cycles_per_instruction: f64,
}

/// Replays one read-heavy trace on a single core with 1..=`max_threads`
/// threads over a bimodal NAND (700 ns, or 99.72 us with `slow_probability`).
pub fn context_switch_study(
    max_threads: usize,
    slow_probability: f64,
    threshold_ns: u64,
    penalty_cycles: u64,
    accesses: u64,
    seed: u64,
) -> Result<Vec<SwitchPoint>, String> {
    let spec = TraceSpec {
        count: accesses,
        read_ratio: 0.8,
        span_bytes: 64 << 20,
        seed,
        threads: max_threads.clamp(1, 64) as u16,
        ..Default::default()
    };
    let records = generate_trace(&spec).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for threads in 1..=spec.threads as usize {
        let mut cfg = ExperimentConfig::default();
        let overrides = [
            format!("threads_per_core={threads}"),
            format!("switch_threshold_ns={threshold_ns}"),
            format!("switch_penalty_cycles={penalty_cycles}"),
            format!("spike_probability={slow_probability}"),
            format!("seed={seed}"),
            "llc_bytes=0".into(),
            "data_cache_frames=64".into(),
            "cost_log_insert_ns=0".into(),
            "cost_cache_check_ns=0".into(),
            "nand_mode=spike".into(),
            "nand_read_ns=700".into(),
            "nand_program_ns=700".into(),
            "spike_magnitude_ns=99020".into(),
        ];
        cfg.apply_overrides(&overrides).map_err(|e| e.to_string())?;
        // same access order, dealt round-robin over this many threads
        let dealt: Vec<TraceRecord> =
            records.iter().enumerate().map(|(i, r)| TraceRecord { thread: (i % threads) as u16, ..*r }).collect();
        let set = TraceSet::from_records(dealt, 1, threads).map_err(|e| e.to_string())?;
        let r = cfg.engine(false).map_err(|e| e.to_string())?.run(&set).map_err(|e| e.to_string())?.report;
        out.push(SwitchPoint {
            threads_per_core: threads,
            total_cycles: r.total_cycles,
            context_switches: r.counts.context_switches,
            cycles_per_instruction: r.cycles_per_instruction.unwrap_or(0.0),
        });
    }
    Ok(out)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = compactionSweep)]
pub fn compaction_sweep_js(
    channels: u32,
    ways: u32,
    region_pages: u32,
    read_ns: u32,
    program_ns: u32,
    seed: u32,
) -> Result<String, JsError> {
    to_js(compaction_sweep(channels, ways, region_pages as u64, read_ns as u64, program_ns as u64, seed as u64))
}

#[wasm_bindgen(js_name = providerHistogram)]
pub fn provider_histogram_js(
    mode: &str,
    read_ns: u32,
    spike_magnitude_ns: u32,
    spike_probability: f64,
    draws: u32,
    bin_ns: u32,
    seed: u32,
) -> Result<String, JsError> {
    to_js(provider_histogram(
        mode,
        read_ns as u64,
        spike_magnitude_ns as u64,
        spike_probability,
        draws as u64,
        bin_ns as u64,
        seed as u64,
    ))
}

#[wasm_bindgen(js_name = contextSwitchStudy)]
pub fn context_switch_study_js(
    max_threads: u32,
    slow_probability: f64,
    threshold_ns: u32,
    penalty_cycles: u32,
    accesses: u32,
    seed: u32,
) -> Result<String, JsError> {
    to_js(context_switch_study(
        max_threads as usize,
        slow_probability,
        threshold_ns as u64,
        penalty_cycles as u64,
        accesses as u64,
        seed as u64,
    ))
}
