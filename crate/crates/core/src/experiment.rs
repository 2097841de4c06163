//! Experiment configuration and the run / gen-trace / compare pipeline
//! shared by the command-line runner and the browser demo.
//!
//! A config file is flat `key = value` text. `#` starts a comment, blank
//! lines are ignored and every key is optional; unknown keys are rejected.
//! Integer values accept `_` separators, a `0x` prefix and a `K`/`M`/`G`
//! binary suffix (`64M` is 64 MiB).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::firmware::{CompactionMode, Firmware, FirmwareConfig, FirmwareError};
use crate::host::{
    generate_trace, load_trace, write_trace, AddressDistribution, AddressMap, Engine, HostConfig, HostError, Opcode,
    RunError, RunOutcome, TraceError, TraceFormat, TraceRecord, TraceSet, TraceSpec,
};
use crate::metrics::{EventKind, MetricsError, RunReport};
use crate::nand::{
    load_empirical, BaseModel, CostMode, CostParams, LatencyModel, LatencyProvider, LogicCategory, LogicCostModel,
    NandArray, NandError, NandGeometry,
};
use crate::transport::{InterfaceModel, Transport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Nand(#[from] NandError),
    #[error(transparent)]
    Host(#[from] HostError),
    #[error(transparent)]
    Firmware(#[from] FirmwareError),
    #[error("access {}: {}", .0.ordinal, .0.source)]
    Run(#[from] RunError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot compare reports: {0}")]
    Compare(String),
}

impl ExperimentError {
    fn value(key: &str, msg: impl Into<String>) -> Self {
        ExperimentError::Value { key: key.into(), msg: msg.into() }
    }

    /// True when the failure came from reading or writing a file.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            ExperimentError::Io { .. }
                | ExperimentError::Trace(TraceError::Io { .. })
                | ExperimentError::Nand(NandError::Io(_))
                | ExperimentError::Metrics(MetricsError::Io { .. })
        )
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NandMode {
    Constant,
    Empirical,
    Spike,
}

impl NandMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NandMode::Constant => "constant",
            NandMode::Empirical => "empirical",
            NandMode::Spike => "spike",
        }
    }
}

/// Where the trace comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceSource {
    File(PathBuf),
    /// Generated in memory from the `gen_*` keys.
    Generate,
}

/// Synthetic-trace keys used with `trace = generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSettings {
    pub count: u64,
    pub read_ratio: f64,
    pub distribution: AddressDistribution,
    pub gap_min: u64,
    pub gap_max: u64,
    pub span_bytes: u64,
}

impl Default for GenSettings {
    fn default() -> Self {
        let d = TraceSpec::default();
        Self {
            count: d.count,
            read_ratio: d.read_ratio,
            distribution: d.distribution,
            gap_min: d.gap_min,
            gap_max: d.gap_max,
            span_bytes: d.span_bytes,
        }
    }
}

/// Every tunable of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub trace: Option<TraceSource>,
    pub trace_format: TraceFormat,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub host: HostConfig,
    pub cxl_base: u64,
    pub cxl_limit: u64,
    pub dram_regions: Vec<(u64, u64)>,
    pub interface_overhead_ns: u64,
    pub write_log_capacity_entries: usize,
    pub data_cache_frames: usize,
    pub page_size_bytes: u64,
    pub compaction_mode: CompactionMode,
    pub logic_cost_mode: CostMode,
    /// Per-category overrides; unset entries take the mode's default profile.
    pub cost_mean_ns: [Option<f64>; 5],
    pub cost_stddev_ns: [Option<f64>; 5],
    pub payload_capture: bool,
    pub nand_channels: u32,
    pub nand_ways: u32,
    pub nand_pages_per_way: u64,
    pub nand_mode: NandMode,
    pub nand_read_ns: u64,
    pub nand_program_ns: u64,
    pub nand_empirical_path: Option<PathBuf>,
    /// Base distribution under spikes.
    pub spike_base: NandMode,
    pub spike_magnitude_ns: u64,
    pub spike_probability: f64,
    pub nand_overhead_per_depth_ns: u64,
    pub histogram_bin_ns: u64,
    pub gen: GenSettings,
    /// Directory relative paths resolve against; not a config key.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "unnamed".into(),
            trace: None,
            trace_format: TraceFormat::Text,
            output_dir: PathBuf::from("out"),
            seed: 1,
            host: HostConfig::default(),
            cxl_base: 1 << 30,
            cxl_limit: 3 << 30,
            dram_regions: vec![(0, 1 << 30)],
            interface_overhead_ns: InterfaceModel::default().interface_overhead_ns,
            write_log_capacity_entries: 4096,
            data_cache_frames: 1024,
            page_size_bytes: 16 * 1024,
            compaction_mode: CompactionMode::Sequential,
            logic_cost_mode: CostMode::Constant,
            cost_mean_ns: [None; 5],
            cost_stddev_ns: [None; 5],
            payload_capture: false,
            nand_channels: 4,
            nand_ways: 8,
            nand_pages_per_way: 4096,
            nand_mode: NandMode::Constant,
            nand_read_ns: 99_720,
            nand_program_ns: 500_000,
            nand_empirical_path: None,
            spike_base: NandMode::Constant,
            spike_magnitude_ns: 0,
            spike_probability: 0.0,
            nand_overhead_per_depth_ns: 0,
            histogram_bin_ns: 1_000,
            gen: GenSettings::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Parses `123`, `1_000`, `0x40`, `64K`, `2G`.
pub fn parse_int(s: &str) -> std::result::Result<u64, String> {
    let t: String = s.trim().chars().filter(|&c| c != '_').collect();
    let (digits, shift) = match t.chars().last() {
        Some('K' | 'k') => (&t[..t.len() - 1], 10),
        Some('M' | 'm') => (&t[..t.len() - 1], 20),
        Some('G' | 'g') => (&t[..t.len() - 1], 30),
        _ => (&t[..], 0),
    };
    let v = match digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        Some(hex) if shift == 0 => u64::from_str_radix(hex, 16),
        Some(_) => return Err(format!("`{s}`: size suffixes need a decimal number")),
        None => digits.parse::<u64>(),
    }
    .map_err(|e| format!("`{s}`: {e}"))?;
    v.checked_mul(1u64 << shift).ok_or_else(|| format!("`{s}` overflows 64 bits"))
}

fn parse_float(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected on/off, got `{other}`")),
    }
}

/// `uniform` or `zipf:<theta>`.
pub fn parse_distribution(s: &str) -> std::result::Result<AddressDistribution, String> {
    match s.trim() {
        "uniform" => Ok(AddressDistribution::Uniform),
        other => {
            let theta = other
                .strip_prefix("zipf:")
                .or_else(|| other.strip_prefix("zipfian:"))
                .ok_or_else(|| format!("expected `uniform` or `zipf:<theta>`, got `{other}`"))?;
            let t = parse_float(theta)?;
            if t < 0.0 {
                return Err("zipf exponent must be non-negative".into());
            }
            Ok(AddressDistribution::Zipf(t))
        }
    }
}

fn distribution_str(d: AddressDistribution) -> String {
    match d {
        AddressDistribution::Uniform => "uniform".into(),
        AddressDistribution::Zipf(t) => format!("zipf:{t}"),
    }
}

/// `none` or comma-separated `base-limit` pairs.
fn parse_regions(s: &str) -> std::result::Result<Vec<(u64, u64)>, String> {
    if s.trim() == "none" || s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|r| {
            let (b, l) = r.split_once('-').ok_or_else(|| format!("region `{}` is not `base-limit`", r.trim()))?;
            Ok((parse_int(b)?, parse_int(l)?))
        })
        .collect()
}

fn category_from(name: &str) -> Option<LogicCategory> {
    LogicCategory::ALL.into_iter().find(|c| c.as_str() == name)
}

impl ExperimentConfig {
    /// Parses config text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ExperimentError::Syntax {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ExperimentError::Io { path: path.display().to_string(), source })?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Applies `key=value` overrides in order, then re-validates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ExperimentError::Syntax { line: 0, msg: format!("override `{o}` is not key=value") })?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    /// Sets one key without validating cross-field constraints.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let err = |m: String| ExperimentError::value(key, m);
        let int = || parse_int(value).map_err(err);
        let usize_ = || int().and_then(|v| usize::try_from(v).map_err(|e| err(e.to_string())));
        let u32_ = || int().and_then(|v| u32::try_from(v).map_err(|e| err(e.to_string())));
        let float = || parse_float(value).map_err(err);
        match key {
            "experiment" => {
                if value.is_empty() || value.contains(char::is_whitespace) {
                    return Err(err("experiment name must be one non-empty word".into()));
                }
                self.experiment = value.into();
            }
            "trace" => {
                self.trace = match value {
                    "" | "none" => None,
                    "generate" => Some(TraceSource::Generate),
                    p => Some(TraceSource::File(PathBuf::from(p))),
                }
            }
            "trace_format" => {
                self.trace_format = match value {
                    "text" => TraceFormat::Text,
                    other => return Err(err(format!("unsupported trace format `{other}`"))),
                }
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "seed" => self.seed = int()?,
            "core_count" => self.host.core_count = usize_()?,
            "threads_per_core" => self.host.threads_per_core = usize_()?,
            "frequency_hz" => self.host.frequency_hz = int()?,
            "instruction_cost_cycles" => self.host.instruction_cost_cycles = int()?,
            "llc_bytes" => self.host.llc_bytes = int()?,
            "llc_ways" => self.host.llc_ways = usize_()?,
            "llc_hit_cycles" => self.host.llc_hit_cycles = int()?,
            "dram_access_cycles" => self.host.dram_access_cycles = int()?,
            "switch_threshold_ns" => self.host.switch_threshold_ns = int()?,
            "switch_penalty_cycles" => self.host.switch_penalty_cycles = int()?,
            "access_budget" => {
                self.host.access_budget = match value {
                    "none" | "unlimited" => None,
                    _ => Some(int()?),
                }
            }
            "cxl_base" => self.cxl_base = int()?,
            "cxl_limit" => self.cxl_limit = int()?,
            "dram_regions" => self.dram_regions = parse_regions(value).map_err(err)?,
            "interface_overhead_ns" => self.interface_overhead_ns = int()?,
            "write_log_capacity_entries" => self.write_log_capacity_entries = usize_()?,
            "data_cache_frames" => self.data_cache_frames = usize_()?,
            "page_size_bytes" => self.page_size_bytes = int()?,
            "compaction_mode" => {
                self.compaction_mode = match value {
                    "sequential" => CompactionMode::Sequential,
                    "parallel" => CompactionMode::Parallel,
                    other => return Err(err(format!("expected sequential or parallel, got `{other}`"))),
                }
            }
            "logic_cost_mode" => {
                self.logic_cost_mode = match value {
                    "constant" => CostMode::Constant,
                    "distribution" => CostMode::Distribution,
                    other => return Err(err(format!("expected constant or distribution, got `{other}`"))),
                }
            }
            "payload_capture" => self.payload_capture = parse_bool(value).map_err(err)?,
            "nand_channels" => self.nand_channels = u32_()?,
            "nand_ways" => self.nand_ways = u32_()?,
            "nand_pages_per_way" => self.nand_pages_per_way = int()?,
            "nand_mode" | "spike_base" => {
                let mode = match value {
                    "constant" => NandMode::Constant,
                    "empirical" => NandMode::Empirical,
                    "spike" if key == "nand_mode" => NandMode::Spike,
                    other => return Err(err(format!("unknown NAND mode `{other}`"))),
                };
                if key == "nand_mode" {
                    self.nand_mode = mode;
                } else {
                    self.spike_base = mode;
                }
            }
            "nand_read_ns" => self.nand_read_ns = int()?,
            "nand_program_ns" => self.nand_program_ns = int()?,
            "nand_empirical_path" => {
                self.nand_empirical_path = (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
            }
            "spike_magnitude_ns" => self.spike_magnitude_ns = int()?,
            "spike_probability" => self.spike_probability = float()?,
            "nand_overhead_per_depth_ns" => self.nand_overhead_per_depth_ns = int()?,
            "histogram_bin_ns" => self.histogram_bin_ns = int()?,
            "gen_count" => self.gen.count = int()?,
            "gen_read_ratio" => self.gen.read_ratio = float()?,
            "gen_distribution" => self.gen.distribution = parse_distribution(value).map_err(err)?,
            "gen_gap_min" => self.gen.gap_min = int()?,
            "gen_gap_max" => self.gen.gap_max = int()?,
            "gen_span_bytes" => self.gen.span_bytes = int()?,
            _ => {
                let cat = key
                    .strip_prefix("cost_")
                    .and_then(|rest| {
                        rest.strip_suffix("_stddev_ns")
                            .map(|c| (c, true))
                            .or_else(|| rest.strip_suffix("_ns").map(|c| (c, false)))
                    })
                    .and_then(|(c, sd)| category_from(c).map(|c| (c, sd)));
                let Some((cat, is_sd)) = cat else {
                    return Err(ExperimentError::UnknownKey(key.into()));
                };
                let v = float()?;
                if v < 0.0 {
                    return Err(err("cost parameters must be non-negative".into()));
                }
                let slot = if is_sd { &mut self.cost_stddev_ns } else { &mut self.cost_mean_ns };
                slot[cat as usize] = Some(v);
            }
        }
        Ok(())
    }

    /// Checks every range and cross-field constraint.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Invalid(m));
        self.host.validate()?;
        AddressMap::new(self.cxl_base, self.cxl_limit, self.dram_regions.clone())?;
        if !self.cxl_base.is_multiple_of(64) {
            return bad(format!("cxl_base {:#x} is not 64-byte aligned", self.cxl_base));
        }
        let geometry = self.geometry()?;
        let window = self.cxl_limit - self.cxl_base;
        if window > geometry.capacity_bytes() {
            return bad(format!(
                "cxl window of {window} bytes exceeds the device capacity of {} bytes",
                geometry.capacity_bytes()
            ));
        }
        if self.write_log_capacity_entries == 0 {
            return bad("write_log_capacity_entries must be positive".into());
        }
        if self.data_cache_frames == 0 {
            return bad("data_cache_frames must be positive".into());
        }
        if self.histogram_bin_ns == 0 {
            return bad("histogram_bin_ns must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.spike_probability) {
            return bad(format!("spike_probability {} is not within [0, 1]", self.spike_probability));
        }
        let needs_table = self.nand_mode == NandMode::Empirical
            || (self.nand_mode == NandMode::Spike && self.spike_base == NandMode::Empirical);
        if needs_table && self.nand_empirical_path.is_none() {
            return bad("empirical NAND mode needs nand_empirical_path".into());
        }
        if self.logic_cost_mode == CostMode::Constant && self.cost_stddev_ns.iter().flatten().any(|&sd| sd > 0.0) {
            return bad("cost_*_stddev_ns needs logic_cost_mode = distribution".into());
        }
        if self.trace == Some(TraceSource::Generate) {
            self.trace_spec().validate()?;
            if self.cxl_base.checked_add(self.gen.span_bytes).is_none_or(|end| end > self.cxl_limit) {
                return bad("gen_span_bytes reaches past cxl_limit".into());
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<NandGeometry> {
        Ok(NandGeometry::new(self.nand_channels, self.nand_ways, self.page_size_bytes, self.nand_pages_per_way)?)
    }

    pub fn address_map(&self) -> AddressMap {
        AddressMap { cxl_base: self.cxl_base, cxl_limit: self.cxl_limit, dram_regions: self.dram_regions.clone() }
    }

    /// Spec for `trace = generate`: streams match the host shape and addresses start at `cxl_base`.
    pub fn trace_spec(&self) -> TraceSpec {
        TraceSpec {
            cores: self.host.core_count.min(u16::MAX as usize) as u16,
            threads: self.host.threads_per_core.min(u16::MAX as usize) as u16,
            count: self.gen.count,
            read_ratio: self.gen.read_ratio,
            distribution: self.gen.distribution,
            gap_min: self.gen.gap_min,
            gap_max: self.gen.gap_max,
            base: self.cxl_base,
            span_bytes: self.gen.span_bytes,
            seed: self.seed,
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn base_model(&self, mode: NandMode) -> Result<BaseModel> {
        match mode {
            NandMode::Empirical => {
                let path = self.resolve(self.nand_empirical_path.as_deref().expect("checked in validate"));
                match load_empirical(&path, self.seed)?.model {
                    LatencyModel::Base(b) => Ok(b),
                    LatencyModel::Spike { .. } => unreachable!("loader returns a base model"),
                }
            }
            _ => Ok(BaseModel::Constant { read_ns: self.nand_read_ns, program_ns: self.nand_program_ns }),
        }
    }

    pub fn provider(&self) -> Result<LatencyProvider> {
        let model = match self.nand_mode {
            NandMode::Spike => {
                return Ok(LatencyProvider::spike(
                    self.base_model(self.spike_base)?,
                    self.spike_magnitude_ns,
                    self.spike_probability,
                    self.seed,
                )?)
            }
            m => LatencyModel::Base(self.base_model(m)?),
        };
        Ok(LatencyProvider { model, seed: self.seed })
    }

    /// The mode's default profile with per-category overrides applied.
    pub fn logic_costs(&self) -> LogicCostModel {
        let defaults = match self.logic_cost_mode {
            CostMode::Constant => LogicCostModel::static_baseline(),
            CostMode::Distribution => LogicCostModel::measured_profile(self.seed),
        };
        let mut m = LogicCostModel::new(self.logic_cost_mode, self.seed);
        for c in LogicCategory::ALL {
            let d = defaults.params(c);
            let mean_ns = self.cost_mean_ns[c as usize].unwrap_or(d.mean_ns);
            let stddev_ns = match self.logic_cost_mode {
                CostMode::Constant => 0.0,
                CostMode::Distribution => self.cost_stddev_ns[c as usize].unwrap_or(d.stddev_ns),
            };
            m.set(c, CostParams { mean_ns, stddev_ns });
        }
        m
    }

    pub fn firmware(&self) -> Result<Firmware> {
        let geometry = self.geometry()?;
        let nand = NandArray::new(geometry, self.provider()?, self.nand_overhead_per_depth_ns);
        let cfg = FirmwareConfig {
            geometry,
            base_address: self.cxl_base,
            write_log_capacity: self.write_log_capacity_entries,
            data_cache_frames: self.data_cache_frames,
            compaction_mode: self.compaction_mode,
            payload_capture: self.payload_capture,
        };
        Ok(Firmware::new(cfg, nand, self.logic_costs())?)
    }

    pub fn engine(&self, keep_events: bool) -> Result<Engine> {
        let transport = Transport::new(
            self.cxl_base,
            self.cxl_limit,
            InterfaceModel { interface_overhead_ns: self.interface_overhead_ns },
        );
        Ok(Engine::new(self.host.clone(), self.address_map(), transport, self.firmware()?, keep_events)?)
    }

    pub fn load_traces(&self) -> Result<TraceSet> {
        let (cores, threads) = (self.host.core_count, self.host.threads_per_core);
        match &self.trace {
            None => Ok(TraceSet::new(cores, threads)),
            Some(TraceSource::Generate) => {
                Ok(TraceSet::from_records(generate_trace(&self.trace_spec())?, cores, threads)?)
            }
            Some(TraceSource::File(p)) => Ok(load_trace(&self.resolve(p), self.trace_format, cores, threads)?),
        }
    }

    /// Canonical `key -> value` view of every setting, as recorded in reports.
    /// The output directory is left out so relocated runs compare equal.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("experiment", self.experiment.clone());
        put(
            "trace",
            match &self.trace {
                None => "none".into(),
                Some(TraceSource::Generate) => "generate".into(),
                Some(TraceSource::File(p)) => p.display().to_string(),
            },
        );
        put("trace_format", "text".into());
        put("seed", self.seed.to_string());
        let h = &self.host;
        put("core_count", h.core_count.to_string());
        put("threads_per_core", h.threads_per_core.to_string());
        put("frequency_hz", h.frequency_hz.to_string());
        put("instruction_cost_cycles", h.instruction_cost_cycles.to_string());
        put("llc_bytes", h.llc_bytes.to_string());
        put("llc_ways", h.llc_ways.to_string());
        put("llc_hit_cycles", h.llc_hit_cycles.to_string());
        put("dram_access_cycles", h.dram_access_cycles.to_string());
        put("switch_threshold_ns", h.switch_threshold_ns.to_string());
        put("switch_penalty_cycles", h.switch_penalty_cycles.to_string());
        put("access_budget", h.access_budget.map_or("none".into(), |b| b.to_string()));
        put("cxl_base", format!("{:#x}", self.cxl_base));
        put("cxl_limit", format!("{:#x}", self.cxl_limit));
        put(
            "dram_regions",
            if self.dram_regions.is_empty() {
                "none".into()
            } else {
                self.dram_regions.iter().map(|(b, l)| format!("{b:#x}-{l:#x}")).collect::<Vec<_>>().join(",")
            },
        );
        put("interface_overhead_ns", self.interface_overhead_ns.to_string());
        put("write_log_capacity_entries", self.write_log_capacity_entries.to_string());
        put("data_cache_frames", self.data_cache_frames.to_string());
        put("page_size_bytes", self.page_size_bytes.to_string());
        put("compaction_mode", self.compaction_mode.as_str().into());
        put(
            "logic_cost_mode",
            match self.logic_cost_mode {
                CostMode::Constant => "constant".into(),
                CostMode::Distribution => "distribution".into(),
            },
        );
        let costs = self.logic_costs();
        for c in LogicCategory::ALL {
            let p = costs.params(c);
            put(&format!("cost_{}_ns", c.as_str()), p.mean_ns.to_string());
            put(&format!("cost_{}_stddev_ns", c.as_str()), p.stddev_ns.to_string());
        }
        put("payload_capture", if self.payload_capture { "on" } else { "off" }.into());
        put("nand_channels", self.nand_channels.to_string());
        put("nand_ways", self.nand_ways.to_string());
        put("nand_pages_per_way", self.nand_pages_per_way.to_string());
        put("nand_mode", self.nand_mode.as_str().into());
        put("nand_read_ns", self.nand_read_ns.to_string());
        put("nand_program_ns", self.nand_program_ns.to_string());
        put(
            "nand_empirical_path",
            self.nand_empirical_path.as_ref().map_or("none".into(), |p| p.display().to_string()),
        );
        put("spike_base", self.spike_base.as_str().into());
        put("spike_magnitude_ns", self.spike_magnitude_ns.to_string());
        put("spike_probability", self.spike_probability.to_string());
        put("nand_overhead_per_depth_ns", self.nand_overhead_per_depth_ns.to_string());
        put("histogram_bin_ns", self.histogram_bin_ns.to_string());
        put("gen_count", self.gen.count.to_string());
        put("gen_read_ratio", self.gen.read_ratio.to_string());
        put("gen_distribution", distribution_str(self.gen.distribution));
        put("gen_gap_min", self.gen.gap_min.to_string());
        put("gen_gap_max", self.gen.gap_max.to_string());
        put("gen_span_bytes", self.gen.span_bytes.to_string());
        m
    }
}

/// Result of [`run_experiment`].
pub struct Experiment {
    pub report: RunReport,
    pub outcome: RunOutcome,
}

/// Loads traces, runs the engine and fills the report. Files are written
/// when `out_dir` is given; `events.csv` only with `emit_events`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>, emit_events: bool) -> Result<Experiment> {
    cfg.validate()?;
    let traces = cfg.load_traces()?;
    let outcome = cfg.engine(emit_events)?.run(&traces)?;
    let mut report = outcome.report.clone();
    report.experiment = cfg.experiment.clone();
    report.seed = cfg.seed;
    report.config = cfg.to_map();
    report.attach_tables(&outcome.metrics, cfg.histogram_bin_ns)?;
    if let Some(dir) = out_dir {
        report.write_files(dir, outcome.metrics.events())?;
    }
    Ok(Experiment { report, outcome })
}

/// Counts printed after generating a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceSummary {
    pub count: u64,
    pub reads: u64,
    pub read_ratio: f64,
}

impl TraceSummary {
    pub fn of(records: &[TraceRecord]) -> Self {
        let reads = records.iter().filter(|r| r.opcode == Opcode::Read).count() as u64;
        let count = records.len() as u64;
        Self { count, reads, read_ratio: if count == 0 { 0.0 } else { reads as f64 / count as f64 } }
    }
}

/// Generates a trace into `path`.
pub fn gen_trace_file(spec: &TraceSpec, path: &Path) -> Result<TraceSummary> {
    let records = generate_trace(spec)?;
    let io_err = |source| ExperimentError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = io::BufWriter::new(file);
    write_trace(&records, &mut w).map_err(io_err)?;
    io::Write::flush(&mut w).map_err(io_err)?;
    Ok(TraceSummary::of(&records))
}

/// One metric of a report comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDiff {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    /// `a / b`; 1 when both are zero, absent when only `b` is.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub metrics: Vec<MetricDiff>,
}

impl Comparison {
    pub fn get(&self, metric: &str) -> Option<&MetricDiff> {
        self.metrics.iter().find(|m| m.metric == metric)
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<32} {:>16} {:>16} {:>16} {:>10}\n", "metric", self.a, self.b, "delta", "ratio");
        for m in &self.metrics {
            let ratio = m.ratio.map_or("-".to_string(), |r| format!("{r:.4}"));
            let _ = writeln!(s, "{:<32} {:>16.3} {:>16.3} {:>16.3} {:>10}", m.metric, m.a, m.b, m.delta, ratio);
        }
        s
    }
}

fn diff(metric: String, a: f64, b: f64) -> MetricDiff {
    let ratio = if b != 0.0 {
        Some(a / b)
    } else if a == 0.0 {
        Some(1.0)
    } else {
        None
    };
    MetricDiff { metric, a, b, delta: a - b, ratio }
}

/// Per-metric deltas and ratios of `a` against `b`. Latency rows appear
/// for kinds that occur in either report.
pub fn compare_reports(a: &RunReport, b: &RunReport) -> Result<Comparison> {
    if a.schema_version != b.schema_version {
        return Err(ExperimentError::Compare(format!(
            "schema versions differ ({} vs {})",
            a.schema_version, b.schema_version
        )));
    }
    let mut rows = vec![
        diff("total_cycles".into(), a.total_cycles as f64, b.total_cycles as f64),
        diff("total_instructions".into(), a.total_instructions as f64, b.total_instructions as f64),
    ];
    if let (Some(x), Some(y)) = (a.cycles_per_instruction, b.cycles_per_instruction) {
        rows.push(diff("cycles_per_instruction".into(), x, y));
    }
    let counts = |r: &RunReport| -> BTreeMap<String, f64> {
        match serde_json::to_value(&r.counts) {
            Ok(serde_json::Value::Object(m)) => m.into_iter().filter_map(|(k, v)| Some((k, v.as_f64()?))).collect(),
            _ => BTreeMap::new(),
        }
    };
    let (ca, cb) = (counts(a), counts(b));
    for (k, va) in &ca {
        rows.push(diff(format!("count.{k}"), *va, cb.get(k).copied().unwrap_or(0.0)));
    }
    for kind in EventKind::ALL {
        let name = kind.as_str();
        let (sa, sb) = (a.latency.get(name), b.latency.get(name));
        let present = |s: Option<&crate::metrics::LatencySummary>| s.is_some_and(|s| s.count > 0);
        if !present(sa) && !present(sb) {
            continue;
        }
        let (sa, sb) = (sa.cloned().unwrap_or_default(), sb.cloned().unwrap_or_default());
        rows.push(diff(format!("latency.{name}.mean_ns"), sa.mean, sb.mean));
        rows.push(diff(format!("latency.{name}.stddev_ns"), sa.stddev, sb.stddev));
        rows.push(diff(format!("latency.{name}.p50_ns"), sa.p50 as f64, sb.p50 as f64));
        rows.push(diff(format!("latency.{name}.p99_ns"), sa.p99 as f64, sb.p99 as f64));
    }
    Ok(Comparison { a: a.experiment.clone(), b: b.experiment.clone(), metrics: rows })
}

/// Reads a `report.json`, or the one inside a run directory.
pub fn load_report(path: &Path) -> Result<RunReport> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file)
        .map_err(|source| ExperimentError::Io { path: file.display().to_string(), source })?;
    RunReport::from_json(&text).map_err(|e| ExperimentError::Compare(format!("{}: {e}", file.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_forms() {
        assert_eq!(parse_int("1_000").unwrap(), 1000);
        assert_eq!(parse_int("0x40").unwrap(), 64);
        assert_eq!(parse_int("64M").unwrap(), 64 << 20);
        assert_eq!(parse_int("2G").unwrap(), 2 << 30);
        assert!(parse_int("-1").is_err());
        assert!(parse_int("0x10K").is_err());
        assert!(parse_int("99999999999G").is_err());
    }

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text: String = cfg.to_map().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back.to_map(), cfg.to_map());
    }

    #[test]
    fn unknown_and_bad_values_rejected() {
        assert!(matches!(ExperimentConfig::parse("colour = red"), Err(ExperimentError::UnknownKey(_))));
        assert!(matches!(ExperimentConfig::parse("cost_bogus_ns = 3"), Err(ExperimentError::UnknownKey(_))));
        assert!(matches!(ExperimentConfig::parse("core_count 3"), Err(ExperimentError::Syntax { line: 1, .. })));
        for bad in [
            "core_count = 0",
            "frequency_hz = 0",
            "llc_ways = 0",
            "llc_bytes = 1000",
            "cxl_limit = 0x100",
            "dram_regions = 0-0x50000000",
            "write_log_capacity_entries = 0",
            "data_cache_frames = 0",
            "page_size_bytes = 100",
            "nand_channels = 0",
            "histogram_bin_ns = 0",
            "spike_probability = 1.5",
            "nand_mode = empirical",
            "compaction_mode = sideways",
            "payload_capture = maybe",
            "cost_cache_check_ns = -4",
            "cost_cache_check_stddev_ns = 4",
            "cxl_base = 0x40000001",
            "nand_pages_per_way = 16",
            "trace = generate\ngen_read_ratio = 2",
        ] {
            assert!(ExperimentConfig::parse(bad).is_err(), "{bad} should be rejected");
        }
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&["compaction_mode=parallel", "seed = 9", "seed=10"]).unwrap();
        assert_eq!(cfg.compaction_mode, CompactionMode::Parallel);
        assert_eq!(cfg.seed, 10);
        assert!(cfg.apply_overrides(&["seed"]).is_err());
        assert!(cfg.apply_overrides(&["nope=1"]).is_err());
    }

    #[test]
    fn cost_defaults_follow_mode() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.logic_costs().params(LogicCategory::LogInsert), CostParams::fixed(640.0));
        cfg.set("logic_cost_mode", "distribution").unwrap();
        cfg.set("cost_index_check_stddev_ns", "0").unwrap();
        let m = cfg.logic_costs();
        assert_eq!(m.params(LogicCategory::IndexCheck), CostParams::fixed(170.86));
        assert_eq!(m.params(LogicCategory::CacheCheck).stddev_ns, 29.44);
    }

    #[test]
    fn compare_identical_and_schema_mismatch() {
        let cfg = ExperimentConfig::parse("trace = generate\ngen_count = 200\ngen_span_bytes = 1M").unwrap();
        let r = run_experiment(&cfg, None, false).unwrap().report;
        let c = compare_reports(&r, &r).unwrap();
        assert!(c.metrics.iter().all(|m| m.ratio == Some(1.0) && m.delta == 0.0));
        let mut other = r.clone();
        other.schema_version += 1;
        assert!(matches!(compare_reports(&r, &other), Err(ExperimentError::Compare(_))));
    }
}
