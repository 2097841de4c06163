//! Event recording and run reports.
//!
//! Aggregates are updated as events arrive; the raw event stream is kept
//! only when requested since long runs produce millions of records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("histogram bin width must be positive")]
    ZeroBinWidth,
    #[error("failed to write {path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Where a piece of latency went.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    LogInsert,
    CacheCheck,
    CacheInsert,
    IndexCheck,
    IndexUpdate,
    NandWait,
    /// Array time sampled from the latency provider.
    NandMedia,
    /// Queue-depth dependent controller/firmware overhead.
    NandOverhead,
    Other,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::LogInsert,
        Category::CacheCheck,
        Category::CacheInsert,
        Category::IndexCheck,
        Category::IndexUpdate,
        Category::NandWait,
        Category::NandMedia,
        Category::NandOverhead,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::LogInsert => "log_insert",
            Category::CacheCheck => "cache_check",
            Category::CacheInsert => "cache_insert",
            Category::IndexCheck => "index_check",
            Category::IndexUpdate => "index_update",
            Category::NandWait => "nand_wait",
            Category::NandMedia => "nand_media",
            Category::NandOverhead => "nand_overhead",
            Category::Other => "other",
        }
    }
}

impl From<crate::nand::LogicCategory> for Category {
    fn from(c: crate::nand::LogicCategory) -> Self {
        use crate::nand::LogicCategory as L;
        match c {
            L::LogInsert => Category::LogInsert,
            L::CacheCheck => Category::CacheCheck,
            L::CacheInsert => Category::CacheInsert,
            L::IndexCheck => Category::IndexCheck,
            L::IndexUpdate => Category::IndexUpdate,
        }
    }
}

/// Nanoseconds per [`Category`]; the total is the sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown([u64; 9]);

impl Breakdown {
    pub fn single(cat: Category, ns: u64) -> Self {
        let mut b = Self::default();
        b.add(cat, ns);
        b
    }

    pub fn add(&mut self, cat: Category, ns: u64) {
        self.0[cat as usize] += ns;
    }

    pub fn get(&self, cat: Category) -> u64 {
        self.0[cat as usize]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn merge(&mut self, other: &Breakdown) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += b;
        }
    }

    pub fn minus(&self, other: &Breakdown) -> Breakdown {
        let mut out = *self;
        for (a, b) in out.0.iter_mut().zip(other.0) {
            *a -= b;
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (Category, u64)> + '_ {
        Category::ALL.into_iter().map(|c| (c, self.get(c)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LogInsert,
    /// Read served from the write log.
    LogHit,
    CacheHit,
    CacheMiss,
    NandRead,
    NandProgram,
    Eviction,
    Compaction,
    ContextSwitch,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::LogInsert,
        EventKind::LogHit,
        EventKind::CacheHit,
        EventKind::CacheMiss,
        EventKind::NandRead,
        EventKind::NandProgram,
        EventKind::Eviction,
        EventKind::Compaction,
        EventKind::ContextSwitch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::LogInsert => "log_insert",
            EventKind::LogHit => "log_hit",
            EventKind::CacheHit => "cache_hit",
            EventKind::CacheMiss => "cache_miss",
            EventKind::NandRead => "nand_read",
            EventKind::NandProgram => "nand_program",
            EventKind::Eviction => "eviction",
            EventKind::Compaction => "compaction",
            EventKind::ContextSwitch => "context_switch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub ordinal: u64,
    pub kind: EventKind,
    pub latency_ns: u64,
    pub breakdown: Breakdown,
    pub core: u16,
    pub thread: u16,
    /// Host cycle of the issuing core when the access was dispatched.
    pub sim_time: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct KindAggregate {
    count: u64,
    sum: u128,
    sum_sq: u128,
    min: u64,
    max: u64,
    latencies: Vec<u64>,
    categories: [u128; 9],
}

impl KindAggregate {
    fn push(&mut self, latency: u64, breakdown: &Breakdown) {
        if self.count == 0 {
            self.min = latency;
            self.max = latency;
        } else {
            self.min = self.min.min(latency);
            self.max = self.max.max(latency);
        }
        self.count += 1;
        self.sum += latency as u128;
        self.sum_sq += latency as u128 * latency as u128;
        self.latencies.push(latency);
        let attributed = breakdown.total();
        for (c, ns) in breakdown.iter() {
            self.categories[c as usize] += ns as u128;
        }
        // events without a full breakdown park the remainder under Other
        self.categories[Category::Other as usize] += latency.saturating_sub(attributed) as u128;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: u64,
    pub mean: f64,
    pub stddev: f64,
    pub p50: u64,
    pub p99: u64,
    pub min: u64,
    pub max: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistBin {
    pub lower_ns: u64,
    pub upper_ns: u64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub latency_ns: u64,
    pub fraction: f64,
}

/// Nearest-rank percentile over a sorted slice.
pub fn nearest_rank(sorted: &[u64], pct: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    kinds: [KindAggregate; 9],
    events: Option<Vec<EventRecord>>,
    next_ordinal: u64,
}

impl Default for Metrics {
    fn default() -> Self {
        Self::new(false)
    }
}

impl Metrics {
    pub fn new(keep_events: bool) -> Self {
        Self { kinds: Default::default(), events: keep_events.then(Vec::new), next_ordinal: 0 }
    }

    /// Re-aggregates a saved event stream.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a EventRecord>, keep_events: bool) -> Self {
        let mut m = Self::new(keep_events);
        for e in events {
            m.record(e.kind, e.latency_ns, e.breakdown, e.core, e.thread, e.sim_time);
        }
        m
    }

    pub fn record(
        &mut self,
        kind: EventKind,
        latency_ns: u64,
        breakdown: Breakdown,
        core: u16,
        thread: u16,
        sim_time: u64,
    ) -> u64 {
        let ordinal = self.next_ordinal;
        self.next_ordinal += 1;
        self.kinds[kind as usize].push(latency_ns, &breakdown);
        if let Some(events) = &mut self.events {
            events.push(EventRecord { ordinal, kind, latency_ns, breakdown, core, thread, sim_time });
        }
        ordinal
    }

    pub fn events(&self) -> Option<&[EventRecord]> {
        self.events.as_deref()
    }

    pub fn total_events(&self) -> u64 {
        self.next_ordinal
    }

    pub fn count(&self, kind: EventKind) -> u64 {
        self.kinds[kind as usize].count
    }

    /// Latencies of `kind` in record order.
    pub fn latencies(&self, kind: EventKind) -> &[u64] {
        &self.kinds[kind as usize].latencies
    }

    pub fn summary(&self, kind: EventKind) -> LatencySummary {
        let a = &self.kinds[kind as usize];
        if a.count == 0 {
            return LatencySummary { count: 0, mean: 0.0, stddev: 0.0, p50: 0, p99: 0, min: 0, max: 0 };
        }
        let n = a.count as u128;
        // n^2 * variance, exact in integers
        let scaled_var = n * a.sum_sq - a.sum * a.sum;
        let mut sorted = a.latencies.clone();
        sorted.sort_unstable();
        LatencySummary {
            count: a.count,
            mean: a.sum as f64 / a.count as f64,
            stddev: (scaled_var as f64).sqrt() / a.count as f64,
            p50: nearest_rank(&sorted, 50.0),
            p99: nearest_rank(&sorted, 99.0),
            min: a.min,
            max: a.max,
        }
    }

    /// Fixed-width bins anchored at the minimum; only occupied bins are listed.
    pub fn histogram(&self, kind: EventKind, bin_width_ns: u64) -> Result<Vec<HistBin>, MetricsError> {
        if bin_width_ns == 0 {
            return Err(MetricsError::ZeroBinWidth);
        }
        let a = &self.kinds[kind as usize];
        let mut bins: BTreeMap<u64, u64> = BTreeMap::new();
        for &l in &a.latencies {
            *bins.entry((l - a.min) / bin_width_ns).or_default() += 1;
        }
        Ok(bins
            .into_iter()
            .map(|(i, count)| {
                let lower_ns = a.min + i * bin_width_ns;
                HistBin { lower_ns, upper_ns: lower_ns + bin_width_ns, count }
            })
            .collect())
    }

    /// Empirical CDF: one point per distinct latency.
    pub fn cdf(&self, kind: EventKind) -> Vec<CdfPoint> {
        let a = &self.kinds[kind as usize];
        let mut sorted = a.latencies.clone();
        sorted.sort_unstable();
        let n = sorted.len() as f64;
        let mut out: Vec<CdfPoint> = Vec::new();
        for (i, &v) in sorted.iter().enumerate() {
            let fraction = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.latency_ns == v => last.fraction = fraction,
                _ => out.push(CdfPoint { latency_ns: v, fraction }),
            }
        }
        out
    }

    /// Mean nanoseconds per category; sums to the kind's mean latency.
    pub fn breakdown(&self, kind: EventKind) -> BTreeMap<Category, f64> {
        let a = &self.kinds[kind as usize];
        if a.count == 0 {
            return BTreeMap::new();
        }
        Category::ALL
            .into_iter()
            .filter(|&c| a.categories[c as usize] > 0)
            .map(|c| (c, a.categories[c as usize] as f64 / a.count as f64))
            .collect()
    }
}

/// Per-core outcome of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreReport {
    pub core: u16,
    pub cycles: u64,
    pub instructions: u64,
    pub memory_accesses: u64,
    pub context_switches: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub memory_accesses: u64,
    pub llc_hits: u64,
    pub llc_misses: u64,
    pub host_dram_accesses: u64,
    pub cxl_accesses: u64,
    pub log_inserts: u64,
    pub log_hits: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub evictions: u64,
    pub dirty_evictions: u64,
    pub compactions: u64,
    pub nand_reads: u64,
    pub nand_programs: u64,
    pub context_switches: u64,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub experiment: String,
    pub seed: u64,
    /// Resolved configuration, one entry per key.
    pub config: BTreeMap<String, String>,
    pub cores: Vec<CoreReport>,
    pub total_cycles: u64,
    pub total_instructions: u64,
    /// Summed core cycles over trace-listed instructions; `null` when no instruction ran.
    pub cycles_per_instruction: Option<f64>,
    pub counts: Counts,
    pub latency: BTreeMap<String, LatencySummary>,
    pub breakdown: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(skip)]
    pub histograms: BTreeMap<String, Vec<HistBin>>,
    #[serde(skip)]
    pub cdfs: BTreeMap<String, Vec<CdfPoint>>,
}

impl RunReport {
    /// Fills latency summaries, breakdowns, histograms and CDFs for every kind.
    pub fn attach_tables(&mut self, metrics: &Metrics, bin_width_ns: u64) -> Result<(), MetricsError> {
        for kind in EventKind::ALL {
            let name = kind.as_str().to_string();
            self.latency.insert(name.clone(), metrics.summary(kind));
            self.breakdown.insert(
                name.clone(),
                metrics.breakdown(kind).into_iter().map(|(c, v)| (c.as_str().to_string(), v)).collect(),
            );
            self.histograms.insert(name.clone(), metrics.histogram(kind, bin_width_ns)?);
            self.cdfs.insert(name, metrics.cdf(kind));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Writes `report.json`, `hist_<kind>.csv`, `cdf_<kind>.csv` and, when
    /// events were kept, `events.csv` into `dir`.
    pub fn write_files(&self, dir: &Path, events: Option<&[EventRecord]>) -> Result<(), MetricsError> {
        let write = |name: &str, body: &str| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|source| MetricsError::Io { path: path.display().to_string(), source })
        };
        std::fs::create_dir_all(dir).map_err(|source| MetricsError::Io { path: dir.display().to_string(), source })?;
        write("report.json", &self.to_json())?;
        for (kind, bins) in &self.histograms {
            let mut body = String::from("lower_ns,upper_ns,count\n");
            for b in bins {
                let _ = writeln!(body, "{},{},{}", b.lower_ns, b.upper_ns, b.count);
            }
            write(&format!("hist_{kind}.csv"), &body)?;
        }
        for (kind, points) in &self.cdfs {
            let mut body = String::from("latency_ns,fraction\n");
            for p in points {
                let _ = writeln!(body, "{},{}", p.latency_ns, p.fraction);
            }
            write(&format!("cdf_{kind}.csv"), &body)?;
        }
        if let Some(events) = events {
            write("events.csv", &events_csv(events))?;
        }
        Ok(())
    }
}

/// `ordinal,kind,latency_ns,core,thread,sim_time,<category...>`
pub fn events_csv(events: &[EventRecord]) -> String {
    let mut body = String::from("ordinal,kind,latency_ns,core,thread,sim_time");
    for c in Category::ALL {
        body.push(',');
        body.push_str(c.as_str());
    }
    body.push('\n');
    for e in events {
        let _ =
            write!(body, "{},{},{},{},{},{}", e.ordinal, e.kind.as_str(), e.latency_ns, e.core, e.thread, e.sim_time);
        for (_, ns) in e.breakdown.iter() {
            let _ = write!(body, ",{ns}");
        }
        body.push('\n');
    }
    body
}

/// Parses the output of [`events_csv`].
pub fn parse_events_csv(text: &str) -> Result<Vec<EventRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 + Category::ALL.len() {
            return Err(format!("line {}: expected {} fields", i + 1, 6 + Category::ALL.len()));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| format!("line {}: {e}", i + 1));
        let kind = EventKind::parse(f[1]).ok_or_else(|| format!("line {}: unknown kind {}", i + 1, f[1]))?;
        let mut breakdown = Breakdown::default();
        for (c, s) in Category::ALL.into_iter().zip(&f[6..]) {
            breakdown.add(c, num(s)?);
        }
        out.push(EventRecord {
            ordinal: num(f[0])?,
            kind,
            latency_ns: num(f[2])?,
            core: num(f[3])? as u16,
            thread: num(f[4])? as u16,
            sim_time: num(f[5])?,
            breakdown,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(m: &mut Metrics, kind: EventKind, ns: u64) {
        m.record(kind, ns, Breakdown::single(Category::CacheCheck, ns), 0, 0, 0);
    }

    #[test]
    fn constant_hits_have_zero_spread() {
        let mut m = Metrics::new(false);
        for _ in 0..3 {
            rec(&mut m, EventKind::CacheHit, 712);
        }
        let s = m.summary(EventKind::CacheHit);
        assert_eq!(s.mean, 712.0);
        assert_eq!(s.stddev, 0.0);
        assert_eq!(m.histogram(EventKind::CacheHit, 10).unwrap().len(), 1);
    }

    #[test]
    fn mean_of_two() {
        let mut m = Metrics::new(false);
        rec(&mut m, EventKind::NandRead, 100);
        rec(&mut m, EventKind::NandRead, 200);
        let s = m.summary(EventKind::NandRead);
        assert_eq!(s.mean, 150.0);
        assert_eq!(s.stddev, 50.0);
        assert_eq!((s.p50, s.p99, s.min, s.max), (100, 200, 100, 200));
        let h = m.histogram(EventKind::NandRead, 10).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h.iter().map(|b| b.count).sum::<u64>(), 2);
    }

    #[test]
    fn empty_tables() {
        let m = Metrics::new(false);
        assert!(m.histogram(EventKind::CacheMiss, 1).unwrap().is_empty());
        assert!(m.cdf(EventKind::CacheMiss).is_empty());
        assert!(m.breakdown(EventKind::CacheMiss).is_empty());
        assert!(matches!(m.histogram(EventKind::CacheMiss, 0), Err(MetricsError::ZeroBinWidth)));
    }

    #[test]
    fn single_event_cdf_is_a_step() {
        let mut m = Metrics::new(false);
        rec(&mut m, EventKind::CacheMiss, 5);
        assert_eq!(m.cdf(EventKind::CacheMiss), vec![CdfPoint { latency_ns: 5, fraction: 1.0 }]);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(nearest_rank(&v, 50.0), 50);
        assert_eq!(nearest_rank(&v, 99.0), 99);
        assert_eq!(nearest_rank(&[7], 99.0), 7);
    }

    #[test]
    fn breakdown_sums_to_mean() {
        let mut m = Metrics::new(false);
        let mut b = Breakdown::single(Category::NandMedia, 60);
        b.add(Category::NandOverhead, 40);
        m.record(EventKind::NandRead, 100, b, 0, 0, 0);
        m.record(EventKind::NandRead, 300, Breakdown::single(Category::NandMedia, 300), 0, 0, 0);
        let bd = m.breakdown(EventKind::NandRead);
        assert_eq!(bd[&Category::NandMedia], 180.0);
        assert_eq!(bd[&Category::NandOverhead], 20.0);
        assert_eq!(bd.values().sum::<f64>(), m.summary(EventKind::NandRead).mean);
    }

    #[test]
    fn unattributed_latency_lands_in_other() {
        let mut m = Metrics::new(false);
        m.record(EventKind::ContextSwitch, 5_000, Breakdown::default(), 0, 0, 0);
        assert_eq!(m.breakdown(EventKind::ContextSwitch)[&Category::Other], 5_000.0);
    }

    #[test]
    fn replay_matches_live_aggregation() {
        let mut live = Metrics::new(true);
        for i in 0..500u64 {
            let kind = EventKind::ALL[(i % 9) as usize];
            let mut b = Breakdown::single(Category::NandMedia, i * 3);
            b.add(Category::IndexCheck, i % 7);
            live.record(kind, i * 3 + i % 7, b, (i % 4) as u16, (i % 2) as u16, i * 10);
        }
        let csv = events_csv(live.events().unwrap());
        let parsed = parse_events_csv(&csv).unwrap();
        let replayed = Metrics::replay(&parsed, true);
        assert_eq!(replayed, live);
    }
}
