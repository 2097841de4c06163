//! Text memory traces.
//!
//! One record per line: `core thread op hex_address gap_instructions`, where
//! `op` is `R` or `W` and `gap_instructions` counts the non-memory
//! instructions executed before the access. Blank lines and `#` comments
//! are ignored.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Opcode;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("trace line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace line {line}: {msg}")]
    Validation { line: usize, msg: String },
    #[error("invalid trace spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub core: u16,
    pub thread: u16,
    pub opcode: Opcode,
    pub address: u64,
    pub gap_instructions: u64,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        let op = match self.opcode {
            Opcode::Read => 'R',
            Opcode::Write => 'W',
        };
        format!("{} {} {} {:#x} {}", self.core, self.thread, op, self.address, self.gap_instructions)
    }
}

/// Per-(core, thread) request streams in trace order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSet {
    streams: Vec<Vec<Vec<TraceRecord>>>,
    total: usize,
}

impl TraceSet {
    pub fn new(cores: usize, threads: usize) -> Self {
        Self { streams: vec![vec![Vec::new(); threads]; cores], total: 0 }
    }

    /// Builds a set from records, checking ids against the configured shape.
    pub fn from_records(
        records: impl IntoIterator<Item = TraceRecord>,
        cores: usize,
        threads: usize,
    ) -> Result<Self, TraceError> {
        let mut set = Self::new(cores, threads);
        for (i, r) in records.into_iter().enumerate() {
            set.push(r).map_err(|msg| TraceError::Validation { line: i + 1, msg })?;
        }
        Ok(set)
    }

    fn push(&mut self, r: TraceRecord) -> Result<(), String> {
        let cores = self.streams.len();
        let threads = self.streams.first().map_or(0, Vec::len);
        if r.core as usize >= cores {
            return Err(format!("core {} out of range (core_count = {cores})", r.core));
        }
        if r.thread as usize >= threads {
            return Err(format!("thread {} out of range (threads_per_core = {threads})", r.thread));
        }
        self.streams[r.core as usize][r.thread as usize].push(r);
        self.total += 1;
        Ok(())
    }

    pub fn cores(&self) -> usize {
        self.streams.len()
    }

    pub fn threads_per_core(&self) -> usize {
        self.streams.first().map_or(0, Vec::len)
    }

    pub fn stream(&self, core: usize, thread: usize) -> &[TraceRecord] {
        &self.streams[core][thread]
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn core_count(&self, core: usize) -> usize {
        self.streams[core].iter().map(Vec::len).sum()
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<TraceRecord>, TraceError> {
    let body = line.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Ok(None);
    }
    let err = |msg: String| TraceError::Parse { line: lineno, msg };
    let fields: Vec<&str> = body.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(err(format!("expected 5 fields, found {}", fields.len())));
    }
    let core = fields[0].parse::<u16>().map_err(|_| err(format!("bad core id {:?}", fields[0])))?;
    let thread = fields[1].parse::<u16>().map_err(|_| err(format!("bad thread id {:?}", fields[1])))?;
    let opcode = match fields[2] {
        "R" | "r" => Opcode::Read,
        "W" | "w" => Opcode::Write,
        other => return Err(err(format!("bad op {other:?}, expected R or W"))),
    };
    let hex = fields[3].trim_start_matches("0x").trim_start_matches("0X");
    let address = u64::from_str_radix(hex, 16).map_err(|_| err(format!("bad address {:?}", fields[3])))?;
    let gap_instructions = fields[4].parse::<u64>().map_err(|_| err(format!("bad gap {:?}", fields[4])))?;
    Ok(Some(TraceRecord { core, thread, opcode, address, gap_instructions }))
}

pub fn parse_trace(text: &str, cores: usize, threads: usize) -> Result<TraceSet, TraceError> {
    let mut set = TraceSet::new(cores, threads);
    for (i, line) in text.lines().enumerate() {
        if let Some(r) = parse_line(line, i + 1)? {
            set.push(r).map_err(|msg| TraceError::Validation { line: i + 1, msg })?;
        }
    }
    Ok(set)
}

pub fn load_trace(path: &Path, format: TraceFormat, cores: usize, threads: usize) -> Result<TraceSet, TraceError> {
    match format {
        TraceFormat::Text => {
            let text = std::fs::read_to_string(path)
                .map_err(|source| TraceError::Io { path: path.display().to_string(), source })?;
            parse_trace(&text, cores, threads)
        }
    }
}

pub fn write_trace(records: &[TraceRecord], mut out: impl Write) -> io::Result<()> {
    let mut buf = String::with_capacity(records.len() * 32);
    for r in records {
        let _ = writeln!(buf, "{}", r.to_line());
    }
    out.write_all(buf.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AddressDistribution {
    Uniform,
    /// Zipf over cachelines with exponent θ; θ = 0 is uniform.
    Zipf(f64),
}

/// Synthetic trace parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub cores: u16,
    pub threads: u16,
    pub count: u64,
    pub read_ratio: f64,
    pub distribution: AddressDistribution,
    /// Gap instructions are drawn uniformly from `gap_min..=gap_max`.
    pub gap_min: u64,
    pub gap_max: u64,
    pub base: u64,
    pub span_bytes: u64,
    pub seed: u64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        Self {
            cores: 1,
            threads: 1,
            count: 1000,
            read_ratio: 0.5,
            distribution: AddressDistribution::Uniform,
            gap_min: 0,
            gap_max: 10,
            base: 1 << 30,
            span_bytes: 64 << 20,
            seed: 1,
        }
    }
}

impl TraceSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: &str| Err(TraceError::Spec(m.into()));
        if self.cores == 0 || self.threads == 0 {
            return bad("cores and threads must be positive");
        }
        if !(0.0..=1.0).contains(&self.read_ratio) {
            return bad("read_ratio must be within [0, 1]");
        }
        if self.gap_min > self.gap_max {
            return bad("gap_min exceeds gap_max");
        }
        if self.span_bytes < 64 {
            return bad("span must cover at least one cacheline");
        }
        if self.base.checked_add(self.span_bytes).is_none() {
            return bad("base + span overflows");
        }
        if let AddressDistribution::Zipf(theta) = self.distribution {
            if !(theta >= 0.0 && theta.is_finite()) {
                return bad("zipf exponent must be finite and non-negative");
            }
        }
        Ok(())
    }

    /// Records per (core, thread), in stream order `core * threads + thread`.
    pub fn per_stream_counts(&self) -> Vec<u64> {
        let streams = self.cores as u64 * self.threads as u64;
        (0..streams).map(|s| self.count / streams + u64::from(s < self.count % streams)).collect()
    }
}

/// Deterministic synthetic trace. Record `i` belongs to stream
/// `i mod (cores * threads)`.
pub fn generate_trace(spec: &TraceSpec) -> Result<Vec<TraceRecord>, TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lines = spec.span_bytes / 64;
    let zipf = match spec.distribution {
        AddressDistribution::Zipf(theta) if theta > 0.0 => {
            Some(Zipf::new(lines as f64, theta).map_err(|e| TraceError::Spec(e.to_string()))?)
        }
        _ => None,
    };
    let streams = spec.cores as u64 * spec.threads as u64;
    let mut out = Vec::with_capacity(spec.count as usize);
    for i in 0..spec.count {
        let s = i % streams;
        let opcode = if rng.random::<f64>() < spec.read_ratio { Opcode::Read } else { Opcode::Write };
        let line = match &zipf {
            Some(z) => z.sample(&mut rng) as u64 - 1,
            None => rng.random_range(0..lines),
        };
        let gap_instructions = rng.random_range(spec.gap_min..=spec.gap_max);
        out.push(TraceRecord {
            core: (s / spec.threads as u64) as u16,
            thread: (s % spec.threads as u64) as u16,
            opcode,
            address: spec.base + line * 64,
            gap_instructions,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let set = parse_trace("0 0 W 0x10000040 5\n", 1, 1).unwrap();
        assert_eq!(set.len(), 1);
        let r = set.stream(0, 0)[0];
        assert_eq!((r.core, r.thread, r.opcode, r.address, r.gap_instructions), (0, 0, Opcode::Write, 0x1000_0040, 5));
    }

    #[test]
    fn empty_and_comments() {
        assert!(parse_trace("", 2, 2).unwrap().is_empty());
        assert!(parse_trace("# header\n\n   \n", 1, 1).unwrap().is_empty());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse_trace("0 0 R 0x40 1\n0 0 X 0x40 1\n", 1, 1).unwrap_err();
        assert!(matches!(e, TraceError::Parse { line: 2, .. }), "{e}");
        assert!(matches!(parse_trace("0 0 R zz 1", 1, 1), Err(TraceError::Parse { line: 1, .. })));
        assert!(matches!(parse_trace("0 0 R 0x40", 1, 1), Err(TraceError::Parse { line: 1, .. })));
        let e = parse_trace("\n3 0 R 0x40 1\n", 2, 1).unwrap_err();
        assert!(matches!(e, TraceError::Validation { line: 2, .. }), "{e}");
        assert!(matches!(parse_trace("0 4 R 0x40 1", 1, 3), Err(TraceError::Validation { .. })));
    }

    #[test]
    fn generator_round_trips_through_text() {
        let spec = TraceSpec { cores: 2, threads: 3, count: 1000, ..Default::default() };
        let recs = generate_trace(&spec).unwrap();
        let mut buf = Vec::new();
        write_trace(&recs, &mut buf).unwrap();
        let set = parse_trace(std::str::from_utf8(&buf).unwrap(), 2, 3).unwrap();
        assert_eq!(set.len(), 1000);
        let counts = spec.per_stream_counts();
        for c in 0..2 {
            for t in 0..3 {
                assert_eq!(set.stream(c, t).len() as u64, counts[c * 3 + t]);
            }
        }
    }

    #[test]
    fn read_ratio_within_binomial_tolerance() {
        let spec = TraceSpec { count: 1000, read_ratio: 0.5, seed: 77, ..Default::default() };
        let reads = generate_trace(&spec).unwrap().iter().filter(|r| r.opcode == Opcode::Read).count();
        // 4 sigma of Binomial(1000, 0.5) is ~63
        assert!((reads as i64 - 500).abs() <= 63, "reads {reads}");
    }

    #[test]
    fn zero_count_and_bad_specs() {
        assert!(generate_trace(&TraceSpec { count: 0, ..Default::default() }).unwrap().is_empty());
        assert!(generate_trace(&TraceSpec { read_ratio: 1.5, ..Default::default() }).is_err());
        assert!(generate_trace(&TraceSpec { cores: 0, ..Default::default() }).is_err());
        assert!(generate_trace(&TraceSpec { gap_min: 5, gap_max: 1, ..Default::default() }).is_err());
        assert!(
            generate_trace(&TraceSpec { distribution: AddressDistribution::Zipf(-1.0), ..Default::default() }).is_err()
        );
    }

    #[test]
    fn zipf_theta_zero_is_uniform_sampling() {
        let a = TraceSpec { distribution: AddressDistribution::Zipf(0.0), ..Default::default() };
        let b = TraceSpec { distribution: AddressDistribution::Uniform, ..Default::default() };
        assert_eq!(generate_trace(&a).unwrap(), generate_trace(&b).unwrap());
    }

    #[test]
    fn zipf_skews_toward_low_lines() {
        let spec = TraceSpec {
            count: 20_000,
            distribution: AddressDistribution::Zipf(1.2),
            span_bytes: 1 << 20,
            ..Default::default()
        };
        let recs = generate_trace(&spec).unwrap();
        let hot = recs.iter().filter(|r| r.address == spec.base).count();
        assert!(hot > 20_000 / 10, "hot line drew {hot}");
        assert!(recs.iter().all(|r| r.address >= spec.base && r.address < spec.base + spec.span_bytes));
    }

    #[test]
    fn deterministic_per_seed() {
        let s = TraceSpec::default();
        assert_eq!(generate_trace(&s).unwrap(), generate_trace(&s).unwrap());
        assert_ne!(generate_trace(&s).unwrap(), generate_trace(&TraceSpec { seed: 2, ..s }).unwrap());
    }
}
