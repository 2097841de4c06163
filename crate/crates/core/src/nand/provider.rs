use std::path::Path;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NandError, OpKind};

/// Two uniforms in `[0, 1)` addressed by `(seed, stream, ordinal)`.
///
/// Random access into a ChaCha keystream, so a draw never depends on how
/// many draws other streams have taken.
pub fn uniform_pair(seed: u64, stream: u64, ordinal: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(ordinal as u128 * 4);
    let scale = 1.0 / (1u64 << 53) as f64;
    [(rng.next_u64() >> 11) as f64 * scale, (rng.next_u64() >> 11) as f64 * scale]
}

/// Weighted table of observed latencies, sampled by inverse transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTable {
    values: Vec<u64>,
    cumulative: Vec<u64>,
}

impl SampleTable {
    /// Builds a table where each sample has weight one.
    pub fn from_samples(mut samples: Vec<u64>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_unstable();
        let mut values = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0u64;
        for s in samples {
            total += 1;
            if values.last() == Some(&s) {
                *cumulative.last_mut().unwrap() = total;
            } else {
                values.push(s);
                cumulative.push(total);
            }
        }
        Some(Self { values, cumulative })
    }

    /// Builds a table from `(value, weight)` pairs. Zero-weight entries are dropped.
    pub fn from_weighted(pairs: &[(u64, u64)]) -> Option<Self> {
        let mut pairs: Vec<_> = pairs.iter().copied().filter(|&(_, w)| w > 0).collect();
        if pairs.is_empty() {
            return None;
        }
        pairs.sort_unstable();
        let mut values = Vec::new();
        let mut cumulative: Vec<u64> = Vec::new();
        let mut total = 0u64;
        for (v, w) in pairs {
            total = total.checked_add(w)?;
            if values.last() == Some(&v) {
                *cumulative.last_mut().unwrap() = total;
            } else {
                values.push(v);
                cumulative.push(total);
            }
        }
        Some(Self { values, cumulative })
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn total_weight(&self) -> u64 {
        *self.cumulative.last().unwrap()
    }

    pub fn min(&self) -> u64 {
        self.values[0]
    }

    pub fn max(&self) -> u64 {
        *self.values.last().unwrap()
    }

    /// Inverse CDF at `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> u64 {
        let total = self.total_weight();
        let target = ((u * total as f64) as u64).min(total - 1);
        let idx = self.cumulative.partition_point(|&c| c <= target);
        self.values[idx]
    }

    /// Weighted population mean and standard deviation.
    pub fn stats(&self) -> KindStats {
        let total = self.total_weight() as f64;
        let mut prev = 0u64;
        let mut mean = 0.0;
        for (&v, &c) in self.values.iter().zip(&self.cumulative) {
            mean += v as f64 * (c - prev) as f64;
            prev = c;
        }
        mean /= total;
        let mut var = 0.0;
        prev = 0;
        for (&v, &c) in self.values.iter().zip(&self.cumulative) {
            let d = v as f64 - mean;
            var += d * d * (c - prev) as f64;
            prev = c;
        }
        KindStats { samples: self.total_weight(), mean_ns: mean, stddev_ns: (var / total).sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub samples: u64,
    pub mean_ns: f64,
    pub stddev_ns: f64,
}

/// Non-spiking latency source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaseModel {
    Constant { read_ns: u64, program_ns: u64 },
    Empirical { read: SampleTable, program: SampleTable },
}

impl BaseModel {
    fn draw(&self, kind: OpKind, u: f64) -> u64 {
        match (self, kind) {
            (BaseModel::Constant { read_ns, .. }, OpKind::Read) => *read_ns,
            (BaseModel::Constant { program_ns, .. }, OpKind::Program) => *program_ns,
            (BaseModel::Empirical { read, .. }, OpKind::Read) => read.quantile(u),
            (BaseModel::Empirical { program, .. }, OpKind::Program) => program.quantile(u),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LatencyModel {
    Base(BaseModel),
    /// With probability `probability` a base draw is lengthened by `magnitude_ns`.
    Spike {
        base: BaseModel,
        magnitude_ns: u64,
        probability: f64,
    },
}

/// Seeded per-operation latency source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyProvider {
    pub model: LatencyModel,
    pub seed: u64,
}

impl LatencyProvider {
    pub fn constant(read_ns: u64, program_ns: u64) -> Self {
        Self { model: LatencyModel::Base(BaseModel::Constant { read_ns, program_ns }), seed: 0 }
    }

    pub fn empirical(read: SampleTable, program: SampleTable, seed: u64) -> Self {
        Self { model: LatencyModel::Base(BaseModel::Empirical { read, program }), seed }
    }

    pub fn spike(base: BaseModel, magnitude_ns: u64, probability: f64, seed: u64) -> Result<Self, NandError> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(NandError::InvalidProvider(format!("spike probability {probability} not in [0, 1]")));
        }
        Ok(Self { model: LatencyModel::Spike { base, magnitude_ns, probability }, seed })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn mode_name(&self) -> &'static str {
        match &self.model {
            LatencyModel::Base(BaseModel::Constant { .. }) => "constant",
            LatencyModel::Base(BaseModel::Empirical { .. }) => "empirical",
            LatencyModel::Spike { .. } => "spike",
        }
    }

    /// Latency of the `ordinal`-th draw of `kind`. Pure in `(seed, kind, ordinal)`.
    pub fn sample(&self, kind: OpKind, ordinal: u64) -> u64 {
        match &self.model {
            LatencyModel::Base(BaseModel::Constant { .. }) => self.base().draw(kind, 0.0),
            LatencyModel::Base(base) => base.draw(kind, uniform_pair(self.seed, kind.stream(), ordinal)[0]),
            LatencyModel::Spike { base, magnitude_ns, probability } => {
                let [u_base, u_spike] = uniform_pair(self.seed, kind.stream(), ordinal);
                let v = base.draw(kind, u_base);
                if u_spike < *probability {
                    v + magnitude_ns
                } else {
                    v
                }
            }
        }
    }

    fn base(&self) -> &BaseModel {
        match &self.model {
            LatencyModel::Base(b) => b,
            LatencyModel::Spike { base, .. } => base,
        }
    }

    /// Mean latency per kind implied by the provider's parameters.
    pub fn expected_mean(&self, kind: OpKind) -> f64 {
        let base_mean = match (self.base(), kind) {
            (BaseModel::Constant { read_ns, .. }, OpKind::Read) => *read_ns as f64,
            (BaseModel::Constant { program_ns, .. }, OpKind::Program) => *program_ns as f64,
            (BaseModel::Empirical { read, .. }, OpKind::Read) => read.stats().mean_ns,
            (BaseModel::Empirical { program, .. }, OpKind::Program) => program.stats().mean_ns,
        };
        match &self.model {
            LatencyModel::Base(_) => base_mean,
            LatencyModel::Spike { magnitude_ns, probability, .. } => base_mean + probability * *magnitude_ns as f64,
        }
    }

    /// Summary statistics of the source tables (empirical mode) or of the constants.
    pub fn summary(&self, kind: OpKind) -> KindStats {
        match (self.base(), kind) {
            (BaseModel::Empirical { read, .. }, OpKind::Read) => read.stats(),
            (BaseModel::Empirical { program, .. }, OpKind::Program) => program.stats(),
            (BaseModel::Constant { .. }, _) => {
                KindStats { samples: 1, mean_ns: self.base().draw(kind, 0.0) as f64, stddev_ns: 0.0 }
            }
        }
    }
}

fn parse_kind(s: &str) -> Option<OpKind> {
    match s.trim().to_ascii_lowercase().as_str() {
        "read" | "r" | "t_r" | "tr" => Some(OpKind::Read),
        "program" | "prog" | "p" | "w" | "t_prog" | "tprog" => Some(OpKind::Program),
        _ => None,
    }
}

/// Parses `kind,latency_ns` rows into a pair of sample tables.
///
/// A leading `kind,latency_ns` header is accepted. Both kinds must appear.
pub fn parse_empirical(text: &str) -> Result<(SampleTable, SampleTable), NandError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut reads = Vec::new();
    let mut programs = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| NandError::Parse { line: i + 1, msg: e.to_string() })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        if rec.len() != 2 {
            return Err(NandError::Parse { line, msg: format!("expected 2 fields, found {}", rec.len()) });
        }
        if i == 0 && rec[0].eq_ignore_ascii_case("kind") {
            continue;
        }
        let kind =
            parse_kind(&rec[0]).ok_or_else(|| NandError::Parse { line, msg: format!("unknown kind {:?}", &rec[0]) })?;
        let ns: u64 = rec[1].parse().map_err(|_| NandError::Parse {
            line,
            msg: format!("latency {:?} is not a non-negative integer", &rec[1]),
        })?;
        match kind {
            OpKind::Read => reads.push(ns),
            OpKind::Program => programs.push(ns),
        }
    }
    let read = SampleTable::from_samples(reads).ok_or(NandError::MissingKind(OpKind::Read))?;
    let program = SampleTable::from_samples(programs).ok_or(NandError::MissingKind(OpKind::Program))?;
    Ok((read, program))
}

/// Loads an empirical provider from a `kind,latency_ns` CSV file.
pub fn load_empirical(path: impl AsRef<Path>, seed: u64) -> Result<LatencyProvider, NandError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| NandError::Io(format!("{}: {e}", path.as_ref().display())))?;
    let (read, program) = parse_empirical(&text)?;
    Ok(LatencyProvider::empirical(read, program, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_draws_never_vary() {
        let p = LatencyProvider::constant(99_720, 650_000);
        for i in 0..1000 {
            assert_eq!(p.sample(OpKind::Read, i), 99_720);
            assert_eq!(p.sample(OpKind::Program, i), 650_000);
        }
    }

    #[test]
    fn two_point_table_mean_converges() {
        // table expectation = (100 + 200) / 2 us
        let t = SampleTable::from_weighted(&[(100_000, 1), (200_000, 1)]).unwrap();
        let p = LatencyProvider::empirical(t.clone(), t, 7);
        let n = 100_000u64;
        let sum: u64 = (0..n).map(|i| p.sample(OpKind::Read, i)).sum();
        let mean = sum as f64 / n as f64;
        assert!((mean - 150_000.0).abs() / 150_000.0 < 0.01, "mean {mean}");
    }

    #[test]
    fn two_row_file_spans_both_values() {
        let (r, w) = parse_empirical("kind,latency_ns\nread,70000\nread,90000\nprogram,5\n").unwrap();
        let p = LatencyProvider::empirical(r, w, 3);
        let draws: Vec<u64> = (0..10_000).map(|i| p.sample(OpKind::Read, i)).collect();
        assert_eq!(*draws.iter().min().unwrap(), 70_000);
        assert_eq!(*draws.iter().max().unwrap(), 90_000);
        assert!(draws.iter().all(|&d| d == 70_000 || d == 90_000));
    }

    #[test]
    fn single_row_behaves_like_constant() {
        let (r, w) = parse_empirical("read,65000\nprogram,600000\n").unwrap();
        let p = LatencyProvider::empirical(r, w, 11);
        assert!((0..500).all(|i| p.sample(OpKind::Read, i) == 65_000));
        assert_eq!(p.summary(OpKind::Read).stddev_ns, 0.0);
    }

    #[test]
    fn spike_rate_and_magnitude() {
        let base = BaseModel::Constant { read_ns: 68_000, program_ns: 68_000 };
        let p = LatencyProvider::spike(base, 372_000, 0.001, 5).unwrap();
        let n = 200_000u64;
        let spikes = (0..n).filter(|&i| p.sample(OpKind::Read, i) == 440_000).count();
        assert!((0..n).all(|i| matches!(p.sample(OpKind::Read, i), 68_000 | 440_000)));
        let rate = spikes as f64 / n as f64;
        // binomial sd at n = 2e5, p = 1e-3 is ~7e-5
        assert!((rate - 0.001).abs() < 0.0003, "rate {rate}");
    }

    #[test]
    fn empirical_file_errors() {
        assert_eq!(parse_empirical("read,1\n").unwrap_err(), NandError::MissingKind(OpKind::Program));
        assert!(matches!(parse_empirical("read,abc\nprogram,1\n"), Err(NandError::Parse { line: 1, .. })));
        assert!(matches!(parse_empirical("erase,5\n"), Err(NandError::Parse { .. })));
        assert_eq!(parse_empirical("").unwrap_err(), NandError::MissingKind(OpKind::Read));
    }

    #[test]
    fn quantile_hits_only_table_values() {
        let t = SampleTable::from_samples(vec![5, 1, 5, 9]).unwrap();
        assert_eq!(t.values(), &[1, 5, 9]);
        assert_eq!(t.quantile(0.0), 1);
        assert_eq!(t.quantile(0.25), 5);
        assert_eq!(t.quantile(0.74), 5);
        assert_eq!(t.quantile(0.75), 9);
        assert_eq!(t.quantile(0.999_999), 9);
    }

    #[test]
    fn same_seed_same_stream() {
        let t = SampleTable::from_samples((1..100).collect()).unwrap();
        let a = LatencyProvider::empirical(t.clone(), t.clone(), 42);
        let b = LatencyProvider::empirical(t.clone(), t.clone(), 42);
        let c = LatencyProvider::empirical(t.clone(), t, 43);
        let sa: Vec<_> = (0..64).map(|i| a.sample(OpKind::Read, i)).collect();
        let sb: Vec<_> = (0..64).map(|i| b.sample(OpKind::Read, i)).collect();
        let sc: Vec<_> = (0..64).map(|i| c.sample(OpKind::Read, i)).collect();
        assert_eq!(sa, sb);
        assert_ne!(sa, sc);
    }
}
