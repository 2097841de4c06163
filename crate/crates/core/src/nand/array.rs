use serde::{Deserialize, Serialize};

use super::{LatencyProvider, NandError, NandGeometry, OpKind, Unit};

/// One operation to submit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NandRequest {
    pub kind: OpKind,
    pub page: u64,
}

impl NandRequest {
    pub fn read(page: u64) -> Self {
        Self { kind: OpKind::Read, page }
    }

    pub fn program(page: u64) -> Self {
        Self { kind: OpKind::Program, page }
    }
}

/// A scheduled operation. `complete - start = media_ns + overhead_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NandOp {
    pub kind: OpKind,
    pub page: u64,
    pub unit: Unit,
    pub submit_ns: u64,
    pub start_ns: u64,
    pub complete_ns: u64,
    /// Provider-sampled array time.
    pub media_ns: u64,
    /// Controller/firmware overhead from queue depth.
    pub overhead_ns: u64,
    /// Outstanding operations on the array when this one was queued, itself included.
    pub depth: u32,
}

impl NandOp {
    pub fn latency_ns(&self) -> u64 {
        self.complete_ns - self.start_ns
    }
}

pub type NandEvent = NandOp;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub ops: Vec<NandOp>,
    pub submitted_ns: u64,
    /// Completion time of the last op (or the submit time for an empty batch).
    pub done_ns: u64,
}

impl Schedule {
    pub fn makespan_ns(&self) -> u64 {
        self.done_ns - self.submitted_ns
    }
}

/// Per-unit FIFO queues over a channel/way grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NandArray {
    geometry: NandGeometry,
    provider: LatencyProvider,
    overhead_per_depth_ns: u64,
    busy_until: Vec<u64>,
    inflight: Vec<u64>,
    read_draws: u64,
    program_draws: u64,
    reads: u64,
    programs: u64,
    events: Vec<NandEvent>,
}

impl NandArray {
    pub fn new(geometry: NandGeometry, provider: LatencyProvider, overhead_per_depth_ns: u64) -> Self {
        Self {
            busy_until: vec![0; geometry.units()],
            geometry,
            provider,
            overhead_per_depth_ns,
            inflight: Vec::new(),
            read_draws: 0,
            program_draws: 0,
            reads: 0,
            programs: 0,
            events: Vec::new(),
        }
    }

    pub fn geometry(&self) -> &NandGeometry {
        &self.geometry
    }

    pub fn provider(&self) -> &LatencyProvider {
        &self.provider
    }

    pub fn overhead_per_depth_ns(&self) -> u64 {
        self.overhead_per_depth_ns
    }

    pub fn reads(&self) -> u64 {
        self.reads
    }

    pub fn programs(&self) -> u64 {
        self.programs
    }

    /// Operations scheduled since the last drain, in submission order.
    pub fn events(&self) -> &[NandEvent] {
        &self.events
    }

    pub fn drain_events(&mut self) -> Vec<NandEvent> {
        std::mem::take(&mut self.events)
    }

    /// Queues a batch at `now_ns`. Ops are enqueued in slice order; ops on
    /// distinct units overlap, ops on one unit serialize.
    pub fn submit(&mut self, batch: &[NandRequest], now_ns: u64) -> Result<Schedule, NandError> {
        let units: Vec<Unit> = batch.iter().map(|r| self.geometry.map_page(r.page)).collect::<Result<_, _>>()?;
        self.inflight.retain(|&done| done > now_ns);
        let mut ops = Vec::with_capacity(batch.len());
        let mut done_ns = now_ns;
        for (req, unit) in batch.iter().zip(units) {
            let depth = self.inflight.len() as u32 + 1;
            let ordinal = match req.kind {
                OpKind::Read => {
                    self.read_draws += 1;
                    self.reads += 1;
                    self.read_draws - 1
                }
                OpKind::Program => {
                    self.program_draws += 1;
                    self.programs += 1;
                    self.program_draws - 1
                }
            };
            let media_ns = self.provider.sample(req.kind, ordinal);
            let overhead_ns = self.overhead_per_depth_ns * depth as u64;
            let idx = self.geometry.unit_index(unit);
            let start_ns = self.busy_until[idx].max(now_ns);
            let complete_ns = start_ns + media_ns + overhead_ns;
            self.busy_until[idx] = complete_ns;
            self.inflight.push(complete_ns);
            done_ns = done_ns.max(complete_ns);
            let op = NandOp {
                kind: req.kind,
                page: req.page,
                unit,
                submit_ns: now_ns,
                start_ns,
                complete_ns,
                media_ns,
                overhead_ns,
                depth,
            };
            self.events.push(op);
            ops.push(op);
        }
        Ok(Schedule { ops, submitted_ns: now_ns, done_ns })
    }

    /// Submits a single op and returns its completion time.
    pub fn submit_one(&mut self, req: NandRequest, now_ns: u64) -> Result<NandOp, NandError> {
        Ok(self.submit(&[req], now_ns)?.ops[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn array(read_ns: u64, overhead: u64) -> NandArray {
        NandArray::new(NandGeometry::default(), LatencyProvider::constant(read_ns, 2 * read_ns), overhead)
    }

    #[test]
    fn single_read_on_idle_unit() {
        let mut a = array(65_000, 0);
        let s = a.submit(&[NandRequest::read(3)], 1_000).unwrap();
        assert_eq!(s.ops[0].complete_ns, 66_000);
        assert_eq!(s.makespan_ns(), 65_000);
    }

    #[test]
    fn distinct_channels_overlap() {
        let mut a = array(50_000, 0);
        let batch: Vec<_> = (0..4).map(NandRequest::read).collect();
        assert_eq!(a.submit(&batch, 0).unwrap().makespan_ns(), 50_000);
    }

    #[test]
    fn same_unit_serializes() {
        let mut a = array(50_000, 0);
        // pages 0 and 32 share (0, 0) in a 4x8 grid
        let s = a.submit(&[NandRequest::read(0), NandRequest::read(32)], 0).unwrap();
        assert_eq!(s.makespan_ns(), 100_000);
        assert_eq!(s.ops[1].start_ns, s.ops[0].complete_ns);
    }

    #[test]
    fn overhead_grows_with_depth() {
        let mut a = array(10_000, 100);
        let s = a.submit(&(0..8).map(NandRequest::read).collect::<Vec<_>>(), 0).unwrap();
        let depths: Vec<u32> = s.ops.iter().map(|o| o.depth).collect();
        assert_eq!(depths, (1..=8).collect::<Vec<_>>());
        assert_eq!(s.ops[7].overhead_ns, 800);
        // a later op submitted after everything drained sees depth 1 again
        let op = a.submit_one(NandRequest::read(0), 1_000_000).unwrap();
        assert_eq!(op.depth, 1);
    }

    #[test]
    fn bad_page_rejects_whole_batch() {
        let mut a = array(1, 0);
        let total = a.geometry().total_pages();
        assert!(a.submit(&[NandRequest::read(0), NandRequest::read(total)], 0).is_err());
        assert!(a.events().is_empty());
        assert_eq!(a.reads(), 0);
    }

    proptest! {
        #[test]
        fn makespan_bounds(pages in proptest::collection::vec(0u64..1024, 1..80), seed in any::<u64>()) {
            let t = super::super::SampleTable::from_samples(vec![10_000, 40_000, 90_000]).unwrap();
            let mut a = NandArray::new(NandGeometry::default(), LatencyProvider::empirical(t.clone(), t, seed), 0);
            let batch: Vec<_> = pages.iter().map(|&p| NandRequest::read(p)).collect();
            let s = a.submit(&batch, 0).unwrap();
            let sum: u64 = s.ops.iter().map(|o| o.latency_ns()).sum();
            let units = a.geometry().units() as u64;
            prop_assert!(s.makespan_ns() <= sum);
            prop_assert!(sum <= s.makespan_ns() * units);
            for w in s.ops.iter().enumerate() {
                let (i, op) = w;
                prop_assert!(op.submit_ns <= op.start_ns && op.start_ns <= op.complete_ns);
                // FIFO per unit
                for later in &s.ops[i + 1..] {
                    if later.unit == op.unit {
                        prop_assert!(later.start_ns >= op.complete_ns);
                    }
                }
            }
        }
    }
}
