/// Set-associative last-level cache with per-set LRU and 64 B lines.
///
/// Only presence is tracked. Writes allocate like reads; dirty lines are not
/// written back. A capacity of zero disables the cache (every access misses).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlcModel {
    sets: Vec<Vec<(u64, u64)>>,
    ways: usize,
    clock: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlcOutcome {
    Hit,
    Miss,
}

pub const LINE_BYTES: u64 = 64;

impl LlcModel {
    pub fn new(capacity_bytes: u64, ways: usize) -> Result<Self, String> {
        if capacity_bytes == 0 {
            return Ok(Self { sets: Vec::new(), ways: 0, clock: 0 });
        }
        if ways == 0 {
            return Err("LLC associativity must be positive".into());
        }
        let lines = capacity_bytes / LINE_BYTES;
        if !capacity_bytes.is_multiple_of(LINE_BYTES * ways as u64) || lines < ways as u64 {
            return Err(format!(
                "LLC capacity {capacity_bytes} is not a whole number of {ways}-way sets of 64 B lines"
            ));
        }
        let sets = (lines / ways as u64) as usize;
        Ok(Self { sets: vec![Vec::with_capacity(ways); sets], ways, clock: 0 })
    }

    pub fn enabled(&self) -> bool {
        !self.sets.is_empty()
    }

    pub fn set_count(&self) -> usize {
        self.sets.len()
    }

    pub fn access(&mut self, address: u64) -> LlcOutcome {
        if self.sets.is_empty() {
            return LlcOutcome::Miss;
        }
        let line = address / LINE_BYTES;
        let n = self.sets.len() as u64;
        let set = &mut self.sets[(line % n) as usize];
        self.clock += 1;
        if let Some(entry) = set.iter_mut().find(|(tag, _)| *tag == line) {
            entry.1 = self.clock;
            return LlcOutcome::Hit;
        }
        if set.len() == self.ways {
            let lru = set.iter().enumerate().min_by_key(|(_, (_, stamp))| *stamp).map(|(i, _)| i).unwrap();
            set[lru] = (line, self.clock);
        } else {
            set.push((line, self.clock));
        }
        LlcOutcome::Miss
    }
}
