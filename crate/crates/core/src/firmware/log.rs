use serde::{Deserialize, Serialize};

pub type Line = [u8; 64];

/// Position of an entry in the write log ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LogSlot(pub u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteLogEntry {
    pub cacheline_address: u64,
    pub payload: Line,
    pub sequence: u64,
    pub valid: bool,
}

/// Bounded ring of 64 B writes.
///
/// Slots between head and tail hold valid or stale entries; a later write
/// to the same line invalidates the earlier one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteLog {
    entries: Vec<Option<WriteLogEntry>>,
    head: usize,
    len: usize,
    live: usize,
    next_sequence: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogFull;

impl WriteLog {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0 && capacity <= u32::MAX as usize, "write log capacity out of range");
        Self { entries: vec![None; capacity], head: 0, len: 0, live: 0, next_sequence: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    /// Slots in use, stale entries included.
    pub fn occupancy(&self) -> usize {
        self.len
    }

    /// Valid entries.
    pub fn live(&self) -> usize {
        self.live
    }

    pub fn is_full(&self) -> bool {
        self.len == self.entries.len()
    }

    pub fn append(&mut self, cacheline_address: u64, payload: Line) -> Result<LogSlot, LogFull> {
        if self.is_full() {
            return Err(LogFull);
        }
        let idx = (self.head + self.len) % self.entries.len();
        self.entries[idx] =
            Some(WriteLogEntry { cacheline_address, payload, sequence: self.next_sequence, valid: true });
        self.next_sequence += 1;
        self.len += 1;
        self.live += 1;
        Ok(LogSlot(idx as u32))
    }

    pub fn get(&self, slot: LogSlot) -> Option<&WriteLogEntry> {
        self.entries.get(slot.0 as usize)?.as_ref()
    }

    pub fn invalidate(&mut self, slot: LogSlot) {
        if let Some(Some(e)) = self.entries.get_mut(slot.0 as usize) {
            if e.valid {
                e.valid = false;
                self.live -= 1;
            }
        }
    }

    /// Drops every entry; used after a compaction that covered the whole log.
    pub fn reclaim_all(&mut self) {
        for e in &mut self.entries {
            *e = None;
        }
        self.head = 0;
        self.len = 0;
        self.live = 0;
    }

    /// Entries between head and tail, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = (LogSlot, &WriteLogEntry)> {
        let cap = self.entries.len();
        (0..self.len).filter_map(move |i| {
            let idx = (self.head + i) % cap;
            self.entries[idx].as_ref().map(|e| (LogSlot(idx as u32), e))
        })
    }
}
