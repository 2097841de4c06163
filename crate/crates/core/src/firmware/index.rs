use std::collections::BTreeMap;

use super::log::LogSlot;

/// Two-level map: NAND page → (line offset within page → log slot).
///
/// A first-level record exists only while its second level is non-empty.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LogIndex {
    pages: BTreeMap<u64, BTreeMap<u16, LogSlot>>,
}

impl LogIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Points `(page, offset)` at `slot`, returning the slot it replaced.
    pub fn insert(&mut self, page: u64, offset: u16, slot: LogSlot) -> Option<LogSlot> {
        self.pages.entry(page).or_default().insert(offset, slot)
    }

    pub fn lookup(&self, page: u64, offset: u16) -> Option<LogSlot> {
        self.pages.get(&page)?.get(&offset).copied()
    }

    pub fn has_page(&self, page: u64) -> bool {
        self.pages.contains_key(&page)
    }

    /// Second-level map of a page, offsets ascending.
    pub fn page_lines(&self, page: u64) -> Option<&BTreeMap<u16, LogSlot>> {
        self.pages.get(&page)
    }

    /// Modified pages in ascending order.
    pub fn pages(&self) -> impl Iterator<Item = u64> + '_ {
        self.pages.keys().copied()
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn line_count(&self) -> usize {
        self.pages.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn remove_page(&mut self, page: u64) -> Option<BTreeMap<u16, LogSlot>> {
        self.pages.remove(&page)
    }

    pub fn clear(&mut self) {
        self.pages.clear();
    }

    /// Every `(page, offset, slot)` path.
    pub fn paths(&self) -> impl Iterator<Item = (u64, u16, LogSlot)> + '_ {
        self.pages.iter().flat_map(|(&p, lines)| lines.iter().map(move |(&o, &s)| (p, o, s)))
    }
}
