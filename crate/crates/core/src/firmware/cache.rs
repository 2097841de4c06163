use std::collections::{BTreeMap, HashMap};

/// A resident NAND page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    /// Page bytes; `None` when payload capture is off.
    pub data: Option<Box<[u8]>>,
    pub dirty: bool,
    pub stamp: u64,
}

/// Page evicted to make room for an admission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evicted {
    pub page: u64,
    pub was_dirty: bool,
    pub data: Option<Box<[u8]>>,
}

/// Strict-LRU cache of whole NAND pages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataCache {
    capacity: usize,
    frames: HashMap<u64, Frame>,
    lru: BTreeMap<u64, u64>,
    clock: u64,
}

impl DataCache {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "data cache needs at least one frame");
        Self { capacity, frames: HashMap::new(), lru: BTreeMap::new(), clock: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn contains(&self, page: u64) -> bool {
        self.frames.contains_key(&page)
    }

    pub fn get(&self, page: u64) -> Option<&Frame> {
        self.frames.get(&page)
    }

    pub fn get_mut(&mut self, page: u64) -> Option<&mut Frame> {
        self.frames.get_mut(&page)
    }

    /// Marks `page` most recently used.
    pub fn touch(&mut self, page: u64) {
        if let Some(f) = self.frames.get_mut(&page) {
            self.lru.remove(&f.stamp);
            self.clock += 1;
            f.stamp = self.clock;
            self.lru.insert(self.clock, page);
        }
    }

    /// LRU victim if an admission would need one.
    pub fn victim(&self) -> Option<u64> {
        if self.frames.len() < self.capacity {
            return None;
        }
        self.lru.values().next().copied()
    }

    /// Removes the LRU frame if the cache is full.
    pub fn evict_lru(&mut self) -> Option<Evicted> {
        let victim = self.victim()?;
        let f = self.frames.remove(&victim).expect("lru and frames agree");
        self.lru.remove(&f.stamp);
        Some(Evicted { page: victim, was_dirty: f.dirty, data: f.data })
    }

    /// Inserts a page that is not resident, evicting the LRU frame when full.
    pub fn admit(&mut self, page: u64, data: Option<Box<[u8]>>, dirty: bool) -> Option<Evicted> {
        debug_assert!(!self.contains(page), "page {page} already resident");
        let evicted = self.evict_lru();
        self.clock += 1;
        self.frames.insert(page, Frame { data, dirty, stamp: self.clock });
        self.lru.insert(self.clock, page);
        evicted
    }

    /// Resident pages in ascending order.
    pub fn pages(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.frames.keys().copied().collect();
        v.sort_unstable();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lru_evicts_oldest() {
        let mut c = DataCache::new(2);
        assert!(c.admit(1, None, false).is_none());
        assert!(c.admit(2, None, false).is_none());
        assert_eq!(c.admit(3, None, false).unwrap().page, 1);
    }

    #[test]
    fn touch_refreshes_recency() {
        let mut c = DataCache::new(2);
        c.admit(1, None, false);
        c.admit(2, None, true);
        c.touch(1);
        let e = c.admit(3, None, false).unwrap();
        assert_eq!((e.page, e.was_dirty), (2, true));
        assert_eq!(c.pages(), vec![1, 3]);
    }
}
