use serde::{Deserialize, Serialize};

use super::HostError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    HostDram,
    CxlSsd,
}

/// Physical address layout: one CXL-SSD window plus host DRAM ranges.
/// All ranges are half-open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressMap {
    pub cxl_base: u64,
    pub cxl_limit: u64,
    pub dram_regions: Vec<(u64, u64)>,
}

impl AddressMap {
    pub fn new(cxl_base: u64, cxl_limit: u64, dram_regions: Vec<(u64, u64)>) -> Result<Self, HostError> {
        let map = Self { cxl_base, cxl_limit, dram_regions };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), HostError> {
        if self.cxl_base >= self.cxl_limit {
            return Err(HostError::AddressMap(format!(
                "cxl window [{:#x}, {:#x}) is empty",
                self.cxl_base, self.cxl_limit
            )));
        }
        let mut all: Vec<(u64, u64)> = self.dram_regions.clone();
        if let Some(&(b, l)) = all.iter().find(|(b, l)| b >= l) {
            return Err(HostError::AddressMap(format!("dram region [{b:#x}, {l:#x}) is empty")));
        }
        all.push((self.cxl_base, self.cxl_limit));
        all.sort_unstable();
        for w in all.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(HostError::AddressMap(format!(
                    "regions [{:#x}, {:#x}) and [{:#x}, {:#x}) overlap",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(())
    }

    pub fn classify(&self, address: u64) -> Result<Region, HostError> {
        if (self.cxl_base..self.cxl_limit).contains(&address) {
            return Ok(Region::CxlSsd);
        }
        if self.dram_regions.iter().any(|&(b, l)| (b..l).contains(&address)) {
            return Ok(Region::HostDram);
        }
        Err(HostError::Unmapped(address))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GIB: u64 = 1 << 30;

    #[test]
    fn window_boundaries() {
        let m = AddressMap::new(GIB, 3 * GIB, vec![(0, GIB)]).unwrap();
        assert_eq!(m.classify(GIB), Ok(Region::CxlSsd));
        assert_eq!(m.classify(3 * GIB - 64), Ok(Region::CxlSsd));
        assert_eq!(m.classify(3 * GIB), Err(HostError::Unmapped(3 * GIB)));
        assert_eq!(m.classify(0), Ok(Region::HostDram));
        let with_high = AddressMap::new(GIB, 3 * GIB, vec![(0, GIB), (3 * GIB, 4 * GIB)]).unwrap();
        assert_eq!(with_high.classify(3 * GIB), Ok(Region::HostDram));
    }

    #[test]
    fn rejects_overlap_and_empty() {
        assert!(AddressMap::new(GIB, GIB, vec![]).is_err());
        assert!(AddressMap::new(GIB, 3 * GIB, vec![(0, GIB + 1)]).is_err());
        assert!(AddressMap::new(GIB, 3 * GIB, vec![(5, 5)]).is_err());
    }
}
