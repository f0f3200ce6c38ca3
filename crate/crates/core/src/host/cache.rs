//! Set-associative, write-back, write-allocate caches with LRU replacement.
//!
//! Caches here are tag-only; they decide hit/miss, latency and writeback
//! traffic. Data lives in the memory targets. Inclusion is not enforced: a
//! fill installs the line at every level and each level evicts on its own.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{line_of, LINE_BYTES};
use crate::engine::Tick;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheLevelConfig {
    pub capacity_bytes: u64,
    pub associativity: u32,
    #[serde(with = "crate::config::ns")]
    pub hit_latency_ns: Tick,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheConfigError {
    #[error("capacity {capacity} not divisible by associativity {ways} x {line}B lines")]
    Geometry { capacity: u64, ways: u32, line: u64 },
    #[error("hit latency must be positive")]
    ZeroLatency,
}

impl CacheLevelConfig {
    pub fn validate(&self) -> Result<(), CacheConfigError> {
        let way_bytes = self.associativity as u64 * LINE_BYTES;
        if self.associativity == 0
            || self.capacity_bytes == 0
            || way_bytes == 0
            || !self.capacity_bytes.is_multiple_of(way_bytes)
        {
            return Err(CacheConfigError::Geometry {
                capacity: self.capacity_bytes,
                ways: self.associativity,
                line: LINE_BYTES,
            });
        }
        if self.hit_latency_ns == Tick::ZERO {
            return Err(CacheConfigError::ZeroLatency);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Way {
    tag: u64,
    valid: bool,
    dirty: bool,
    stamp: u64,
}

/// Result of installing a line at one level.
#[derive(Debug, PartialEq, Eq)]
pub struct Eviction {
    pub line: u64,
    pub dirty: bool,
}

pub struct CacheLevel {
    ways: Vec<Way>,
    sets: u64,
    assoc: usize,
    clock: u64,
    pub hit_latency: Tick,
    pub hits: u64,
    pub misses: u64,
}

impl CacheLevel {
    pub fn new(cfg: &CacheLevelConfig) -> Result<Self, CacheConfigError> {
        cfg.validate()?;
        let assoc = cfg.associativity as usize;
        let sets = cfg.capacity_bytes / LINE_BYTES / assoc as u64;
        Ok(CacheLevel {
            ways: vec![Way::default(); sets as usize * assoc],
            sets,
            assoc,
            clock: 0,
            hit_latency: cfg.hit_latency_ns,
            hits: 0,
            misses: 0,
        })
    }

    fn locate(&self, addr: u64) -> (usize, u64) {
        let line = addr / LINE_BYTES;
        ((line % self.sets) as usize * self.assoc, line / self.sets)
    }

    fn find(&self, addr: u64) -> Option<usize> {
        let (base, tag) = self.locate(addr);
        (base..base + self.assoc).find(|&i| self.ways[i].valid && self.ways[i].tag == tag)
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.find(addr).is_some()
    }

    /// Counted lookup; a hit refreshes recency and optionally dirties.
    pub fn access(&mut self, addr: u64, write: bool) -> bool {
        self.clock += 1;
        match self.find(addr) {
            Some(i) => {
                self.ways[i].stamp = self.clock;
                self.ways[i].dirty |= write;
                self.hits += 1;
                true
            }
            None => {
                self.misses += 1;
                false
            }
        }
    }

    /// Installs (or refreshes) a line, returning the victim if a valid line
    /// was displaced.
    pub fn install(&mut self, addr: u64, dirty: bool) -> Option<Eviction> {
        self.clock += 1;
        if let Some(i) = self.find(addr) {
            self.ways[i].stamp = self.clock;
            self.ways[i].dirty |= dirty;
            return None;
        }
        let (base, tag) = self.locate(addr);
        let victim = (base..base + self.assoc)
            .min_by_key(|&i| {
                let w = &self.ways[i];
                if w.valid {
                    w.stamp
                } else {
                    0
                }
            })
            .expect("associativity >= 1");
        let old = self.ways[victim];
        self.ways[victim] = Way {
            tag,
            valid: true,
            dirty,
            stamp: self.clock,
        };
        old.valid.then(|| Eviction {
            line: (old.tag * self.sets + (base / self.assoc) as u64) * LINE_BYTES,
            dirty: old.dirty,
        })
    }

    /// Drops a line, reporting whether it was dirty.
    pub fn invalidate(&mut self, addr: u64) -> Option<bool> {
        let i = self.find(addr)?;
        self.ways[i].valid = false;
        Some(self.ways[i].dirty)
    }

    pub fn lookups(&self) -> u64 {
        self.hits + self.misses
    }
}

#[derive(Debug, PartialEq, Eq, Clone, Copy)]
pub enum Lookup {
    /// Hit at level index (0 = L1) with cumulative lookup latency.
    Hit { level: usize, latency: Tick },
    Miss,
}

pub struct CacheHierarchy {
    levels: Vec<CacheLevel>,
}

impl CacheHierarchy {
    pub fn new(configs: &[CacheLevelConfig]) -> Result<Self, CacheConfigError> {
        let levels = configs.iter().map(CacheLevel::new).collect::<Result<_, _>>()?;
        Ok(CacheHierarchy { levels })
    }

    pub fn levels(&self) -> &[CacheLevel] {
        &self.levels
    }

    /// Cumulative latency to hit at `level`.
    pub fn hit_latency(&self, level: usize) -> Tick {
        self.levels[..=level]
            .iter()
            .fold(Tick::ZERO, |acc, l| acc + l.hit_latency)
    }

    /// Looks the line up level by level. A hit below L1 refills the levels
    /// above it; dirty lines pushed out of the last level are appended to
    /// `writebacks`.
    pub fn lookup(&mut self, addr: u64, write: bool, writebacks: &mut Vec<u64>) -> Lookup {
        let addr = line_of(addr);
        for level in 0..self.levels.len() {
            if self.levels[level].access(addr, write && level == 0) {
                if level > 0 {
                    for upper in (0..level).rev() {
                        self.install_at(upper, addr, write && upper == 0, writebacks);
                    }
                }
                return Lookup::Hit {
                    level,
                    latency: self.hit_latency(level),
                };
            }
        }
        Lookup::Miss
    }

    /// Installs a line returned from memory into every level.
    pub fn fill(&mut self, addr: u64, dirty: bool, writebacks: &mut Vec<u64>) {
        let addr = line_of(addr);
        for level in (0..self.levels.len()).rev() {
            self.install_at(level, addr, dirty && level == 0, writebacks);
        }
    }

    fn install_at(&mut self, level: usize, addr: u64, dirty: bool, writebacks: &mut Vec<u64>) {
        if let Some(ev) = self.levels[level].install(addr, dirty) {
            if ev.dirty {
                if level + 1 < self.levels.len() {
                    self.install_at(level + 1, ev.line, true, writebacks);
                } else {
                    writebacks.push(ev.line);
                }
            }
        }
    }

    /// Removes the line everywhere; returns true if any copy was dirty.
    pub fn invalidate(&mut self, addr: u64) -> bool {
        let addr = line_of(addr);
        let mut dirty = false;
        for l in &mut self.levels {
            dirty |= l.invalidate(addr).unwrap_or(false);
        }
        dirty
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(capacity: u64, ways: u32, ns: u64) -> CacheLevelConfig {
        CacheLevelConfig {
            capacity_bytes: capacity,
            associativity: ways,
            hit_latency_ns: Tick::from_ns(ns),
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(cfg(1000, 4, 1).validate().is_err());
        assert!(cfg(4096, 4, 0).validate().is_err());
        assert!(cfg(4096, 4, 1).validate().is_ok());
    }

    #[test]
    fn lru_evicts_least_recent_in_set() {
        // 2 sets x 2 ways.
        let mut c = CacheLevel::new(&cfg(256, 2, 1)).unwrap();
        let set0 = |k: u64| k * 2 * LINE_BYTES;
        assert_eq!(c.install(set0(0), false), None);
        assert_eq!(c.install(set0(1), true), None);
        assert!(c.access(set0(0), false));
        let ev = c.install(set0(2), false).unwrap();
        assert_eq!(ev, Eviction { line: set0(1), dirty: true });
        assert!(c.contains(set0(0)));
    }

    #[test]
    fn eviction_reports_full_line_address() {
        let mut c = CacheLevel::new(&cfg(64 * 8, 1, 1)).unwrap();
        let a = 0x1_0000 + 3 * LINE_BYTES;
        c.install(a, true);
        let ev = c.install(a + 8 * LINE_BYTES, false).unwrap();
        assert_eq!(ev.line, a);
    }

    #[test]
    fn working_set_within_l1_always_hits() {
        let mut h = CacheHierarchy::new(&[cfg(32 << 10, 8, 1), cfg(256 << 10, 8, 4)]).unwrap();
        let lines: Vec<u64> = (0..256).map(|i| i * LINE_BYTES).collect();
        let mut wb = Vec::new();
        for &a in &lines {
            if h.lookup(a, false, &mut wb) == Lookup::Miss {
                h.fill(a, false, &mut wb);
            }
        }
        let before = h.levels()[0].hits;
        for _ in 0..4 {
            for &a in &lines {
                assert!(matches!(h.lookup(a, false, &mut wb), Lookup::Hit { level: 0, .. }));
            }
        }
        assert_eq!(h.levels()[0].hits - before, 4 * 256);
        assert!(wb.is_empty());
    }

    #[test]
    fn dirty_last_level_victims_become_writebacks() {
        let mut h = CacheHierarchy::new(&[cfg(64, 1, 1), cfg(128, 1, 2)]).unwrap();
        let mut wb = Vec::new();
        h.fill(0, true, &mut wb);
        h.fill(128, false, &mut wb);
        h.fill(256, false, &mut wb);
        // Line 0 was dirty in L1; pushed into L2 then out of L2.
        assert_eq!(wb, vec![0]);
    }

    #[test]
    fn per_level_hits_plus_misses_equal_lookups() {
        let mut h = CacheHierarchy::new(&[cfg(1024, 2, 1), cfg(4096, 4, 3)]).unwrap();
        let mut wb = Vec::new();
        let mut x = 1u64;
        for _ in 0..5000 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = (x >> 33) % 256 * LINE_BYTES;
            if h.lookup(a, x & 1 == 0, &mut wb) == Lookup::Miss {
                h.fill(a, x & 1 == 0, &mut wb);
            }
        }
        let l1 = &h.levels()[0];
        let l2 = &h.levels()[1];
        assert_eq!(l1.lookups(), 5000);
        assert_eq!(l2.lookups(), l1.misses);
    }

    #[test]
    fn cumulative_hit_latency() {
        let h = CacheHierarchy::new(&[cfg(1024, 2, 1), cfg(4096, 4, 4), cfg(8192, 4, 15)]).unwrap();
        assert_eq!(h.hit_latency(2), Tick::from_ns(20));
    }
}
