//! SSD-backed medium: page-granular flash behind a device-side page cache
//! with LRU or FIFO replacement and a Best-Offset prefetcher.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::engine::Tick;
use crate::host::LINE_BYTES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsdConfig {
    pub page_size: u64,
    #[serde(with = "crate::config::ns")]
    pub read_latency_ns: Tick,
    #[serde(with = "crate::config::ns")]
    pub write_latency_ns: Tick,
    pub parallel_channels: u32,
}

impl Default for SsdConfig {
    fn default() -> Self {
        SsdConfig {
            page_size: 4096,
            read_latency_ns: Tick::from_us(25),
            write_latency_ns: Tick::from_us(300),
            parallel_channels: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementPolicy {
    Lru,
    Fifo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceCacheConfig {
    pub capacity_bytes: u64,
    pub policy: ReplacementPolicy,
    /// Write-back when true; write-through otherwise.
    pub writeback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsdMediumConfig {
    pub ssd: SsdConfig,
    pub cache: Option<DeviceCacheConfig>,
    pub prefetch: bool,
}

impl SsdMediumConfig {
    pub fn validate(&self) -> Result<(), String> {
        let p = self.ssd.page_size;
        if !p.is_power_of_two() || p < LINE_BYTES {
            return Err("ssd.page_size must be a power of two >= 64".into());
        }
        if self.ssd.parallel_channels == 0 {
            return Err("ssd.parallel_channels must be >= 1".into());
        }
        if self.ssd.read_latency_ns == Tick::ZERO || self.ssd.write_latency_ns == Tick::ZERO {
            return Err("ssd latencies must be positive".into());
        }
        if let Some(c) = &self.cache {
            if c.capacity_bytes == 0 || c.capacity_bytes % p != 0 {
                return Err("cache.capacity_bytes must be a positive multiple of the page size".into());
            }
        }
        if self.prefetch && self.cache.is_none() {
            return Err("prefetch requires a device cache".into());
        }
        Ok(())
    }
}

/// Flash channels. Operations are taken in arrival order, each by the
/// channel that frees up first (lowest index on ties).
#[derive(Debug)]
pub struct SsdChannels {
    free: Vec<Tick>,
    read: Tick,
    write: Tick,
    pub reads: u64,
    pub writes: u64,
}

impl SsdChannels {
    pub fn new(cfg: &SsdConfig) -> Self {
        SsdChannels {
            free: vec![Tick::ZERO; cfg.parallel_channels as usize],
            read: cfg.read_latency_ns,
            write: cfg.write_latency_ns,
            reads: 0,
            writes: 0,
        }
    }

    /// Completion time of a page read or program submitted at `now`.
    pub fn io(&mut self, now: Tick, write: bool) -> Tick {
        let (idx, &free) = self
            .free
            .iter()
            .enumerate()
            .min_by_key(|&(i, &t)| (t, i))
            .expect("at least one channel");
        let lat = if write {
            self.writes += 1;
            self.write
        } else {
            self.reads += 1;
            self.read
        };
        let done = now.max(free) + lat;
        self.free[idx] = done;
        done
    }
}

pub const BO_SCORE_MAX: u32 = 31;
pub const BO_ROUND_MAX: u32 = 100;
pub const BO_BAD_SCORE: u32 = 1;
pub const BO_RR_SIZE: usize = 256;

/// Candidate offsets: 1..=64 whose prime factors are all in {2, 3, 5}.
pub fn bo_offsets() -> Vec<u64> {
    (1..=64u64)
        .filter(|&n| {
            let mut m = n;
            for p in [2, 3, 5] {
                while m % p == 0 {
                    m /= p;
                }
            }
            m == 1
        })
        .collect()
}

/// Best-Offset learner over page addresses.
#[derive(Clone, Debug)]
pub struct BestOffset {
    offsets: Vec<u64>,
    scores: Vec<u32>,
    test: usize,
    round: u32,
    recent: VecDeque<u64>,
    recent_count: HashMap<u64, u32>,
    rr_size: usize,
    best: Option<u64>,
    pub phases: u64,
}

impl Default for BestOffset {
    fn default() -> Self {
        Self::new(BO_RR_SIZE)
    }
}

impl BestOffset {
    pub fn new(rr_size: usize) -> Self {
        let offsets = bo_offsets();
        BestOffset {
            scores: vec![0; offsets.len()],
            offsets,
            test: 0,
            round: 0,
            recent: VecDeque::with_capacity(rr_size),
            recent_count: HashMap::new(),
            rr_size,
            best: None,
            phases: 0,
        }
    }

    pub fn best_offset(&self) -> Option<u64> {
        self.best
    }

    pub fn scores(&self) -> &[u32] {
        &self.scores
    }

    fn remember(&mut self, page: u64) {
        if self.recent.len() == self.rr_size {
            let old = self.recent.pop_front().expect("non-empty");
            if let Some(c) = self.recent_count.get_mut(&old) {
                *c -= 1;
                if *c == 0 {
                    self.recent_count.remove(&old);
                }
            }
        }
        self.recent.push_back(page);
        *self.recent_count.entry(page).or_insert(0) += 1;
    }

    /// Learns from one trigger access (a miss or the first hit on a
    /// prefetched page) and returns the page to prefetch, if any.
    pub fn on_access(&mut self, page: u64) -> Option<u64> {
        let d = self.offsets[self.test];
        if page >= d && self.recent_count.contains_key(&(page - d)) {
            self.scores[self.test] += 1;
        }
        let mut phase_end = self.scores[self.test] >= BO_SCORE_MAX;
        self.test += 1;
        if self.test == self.offsets.len() {
            self.test = 0;
            self.round += 1;
            if self.round >= BO_ROUND_MAX {
                phase_end = true;
            }
        }
        if phase_end {
            let (idx, &score) = self
                .scores
                .iter()
                .enumerate()
                .fold((0, &0), |acc, (i, s)| if *s > *acc.1 { (i, s) } else { acc });
            self.best = (score > BO_BAD_SCORE).then(|| self.offsets[idx]);
            self.scores.iter_mut().for_each(|s| *s = 0);
            self.test = 0;
            self.round = 0;
            self.phases += 1;
        }
        self.remember(page);
        self.best.map(|d| page + d)
    }
}

#[derive(Debug)]
struct Entry {
    ready_at: Tick,
    dirty: bool,
    prefetched: bool,
    stamp: u64,
    lines: HashMap<u16, [u8; 64]>,
}

/// Page cache in front of the flash, keyed by page number.
#[derive(Debug)]
pub struct DeviceCache {
    capacity: usize,
    policy: ReplacementPolicy,
    entries: HashMap<u64, Entry>,
    order: BTreeMap<u64, u64>,
    clock: u64,
}

impl DeviceCache {
    pub fn new(capacity_pages: usize, policy: ReplacementPolicy) -> Self {
        DeviceCache {
            capacity: capacity_pages,
            policy,
            entries: HashMap::new(),
            order: BTreeMap::new(),
            clock: 0,
        }
    }

    pub fn contains(&self, page: u64) -> bool {
        self.entries.contains_key(&page)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records a use; only LRU reorders on use.
    fn touch(&mut self, page: u64) {
        if self.policy == ReplacementPolicy::Lru {
            let e = self.entries.get_mut(&page).expect("present");
            self.order.remove(&e.stamp);
            self.clock += 1;
            e.stamp = self.clock;
            self.order.insert(self.clock, page);
        }
    }

    fn victim(&self, protect: Option<u64>) -> Option<u64> {
        self.order
            .values()
            .copied()
            .find(|&p| Some(p) != protect)
    }

    /// Makes room for one page. Returns `Err(())` if every resident page is
    /// protected.
    fn make_room(&mut self, protect: Option<u64>) -> Result<Option<(u64, Entry)>, ()> {
        if self.entries.len() < self.capacity {
            return Ok(None);
        }
        let page = self.victim(protect).ok_or(())?;
        let e = self.entries.remove(&page).expect("ordered page is resident");
        self.order.remove(&e.stamp);
        Ok(Some((page, e)))
    }

    fn insert(&mut self, page: u64, mut e: Entry) {
        self.clock += 1;
        e.stamp = self.clock;
        self.order.insert(self.clock, page);
        self.entries.insert(page, e);
    }

    /// Resident pages from next victim to most protected.
    pub fn resident(&self) -> Vec<u64> {
        self.order.values().copied().collect()
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct SsdAccess {
    pub ready: Tick,
    pub hit: bool,
    /// Line contents for reads; `None` means never written (zeros).
    pub data: Option<[u8; 64]>,
}

#[derive(Debug)]
pub struct CxlSsd {
    pub cfg: SsdMediumConfig,
    pub channels: SsdChannels,
    cache: Option<DeviceCache>,
    prefetcher: Option<BestOffset>,
    hit_latency: Tick,
    pages: u64,
    backing: HashMap<u64, HashMap<u16, [u8; 64]>>,
    pub hits: u64,
    pub misses: u64,
    pub prefetch_issued: u64,
    pub prefetch_useful: u64,
    pub writebacks: u64,
}

impl CxlSsd {
    pub fn new(cfg: SsdMediumConfig, hit_latency: Tick, size: u64) -> Self {
        let page = cfg.ssd.page_size;
        CxlSsd {
            channels: SsdChannels::new(&cfg.ssd),
            cache: cfg
                .cache
                .as_ref()
                .map(|c| DeviceCache::new((c.capacity_bytes / page) as usize, c.policy)),
            prefetcher: cfg.prefetch.then(BestOffset::default),
            hit_latency,
            pages: size / page,
            backing: HashMap::new(),
            hits: 0,
            misses: 0,
            prefetch_issued: 0,
            prefetch_useful: 0,
            writebacks: 0,
            cfg,
        }
    }

    pub fn cache(&self) -> Option<&DeviceCache> {
        self.cache.as_ref()
    }

    pub fn prefetcher(&self) -> Option<&BestOffset> {
        self.prefetcher.as_ref()
    }

    fn split(&self, offset: u64) -> (u64, u16) {
        let p = self.cfg.ssd.page_size;
        (offset / p, ((offset % p) / LINE_BYTES) as u16)
    }

    fn write_back(&mut self, now: Tick, page: u64, e: Entry) {
        if e.dirty {
            self.channels.io(now, true);
            self.writebacks += 1;
            self.backing.entry(page).or_default().extend(e.lines);
        }
    }

    fn fill(&mut self, now: Tick, page: u64, protect: Option<u64>, prefetched: bool) -> bool {
        let cache = self.cache.as_mut().expect("cached medium");
        let evicted = match cache.make_room(protect) {
            Ok(v) => v,
            Err(()) => return false,
        };
        if let Some((p, e)) = evicted {
            self.write_back(now, p, e);
        }
        let ready_at = self.channels.io(now, false);
        let lines = self.backing.get(&page).cloned().unwrap_or_default();
        self.cache.as_mut().expect("cached medium").insert(
            page,
            Entry {
                ready_at,
                dirty: false,
                prefetched,
                stamp: 0,
                lines,
            },
        );
        true
    }

    /// One 64 B access at device `offset` arriving at `now`.
    pub fn access(&mut self, now: Tick, offset: u64, write: bool, data: Option<&[u8; 64]>) -> SsdAccess {
        let (page, line) = self.split(offset);
        if self.cache.is_none() {
            return self.access_uncached(now, page, line, write, data);
        }
        let writeback = self.cfg.cache.as_ref().is_some_and(|c| c.writeback);
        let present = self.cache.as_ref().is_some_and(|c| c.contains(page));
        let mut trigger = !present;
        if present {
            self.hits += 1;
            let cache = self.cache.as_mut().expect("cached medium");
            cache.touch(page);
            let e = cache.entries.get_mut(&page).expect("present");
            if e.prefetched {
                e.prefetched = false;
                self.prefetch_useful += 1;
                trigger = true;
            }
        } else {
            self.misses += 1;
            let filled = self.fill(now, page, None, false);
            debug_assert!(filled, "demand fills never find every page protected");
        }

        let e = self
            .cache
            .as_mut()
            .expect("cached medium")
            .entries
            .get_mut(&page)
            .expect("resident after fill");
        let mut ready = now.max(e.ready_at) + self.hit_latency;
        let mut out = None;
        if write {
            if let Some(d) = data {
                e.lines.insert(line, *d);
            }
            if writeback {
                e.dirty = true;
            } else {
                if let Some(d) = data {
                    self.backing.entry(page).or_default().insert(line, *d);
                }
                ready = ready.max(self.channels.io(now, true));
            }
        } else {
            out = e.lines.get(&line).copied();
        }

        if trigger {
            self.prefetch_from(now, page);
        }
        SsdAccess {
            ready,
            hit: present,
            data: out,
        }
    }

    fn prefetch_from(&mut self, now: Tick, page: u64) {
        let Some(bo) = self.prefetcher.as_mut() else {
            return;
        };
        let Some(target) = bo.on_access(page) else {
            return;
        };
        let cached = self.cache.as_ref().is_some_and(|c| c.contains(target));
        if target < self.pages && !cached && self.fill(now, target, Some(page), true) {
            self.prefetch_issued += 1;
        }
    }

    fn access_uncached(
        &mut self,
        now: Tick,
        page: u64,
        line: u16,
        write: bool,
        data: Option<&[u8; 64]>,
    ) -> SsdAccess {
        self.misses += 1;
        let read_done = self.channels.io(now, false);
        if write {
            // Read-modify-write of the whole page.
            if let Some(d) = data {
                self.backing.entry(page).or_default().insert(line, *d);
            }
            let done = self.channels.io(read_done, true);
            SsdAccess {
                ready: done,
                hit: false,
                data: None,
            }
        } else {
            SsdAccess {
                ready: read_done,
                hit: false,
                data: self.backing.get(&page).and_then(|p| p.get(&line)).copied(),
            }
        }
    }
}
