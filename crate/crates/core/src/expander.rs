//! CXL Type-3 memory expander: configuration space with a BAR, a CXL.mem
//! controller that translates host addresses, and the backend media.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{CxlMemKind, CxlMemPacket};
use crate::engine::Tick;
use crate::host::{AddrMapError, AddrRange, AddressMap, Target, LINE_BYTES};
use crate::ssd::{CxlSsd, SsdMediumConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueuedDdrConfig {
    #[serde(with = "crate::config::ns")]
    pub read_service_ns: Tick,
    #[serde(with = "crate::config::ns")]
    pub write_service_ns: Tick,
    #[serde(with = "crate::config::ns")]
    pub turnaround_penalty_ns: Tick,
    pub queue_capacity: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MediumConfig {
    /// Fixed access latency with at most `pipeline_width` accesses in flight.
    CoarseDram { pipeline_width: u32 },
    QueuedDdr(QueuedDdrConfig),
    Ssd(SsdMediumConfig),
}

impl MediumConfig {
    pub fn validate(&self, access_lat: Tick) -> Result<(), String> {
        match self {
            MediumConfig::CoarseDram { pipeline_width } => {
                if *pipeline_width == 0 {
                    return Err("pipeline_width must be >= 1".into());
                }
            }
            MediumConfig::QueuedDdr(d) => {
                if d.write_service_ns < d.read_service_ns {
                    return Err("write_service_ns must be >= read_service_ns".into());
                }
                if d.read_service_ns == Tick::ZERO {
                    return Err("read_service_ns must be positive".into());
                }
                if d.read_service_ns > access_lat {
                    return Err("read_service_ns exceeds the medium access latency".into());
                }
                if d.queue_capacity == 0 {
                    return Err("queue_capacity must be >= 1".into());
                }
            }
            MediumConfig::Ssd(s) => s.validate()?,
        }
        Ok(())
    }

    /// Unloaded latency of one read at the medium.
    pub fn idle_read_latency(&self, access_lat: Tick) -> Tick {
        match self {
            MediumConfig::Ssd(s) if s.cache.is_none() => s.ssd.read_latency_ns,
            _ => access_lat,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CxlDeviceConfig {
    pub hdm_size: u64,
    #[serde(with = "crate::config::ns")]
    pub device_proto_proc_lat_ns: Tick,
    /// DRAM access latency, or the device-cache hit latency for SSD media.
    #[serde(with = "crate::config::ns")]
    pub medium_access_lat_ns: Tick,
    pub medium: MediumConfig,
}

impl CxlDeviceConfig {
    pub fn validate(&self) -> Result<(), (String, String)> {
        if self.hdm_size == 0 || !self.hdm_size.is_power_of_two() || self.hdm_size < 4096 {
            return Err((
                "hdm_size".into(),
                "must be a power of two of at least 4096 bytes".into(),
            ));
        }
        self.medium
            .validate(self.medium_access_lat_ns)
            .map_err(|m| ("medium".to_string(), m))?;
        if let MediumConfig::Ssd(s) = &self.medium {
            if !self.hdm_size.is_multiple_of(s.ssd.page_size) {
                return Err(("hdm_size".into(), "must be a multiple of the SSD page size".into()));
            }
        }
        Ok(())
    }
}

/// Fixed-latency medium with a bounded number of overlapping accesses.
#[derive(Debug)]
pub struct CoarseDram {
    latency: Tick,
    slots: BinaryHeap<Reverse<Tick>>,
}

impl CoarseDram {
    pub fn new(latency: Tick, width: u32) -> Self {
        CoarseDram {
            latency,
            slots: (0..width).map(|_| Reverse(Tick::ZERO)).collect(),
        }
    }

    /// Completion time of an access arriving at `now`.
    pub fn access(&mut self, now: Tick) -> Tick {
        let Reverse(free) = self.slots.pop().expect("width >= 1");
        let done = now.max(free) + self.latency;
        self.slots.push(Reverse(done));
        done
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DdrTiming {
    /// Time spent waiting before service began.
    pub queue_wait: Tick,
    pub start: Tick,
    /// Bus released.
    pub finish: Tick,
    /// Data available at the controller.
    pub ready: Tick,
}

/// Single FIFO server over a shared read/write bus. Each op occupies the bus
/// for its service time, plus a turnaround penalty when its direction
/// differs from the previous op's. A fixed pipeline delay (access latency
/// minus read service) is added after the bus so that an idle read takes
/// exactly the configured access latency.
#[derive(Debug)]
pub struct QueuedDdr {
    cfg: QueuedDdrConfig,
    pipeline: Tick,
    free_at: Tick,
    last_write: Option<bool>,
    // Start times of admitted ops that had not started as of the last call.
    waiting: VecDeque<Tick>,
    pub ops: u64,
    pub turnarounds: u64,
    pub backpressure_stalls: u64,
    pub busy: Tick,
}

impl QueuedDdr {
    pub fn new(cfg: QueuedDdrConfig, access_lat: Tick) -> Self {
        QueuedDdr {
            pipeline: access_lat.saturating_sub(cfg.read_service_ns),
            cfg,
            free_at: Tick::ZERO,
            last_write: None,
            waiting: VecDeque::new(),
            ops: 0,
            turnarounds: 0,
            backpressure_stalls: 0,
            busy: Tick::ZERO,
        }
    }

    pub fn config(&self) -> &QueuedDdrConfig {
        &self.cfg
    }

    /// Schedules one 64 B op arriving at `now`. Calls must be made in
    /// non-decreasing `now` order.
    pub fn schedule(&mut self, now: Tick, write: bool) -> DdrTiming {
        while self.waiting.front().is_some_and(|&s| s <= now) {
            self.waiting.pop_front();
        }
        if self.waiting.len() >= self.cfg.queue_capacity as usize {
            // Queue full: the controller holds the op until a slot opens.
            // Service order is unchanged, so only the counter records it.
            self.backpressure_stalls += 1;
        }
        let start = now.max(self.free_at);
        let mut service = if write {
            self.cfg.write_service_ns
        } else {
            self.cfg.read_service_ns
        };
        if self.last_write.is_some_and(|w| w != write) {
            service += self.cfg.turnaround_penalty_ns;
            self.turnarounds += 1;
        }
        self.last_write = Some(write);
        let finish = start + service;
        self.free_at = finish;
        self.busy += service;
        self.ops += 1;
        if start > now {
            self.waiting.push_back(start);
        }
        DdrTiming {
            queue_wait: start - now,
            start,
            finish,
            ready: finish + self.pipeline,
        }
    }
}

#[derive(Debug)]
pub enum Medium {
    Coarse(CoarseDram),
    Ddr(QueuedDdr),
    Ssd(Box<CxlSsd>),
}

impl Medium {
    pub fn new(cfg: &MediumConfig, access_lat: Tick, size: u64) -> Self {
        match cfg {
            MediumConfig::CoarseDram { pipeline_width } => {
                Medium::Coarse(CoarseDram::new(access_lat, *pipeline_width))
            }
            MediumConfig::QueuedDdr(d) => Medium::Ddr(QueuedDdr::new(d.clone(), access_lat)),
            MediumConfig::Ssd(s) => Medium::Ssd(Box::new(CxlSsd::new(s.clone(), access_lat, size))),
        }
    }
}

#[derive(Debug)]
struct Bar {
    size: u64,
    reg: u64,
    programmed: bool,
}

/// PCI-style configuration space holding 64-bit memory BARs.
#[derive(Debug)]
pub struct ConfigSpace {
    pub vendor_id: u16,
    pub device_id: u16,
    bars: Vec<Bar>,
}

impl ConfigSpace {
    pub fn new(vendor_id: u16, device_id: u16, bar_sizes: &[u64]) -> Self {
        assert!(bar_sizes.iter().all(|s| s.is_power_of_two()));
        ConfigSpace {
            vendor_id,
            device_id,
            bars: bar_sizes
                .iter()
                .map(|&size| Bar {
                    size,
                    reg: 0,
                    programmed: false,
                })
                .collect(),
        }
    }

    pub fn read_bar(&self, i: usize) -> u64 {
        self.bars[i].reg
    }

    /// Address bits below the BAR size are hard-wired to zero, so writing
    /// all ones reads back as the size mask.
    pub fn write_bar(&mut self, i: usize, value: u64) {
        let bar = &mut self.bars[i];
        bar.reg = value & !(bar.size - 1);
        bar.programmed = value != u64::MAX;
    }

    pub fn bar_base(&self, i: usize) -> Option<u64> {
        let bar = &self.bars[i];
        bar.programmed.then_some(bar.reg)
    }

    pub fn bar_count(&self) -> usize {
        self.bars.len()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeviceFault {
    #[error("address {addr:#x} is outside the device HDM window")]
    OutOfRange { addr: u64 },
    #[error("device BAR is not programmed")]
    NotEnumerated,
    #[error("{0:?} is not a request")]
    NotARequest(CxlMemKind),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnumerationError {
    #[error("device BAR already holds base {0:#x}")]
    AlreadyEnumerated(u64),
    #[error(transparent)]
    AddressSpace(#[from] AddrMapError),
    #[error("BAR readback {got:#x} differs from programmed base {want:#x}")]
    Readback { want: u64, got: u64 },
}

/// Result of servicing one CXL.mem request.
#[derive(Debug)]
pub struct Serviced {
    pub response: CxlMemPacket,
    /// Response ready to leave the device.
    pub ready: Tick,
    /// Medium access window (after the controller's protocol processing).
    pub medium_start: Tick,
    pub medium_ready: Tick,
    /// Queueing at a `QueuedDdr` medium, when present.
    pub ddr_wait: Option<Tick>,
}

pub struct Expander {
    pub config: CxlDeviceConfig,
    pub cfg_space: ConfigSpace,
    pub medium: Medium,
    store: HashMap<u64, [u8; 64]>,
    pub serviced: u64,
}

impl std::fmt::Debug for Expander {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Expander")
            .field("config", &self.config)
            .field("cfg_space", &self.cfg_space)
            .field("serviced", &self.serviced)
            .finish()
    }
}

impl Expander {
    pub fn new(config: CxlDeviceConfig) -> Self {
        Expander {
            cfg_space: ConfigSpace::new(0x1e98, 0x0003, &[config.hdm_size]),
            medium: Medium::new(&config.medium, config.medium_access_lat_ns, config.hdm_size),
            config,
            store: HashMap::new(),
            serviced: 0,
        }
    }

    pub fn base(&self) -> Option<u64> {
        self.cfg_space.bar_base(0)
    }

    pub fn translate(&self, addr: u64) -> Result<u64, DeviceFault> {
        let base = self.base().ok_or(DeviceFault::NotEnumerated)?;
        if addr < base || addr - base >= self.config.hdm_size {
            return Err(DeviceFault::OutOfRange { addr });
        }
        Ok(addr - base)
    }

    /// Services a request arriving at the device at `now`: protocol
    /// processing, medium access, then protocol processing of the response.
    pub fn service(&mut self, now: Tick, pkt: &CxlMemPacket) -> Result<Serviced, DeviceFault> {
        if !pkt.kind.is_request() {
            return Err(DeviceFault::NotARequest(pkt.kind));
        }
        let offset = self.translate(pkt.addr)?;
        let write = pkt.kind == CxlMemKind::M2SRwD;
        let proto = self.config.device_proto_proc_lat_ns;
        let medium_start = now + proto;
        let mut response = pkt.reply().expect("request has a reply");
        let mut ddr_wait = None;
        let medium_ready = match &mut self.medium {
            Medium::Coarse(m) => m.access(medium_start),
            Medium::Ddr(m) => {
                let t = m.schedule(medium_start, write);
                ddr_wait = Some(t.queue_wait);
                t.ready
            }
            Medium::Ssd(m) => {
                let access = m.access(medium_start, offset, write, pkt.data.as_deref());
                response.data = access.data.map(Box::new);
                access.ready
            }
        };
        if !matches!(self.medium, Medium::Ssd(_)) {
            let line = offset / LINE_BYTES;
            if write {
                if let Some(d) = &pkt.data {
                    self.store.insert(line, **d);
                }
            } else if let Some(d) = self.store.get(&line) {
                response.data = Some(Box::new(*d));
            }
        }
        self.serviced += 1;
        Ok(Serviced {
            response,
            ready: medium_ready + proto,
            medium_start,
            medium_ready,
            ddr_wait,
        })
    }
}

/// Discovers the BAR size with the all-ones probe, carves a window above the
/// existing ranges and programs the base.
pub fn enumerate(
    dev: &mut Expander,
    index: usize,
    map: &mut AddressMap,
    phys_addr_bits: u32,
) -> Result<AddrRange, EnumerationError> {
    if let Some(base) = dev.base() {
        return Err(EnumerationError::AlreadyEnumerated(base));
    }
    dev.cfg_space.write_bar(0, u64::MAX);
    let mask = dev.cfg_space.read_bar(0);
    let size = (!mask).wrapping_add(1);
    let base = map.next_free_base(size, size)?;
    let top = if phys_addr_bits >= 64 {
        u64::MAX
    } else {
        1u64 << phys_addr_bits
    };
    if base.checked_add(size).is_none_or(|end| end > top) {
        return Err(AddrMapError::Exhausted { size, align: size }.into());
    }
    dev.cfg_space.write_bar(0, base);
    let got = dev.cfg_space.read_bar(0);
    if got != base {
        return Err(EnumerationError::Readback { want: base, got });
    }
    let range = AddrRange {
        base,
        limit: base + size,
        target: Target::Bridge(index),
    };
    map.add(range)?;
    Ok(range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GB;

    fn dev(size: u64, proto: u64, medium: MediumConfig) -> Expander {
        Expander::new(CxlDeviceConfig {
            hdm_size: size,
            device_proto_proc_lat_ns: Tick::from_ns(proto),
            medium_access_lat_ns: Tick::from_ns(50),
            medium,
        })
    }

    fn coarse() -> MediumConfig {
        MediumConfig::CoarseDram { pipeline_width: 4 }
    }

    fn ddr(r: f64, w: f64, t: f64) -> QueuedDdr {
        QueuedDdr::new(
            QueuedDdrConfig {
                read_service_ns: Tick::from_ns_f64(r),
                write_service_ns: Tick::from_ns_f64(w),
                turnaround_penalty_ns: Tick::from_ns_f64(t),
                queue_capacity: 16,
            },
            Tick::from_ns(50),
        )
    }

    fn local_map() -> AddressMap {
        let mut m = AddressMap::new();
        m.add(AddrRange {
            base: 0,
            limit: 32 * GB,
            target: Target::LocalDram,
        })
        .unwrap();
        m
    }

    #[test]
    fn bar_sizing_probe_masks_low_bits() {
        let mut cs = ConfigSpace::new(1, 2, &[16 * GB]);
        cs.write_bar(0, u64::MAX);
        let v = cs.read_bar(0);
        assert_eq!(v & ((1 << 34) - 1), 0);
        assert_eq!(v >> 34, u64::MAX >> 34);
        assert_eq!(cs.bar_base(0), None);
    }

    #[test]
    fn enumeration_maps_one_window() {
        let mut map = local_map();
        let mut d = dev(64 * GB, 15, coarse());
        let r = enumerate(&mut d, 0, &mut map, 48).unwrap();
        assert_eq!(r.size(), 64 * GB);
        assert_eq!(d.base(), Some(r.base));
        assert_eq!(r.base % (64 * GB), 0);
        assert_eq!(map.route(r.base), Ok(Target::Bridge(0)));
        assert!(matches!(
            enumerate(&mut d, 0, &mut map, 48),
            Err(EnumerationError::AlreadyEnumerated(_))
        ));
    }

    #[test]
    fn two_devices_get_disjoint_routable_ranges() {
        let mut map = local_map();
        let mut a = dev(16 * GB, 60, coarse());
        let mut b = dev(64 * GB, 15, coarse());
        let ra = enumerate(&mut a, 0, &mut map, 48).unwrap();
        let rb = enumerate(&mut b, 1, &mut map, 48).unwrap();
        assert!(ra.limit <= rb.base || rb.limit <= ra.base);
        assert_eq!(map.route(ra.base + 64), Ok(Target::Bridge(0)));
        assert_eq!(map.route(rb.limit - 64), Ok(Target::Bridge(1)));
    }

    #[test]
    fn enumeration_fails_without_address_space() {
        let mut map = local_map();
        let mut d = dev(64 * GB, 15, coarse());
        assert!(matches!(
            enumerate(&mut d, 0, &mut map, 36),
            Err(EnumerationError::AddressSpace(AddrMapError::Exhausted { .. }))
        ));
    }

    #[test]
    fn translate_bounds() {
        let mut map = local_map();
        let mut d = dev(16 * GB, 15, coarse());
        assert_eq!(d.translate(0), Err(DeviceFault::NotEnumerated));
        let r = enumerate(&mut d, 0, &mut map, 48).unwrap();
        assert_eq!(d.translate(r.base), Ok(0));
        assert_eq!(d.translate(r.base + 0x40), Ok(0x40));
        assert_eq!(
            d.translate(r.base + 16 * GB),
            Err(DeviceFault::OutOfRange {
                addr: r.base + 16 * GB
            })
        );
    }

    #[test]
    fn idle_coarse_service_is_proto_plus_medium() {
        let mut map = local_map();
        let mut d = dev(64 * GB, 15, coarse());
        let r = enumerate(&mut d, 0, &mut map, 48).unwrap();
        let pkt = CxlMemPacket::new(CxlMemKind::M2SReq, 1, r.base);
        let s = d.service(Tick(0), &pkt).unwrap();
        assert_eq!(s.medium_ready - Tick(0), Tick::from_ns(65));
        assert_eq!(s.ready, Tick::from_ns(80));
        assert_eq!(s.response.kind, CxlMemKind::S2MDRS);
        assert_eq!(s.response.id, 1);
    }

    #[test]
    fn fpga_asic_device_gap_is_twice_proto_difference() {
        let mut map = local_map();
        let mut f = dev(16 * GB, 60, coarse());
        let mut a = dev(64 * GB, 15, coarse());
        let rf = enumerate(&mut f, 0, &mut map, 48).unwrap();
        let ra = enumerate(&mut a, 1, &mut map, 48).unwrap();
        let tf = f.service(Tick(0), &CxlMemPacket::new(CxlMemKind::M2SReq, 1, rf.base)).unwrap();
        let ta = a.service(Tick(0), &CxlMemPacket::new(CxlMemKind::M2SReq, 2, ra.base)).unwrap();
        assert_eq!(tf.ready - ta.ready, Tick::from_ns(90));
    }

    #[test]
    fn write_then_read_returns_written_bytes() {
        let mut map = local_map();
        let mut d = dev(16 * GB, 15, coarse());
        let r = enumerate(&mut d, 0, &mut map, 48).unwrap();
        let mut w = CxlMemPacket::new(CxlMemKind::M2SRwD, 1, r.base + 128);
        let bytes: [u8; 64] = std::array::from_fn(|i| i as u8 ^ 0x5a);
        w.data = Some(Box::new(bytes));
        let s = d.service(Tick(0), &w).unwrap();
        assert_eq!(s.response.kind, CxlMemKind::S2MNDR);
        let rd = d
            .service(Tick(1000), &CxlMemPacket::new(CxlMemKind::M2SReq, 2, r.base + 128))
            .unwrap();
        assert_eq!(rd.response.data.as_deref(), Some(&bytes));
        let untouched = d
            .service(Tick(2000), &CxlMemPacket::new(CxlMemKind::M2SReq, 3, r.base))
            .unwrap();
        assert_eq!(untouched.response.data, None);
    }

    #[test]
    fn responses_are_rejected_as_requests() {
        let mut d = dev(16 * GB, 15, coarse());
        let pkt = CxlMemPacket::new(CxlMemKind::S2MDRS, 1, 0);
        assert!(matches!(d.service(Tick(0), &pkt), Err(DeviceFault::NotARequest(_))));
    }

    #[test]
    fn coarse_pipeline_width_caps_parallelism() {
        let mut m = CoarseDram::new(Tick::from_ns(50), 2);
        let done: Vec<Tick> = (0..4).map(|_| m.access(Tick(0))).collect();
        assert_eq!(
            done,
            vec![Tick::from_ns(50), Tick::from_ns(50), Tick::from_ns(100), Tick::from_ns(100)]
        );
    }

    #[test]
    fn all_reads_incur_no_turnaround() {
        let mut m = ddr(13.0, 15.0, 8.0);
        for _ in 0..100 {
            m.schedule(Tick(0), false);
        }
        assert_eq!(m.turnarounds, 0);
    }

    #[test]
    fn alternating_stream_switches_at_every_boundary() {
        let mut m = ddr(13.0, 15.0, 8.0);
        let n = 50;
        for i in 0..2 * n {
            m.schedule(Tick(0), i % 2 == 1);
        }
        assert_eq!(m.turnarounds, 2 * n - 1);
    }

    #[test]
    fn idle_read_takes_access_latency() {
        let mut m = ddr(4.1, 4.5, 1.2);
        let t = m.schedule(Tick::from_ns(10), false);
        assert_eq!(t.ready, Tick::from_ns(60));
        assert_eq!(t.queue_wait, Tick::ZERO);
    }

    #[test]
    fn saturated_single_direction_throughput() {
        for (write, service) in [(false, 13.0), (true, 15.0)] {
            let mut m = ddr(13.0, 15.0, 8.0);
            let n = 10_000u64;
            let mut last = Tick::ZERO;
            for _ in 0..n {
                last = m.schedule(Tick(0), write).finish;
            }
            let bytes_per_ns = (n * 64) as f64 / last.as_ns();
            let expect = 64.0 / service;
            assert!((bytes_per_ns / expect - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn queue_wait_accumulates_under_load() {
        let mut m = ddr(10.0, 10.0, 0.0);
        let waits: Vec<Tick> = (0..3).map(|_| m.schedule(Tick(0), false).queue_wait).collect();
        assert_eq!(waits, vec![Tick(0), Tick::from_ns(10), Tick::from_ns(20)]);
    }
}
