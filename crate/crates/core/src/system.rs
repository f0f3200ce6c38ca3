//! Full-system assembly: injectors, caches, membus routing, local DRAM, the
//! bridge and its links, and CXL devices, all driven by one event engine.
//!
//! Traffic comes from a [`Driver`], which hands each injector its next
//! operation. The system owns all timing; drivers only see completions.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::bridge::{Admission, Bridge, CxlMemPacket, Direction, Link};
use crate::config::{InjectorConfig, SimConfig};
use crate::engine::{Engine, Tick};
use crate::expander::{enumerate, Expander, Medium};
use crate::hdm::{NodeSpace, NumaNode, NumaNodeKind, PlaceError, Policy, Region};
use crate::host::{
    line_of, AddrRange, AddressMap, CacheHierarchy, Lookup, MemCmd, MemPacket, Origin, RequestId,
    Target, LINE_BYTES,
};
use crate::stats::{Histogram, StatsRegistry};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("fault at {at}: {msg}")]
    Fault { at: Tick, msg: String },
    #[error(transparent)]
    Place(#[from] PlaceError),
}

/// One 64 B memory operation from an injector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Op {
    pub addr: u64,
    pub write: bool,
    /// Cached ops go through the hierarchy; uncached ones (non-temporal
    /// stores, device-direct accesses) go straight to memory.
    pub cached: bool,
    /// Opaque to the system; returned on completion.
    pub tag: u64,
}

impl Op {
    pub fn load(addr: u64) -> Self {
        Op {
            addr,
            write: false,
            cached: true,
            tag: 0,
        }
    }

    pub fn store(addr: u64) -> Self {
        Op {
            write: true,
            ..Op::load(addr)
        }
    }

    pub fn uncached(mut self) -> Self {
        self.cached = false;
        self
    }

    pub fn tagged(mut self, tag: u64) -> Self {
        self.tag = tag;
        self
    }
}

pub enum Next {
    Issue(Op),
    /// Sleep until the given absolute time.
    WaitUntil(Tick),
    /// Sleep until one of this injector's ops completes.
    WaitCompletion,
    Done,
}

pub trait Driver {
    fn next(&mut self, inj: usize, now: Tick, outstanding: usize) -> Next;
    fn completed(&mut self, _inj: usize, _op: &Op, _issued: Tick, _now: Tick) {}
}

pub mod stat {
    pub const LOAD_TO_USE: &str = "core.loadToUse";
    pub const LSQ_FULL: &str = "core.lsqFullEvents";
    pub const LOADS: &str = "core.loads";
    pub const STORES: &str = "core.stores";
    pub const L3_MISS_LAT: &str = "l3.overallAvgMissLat";
    pub const RETRIES: &str = "bridge.reqRetryCounts";
    pub const REQ_FIFO: &str = "bridge.reqFifoOccupancy";
    pub const RESP_FIFO: &str = "bridge.respFifoOccupancy";
    pub const M2S: &str = "bridge.m2sPackets";
    pub const S2M: &str = "bridge.s2mPackets";
    pub const CXL_RSP: &str = "cxl.rsp";
    pub const DRAM_QLAT: &str = "dram.avgQLat";
    pub const DRAM_ACC: &str = "dram.avgMemAccLat";
    pub const DRAM_TURN: &str = "dram.turnarounds";
    pub const LINK_TX: &str = "link.txBytes";
    pub const LINK_RX: &str = "link.rxBytes";
    pub const LOCAL_REQS: &str = "membus.localRequests";
    pub const OUTSTANDING: &str = "system.outstandingRequests";
    pub const SSD_HITS: &str = "ssdcache.hits";
    pub const SSD_MISSES: &str = "ssdcache.misses";
    pub const SSD_PF_ISSUED: &str = "ssdcache.prefetchIssued";
    pub const SSD_PF_USEFUL: &str = "ssdcache.prefetchUseful";
    pub const QPS: &str = "aggregateQps";

    /// Rows of the congestion-study table, as flattened report keys.
    pub const CONGESTION: [&str; 10] = [
        "aggregateQps",
        "core.loadToUse::mean",
        "core.loadToUse::stdev",
        "core.loadToUse::0-9",
        "core.loadToUse::min_value",
        "core.loadToUse::max_value",
        "core.lsqFullEvents",
        "l3.overallAvgMissLat",
        "bridge.reqRetryCounts",
        "cxl.rsp::mean",
    ];
}

/// Registers every statistic the system records. Idempotent, so one
/// registry can accumulate several runs.
pub fn register_stats(reg: &mut StatsRegistry, cache_levels: usize) {
    use stat::*;
    let mut ensure = |name: &str, f: &dyn Fn(&mut StatsRegistry, &str)| {
        if !reg.is_registered(name) {
            f(reg, name);
        }
    };
    let counter = |r: &mut StatsRegistry, n: &str| r.register_counter(n).expect("fresh");
    let gauge = |r: &mut StatsRegistry, n: &str| r.register_gauge(n).expect("fresh");
    let average = |r: &mut StatsRegistry, n: &str| r.register_average(n).expect("fresh");
    ensure(LOAD_TO_USE, &|r, n| {
        r.register_histogram(n, Histogram::decades(6)).expect("fresh")
    });
    ensure(CXL_RSP, &|r, n| {
        r.register_histogram(n, Histogram::decades(9)).expect("fresh")
    });
    for n in [
        LSQ_FULL, LOADS, STORES, RETRIES, M2S, S2M, DRAM_TURN, LINK_TX, LINK_RX, LOCAL_REQS,
        SSD_HITS, SSD_MISSES, SSD_PF_ISSUED, SSD_PF_USEFUL,
    ] {
        ensure(n, &counter);
    }
    for n in [REQ_FIFO, RESP_FIFO, OUTSTANDING] {
        ensure(n, &gauge);
    }
    for n in [L3_MISS_LAT, DRAM_QLAT, DRAM_ACC, QPS] {
        ensure(n, &average);
    }
    for level in 1..=cache_levels {
        ensure(&format!("l{level}.hits"), &counter);
        ensure(&format!("l{level}.misses"), &counter);
    }
}

#[derive(Debug)]
enum Ev {
    Wake(usize),
    Done { inj: usize, op: Op, issued: Tick },
    MemArrive(MemPacket),
    BridgeConvert { id: RequestId, dev: usize },
    DeviceArrive { dev: usize, pkt: CxlMemPacket },
    DeviceReady { dev: usize, pkt: CxlMemPacket },
    RespConvert { dev: usize, pkt: CxlMemPacket },
    HostResp(MemPacket),
}

#[derive(Debug, Default)]
struct Injector {
    outstanding: usize,
    pending: Option<Op>,
    sleeping: bool,
    waiting: bool,
    done: bool,
}

#[derive(Debug)]
struct Mshr {
    issued: Tick,
    waiters: Vec<(usize, Op, Tick)>,
}

pub struct System {
    engine: Engine<Ev>,
    host_path_out: Tick,
    host_path_back: Tick,
    cycle_ps: f64,
    lsq_depth: usize,
    think_time: Tick,
    caches: CacheHierarchy,
    map: AddressMap,
    nodes: NodeSpace,
    local: Medium,
    bridge: Bridge,
    bridge_lat: Tick,
    links: Vec<Link>,
    devices: Vec<Expander>,
    dev_out: Vec<VecDeque<CxlMemPacket>>,
    injectors: Vec<Injector>,
    mshr: HashMap<u64, Mshr>,
    direct: HashMap<RequestId, (usize, Op, Tick)>,
    next_id: RequestId,
    writebacks: Vec<u64>,
    stats: StatsRegistry,
    fault: Option<SimError>,
}

impl System {
    pub fn new(cfg: &SimConfig, injectors: &InjectorConfig, mut stats: StatsRegistry) -> Result<Self, SimError> {
        let h = &cfg.host;
        let caches = CacheHierarchy::new(&h.caches).map_err(|e| SimError::Config(e.to_string()))?;
        let mut map = AddressMap::new();
        let local_range = AddrRange {
            base: 0,
            limit: h.local_dram.size_bytes,
            target: Target::LocalDram,
        };
        map.add(local_range)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let mut nodes = vec![NumaNode {
            id: 0,
            kind: NumaNodeKind::DdrLocal,
            base: 0,
            size: h.local_dram.size_bytes,
            distance: 10,
        }];
        let mut devices = Vec::new();
        for (i, dc) in cfg.devices.iter().enumerate() {
            let mut dev = Expander::new(dc.clone());
            let r = enumerate(&mut dev, i, &mut map, h.phys_addr_bits)
                .map_err(|e| SimError::Config(format!("device {i}: {e}")))?;
            nodes.push(NumaNode {
                id: i + 1,
                kind: NumaNodeKind::CxlHdm,
                base: r.base,
                size: r.size(),
                distance: 20,
            });
            devices.push(dev);
        }
        register_stats(&mut stats, h.caches.len());
        let out = h.host_path_lat_ns.half();
        Ok(System {
            engine: Engine::new(),
            host_path_out: out,
            host_path_back: h.host_path_lat_ns - out,
            cycle_ps: h.cycle(),
            lsq_depth: injectors.lsq_depth.max(1) as usize,
            think_time: injectors.think_time_ns,
            caches,
            map,
            nodes: NodeSpace::new(nodes),
            local: Medium::new(&h.local_dram.medium, h.local_dram.access_lat_ns, h.local_dram.size_bytes),
            bridge_lat: cfg.bridge.one_way_lat(),
            links: cfg.devices.iter().map(|_| Link::new(&cfg.bridge)).collect(),
            bridge: Bridge::new(cfg.bridge.clone()),
            dev_out: cfg.devices.iter().map(|_| VecDeque::new()).collect(),
            devices,
            injectors: (0..injectors.count.max(1)).map(|_| Injector::default()).collect(),
            mshr: HashMap::new(),
            direct: HashMap::new(),
            next_id: 1,
            writebacks: Vec::new(),
            stats,
            fault: None,
        })
    }

    pub fn injector_count(&self) -> usize {
        self.injectors.len()
    }

    pub fn address_map(&self) -> &AddressMap {
        &self.map
    }

    pub fn numa_nodes(&self) -> &[NumaNode] {
        self.nodes.nodes()
    }

    pub fn devices(&self) -> &[Expander] {
        &self.devices
    }

    pub fn bridge(&self) -> &Bridge {
        &self.bridge
    }

    pub fn caches(&self) -> &CacheHierarchy {
        &self.caches
    }

    pub fn now(&self) -> Tick {
        self.engine.now()
    }

    pub fn events_fired(&self) -> u64 {
        self.engine.fired()
    }

    /// Places a region of `bytes` over the NUMA nodes.
    pub fn map_region(&mut self, bytes: u64, policy: &Policy) -> Result<Region, SimError> {
        Ok(self.nodes.map(bytes, policy)?)
    }

    pub fn stats(&self) -> &StatsRegistry {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut StatsRegistry {
        &mut self.stats
    }

    fn at(&mut self, when: Tick, ev: Ev) {
        // Only fails after a fault halted the engine, when nothing matters.
        let _ = self.engine.schedule_at(when, ev);
    }

    fn fail(&mut self, msg: impl Into<String>) {
        if self.fault.is_none() {
            self.fault = Some(SimError::Fault {
                at: self.engine.now(),
                msg: msg.into(),
            });
        }
        self.engine.halt();
    }

    fn record(&mut self, name: &str, v: f64) {
        self.stats.record(name, v).expect("registered");
    }

    fn count(&mut self, name: &str, n: u64) {
        self.stats.add(name, n).expect("registered");
    }

    fn gauge(&mut self, name: &str, d: i64) {
        self.stats.gauge(name, d).expect("registered");
    }

    /// Runs until every injector is done and the system has drained.
    /// Returns the time of the last event.
    pub fn run(&mut self, driver: &mut dyn Driver) -> Result<Tick, SimError> {
        let now = self.engine.now();
        for i in 0..self.injectors.len() {
            self.injectors[i].sleeping = true;
            self.at(now, Ev::Wake(i));
        }
        while let Some((_, ev)) = self.engine.pop_until(Tick::MAX) {
            self.dispatch(ev, driver);
        }
        if let Some(f) = self.fault.take() {
            return Err(f);
        }
        let end = self.engine.now();
        self.check_quiesced()?;
        self.fold_component_counters();
        Ok(end)
    }

    fn check_quiesced(&self) -> Result<(), SimError> {
        let fault = |msg: String| SimError::Fault {
            at: self.engine.now(),
            msg,
        };
        if let Some(i) = self.injectors.iter().position(|j| !j.done) {
            return Err(fault(format!("injector {i} stalled before finishing")));
        }
        let (outstanding, _) = self.stats.gauge_value(stat::OUTSTANDING).expect("registered");
        if outstanding != 0 || !self.mshr.is_empty() || !self.direct.is_empty() {
            return Err(fault(format!("{outstanding} requests outstanding at quiesce")));
        }
        if self.bridge.in_flight() != 0 || self.bridge.m2s_sent != self.bridge.s2m_received {
            return Err(fault("bridge not drained at quiesce".into()));
        }
        Ok(())
    }

    fn fold_component_counters(&mut self) {
        let retries = self.bridge.retries;
        let (m2s, s2m) = (self.bridge.m2s_sent, self.bridge.s2m_received);
        self.count(stat::RETRIES, retries);
        self.count(stat::M2S, m2s);
        self.count(stat::S2M, s2m);
        let (tx, rx) = self
            .links
            .iter()
            .fold((0, 0), |(t, r), l| (t + l.tx_bytes, r + l.rx_bytes));
        self.count(stat::LINK_TX, tx);
        self.count(stat::LINK_RX, rx);
        let mut turns = 0;
        let mut ssd = [0u64; 4];
        let media = std::iter::once(&self.local).chain(self.devices.iter().map(|d| &d.medium));
        for m in media {
            match m {
                Medium::Ddr(d) => turns += d.turnarounds,
                Medium::Ssd(s) => {
                    ssd[0] += s.hits;
                    ssd[1] += s.misses;
                    ssd[2] += s.prefetch_issued;
                    ssd[3] += s.prefetch_useful;
                }
                Medium::Coarse(_) => {}
            }
        }
        self.count(stat::DRAM_TURN, turns);
        for (name, v) in [stat::SSD_HITS, stat::SSD_MISSES, stat::SSD_PF_ISSUED, stat::SSD_PF_USEFUL]
            .into_iter()
            .zip(ssd)
        {
            self.count(name, v);
        }
        let levels: Vec<(u64, u64)> = self
            .caches
            .levels()
            .iter()
            .map(|l| (l.hits, l.misses))
            .collect();
        for (i, (h, m)) in levels.into_iter().enumerate() {
            self.count(&format!("l{}.hits", i + 1), h);
            self.count(&format!("l{}.misses", i + 1), m);
        }
    }

    /// Consumes the system, returning its statistics.
    pub fn into_stats(self) -> StatsRegistry {
        self.stats
    }

    fn dispatch(&mut self, ev: Ev, driver: &mut dyn Driver) {
        match ev {
            Ev::Wake(i) => {
                self.injectors[i].sleeping = false;
                self.step(i, driver);
            }
            Ev::Done { inj, op, issued } => self.complete(inj, op, issued, driver),
            Ev::MemArrive(pkt) => self.mem_arrive(pkt),
            Ev::BridgeConvert { id, dev } => self.bridge_convert(id, dev),
            Ev::DeviceArrive { dev, pkt } => self.device_arrive(dev, pkt),
            Ev::DeviceReady { dev, pkt } => {
                self.dev_out[dev].push_back(pkt);
                self.deliver();
            }
            Ev::RespConvert { dev, pkt } => self.resp_convert(dev, pkt),
            Ev::HostResp(pkt) => self.host_resp(pkt, driver),
        }
    }

    fn step(&mut self, i: usize, driver: &mut dyn Driver) {
        let now = self.engine.now();
        loop {
            if self.injectors[i].done || self.engine.is_halted() {
                return;
            }
            let op = match self.injectors[i].pending.take() {
                Some(op) => op,
                None => match driver.next(i, now, self.injectors[i].outstanding) {
                    Next::Issue(op) => op,
                    Next::WaitUntil(t) if t <= now => continue,
                    Next::WaitUntil(t) => {
                        self.injectors[i].sleeping = true;
                        self.at(t, Ev::Wake(i));
                        return;
                    }
                    Next::WaitCompletion => {
                        if self.injectors[i].outstanding == 0 {
                            self.fail(format!("injector {i} waits for completions with none outstanding"));
                        } else {
                            self.injectors[i].waiting = true;
                        }
                        return;
                    }
                    Next::Done => {
                        self.injectors[i].done = true;
                        return;
                    }
                },
            };
            if self.injectors[i].outstanding >= self.lsq_depth {
                self.count(stat::LSQ_FULL, 1);
                self.injectors[i].pending = Some(op);
                return;
            }
            self.issue(i, op);
            if self.think_time > Tick::ZERO {
                self.injectors[i].sleeping = true;
                self.at(now + self.think_time, Ev::Wake(i));
                return;
            }
        }
    }

    fn issue(&mut self, inj: usize, op: Op) {
        let now = self.engine.now();
        self.injectors[inj].outstanding += 1;
        self.count(if op.write { stat::STORES } else { stat::LOADS }, 1);
        let line = line_of(op.addr);
        if !op.cached {
            if op.write {
                self.caches.invalidate(line);
            }
            let cmd = if op.write { MemCmd::WriteReq } else { MemCmd::ReadReq };
            if let Some(id) = self.send(cmd, line, Origin::Injector(inj)) {
                self.direct.insert(id, (inj, op, now));
            }
            return;
        }
        if let Some(m) = self.mshr.get_mut(&line) {
            m.waiters.push((inj, op, now));
            return;
        }
        let mut wbs = std::mem::take(&mut self.writebacks);
        let lookup = self.caches.lookup(line, op.write, &mut wbs);
        for wb in wbs.drain(..) {
            self.send(MemCmd::WriteReq, wb, Origin::Writeback);
        }
        self.writebacks = wbs;
        match lookup {
            Lookup::Hit { latency, .. } => {
                self.at(now + latency, Ev::Done { inj, op, issued: now });
            }
            Lookup::Miss => {
                self.mshr.insert(
                    line,
                    Mshr {
                        issued: now,
                        waiters: vec![(inj, op, now)],
                    },
                );
                self.send(MemCmd::ReadReq, line, Origin::CacheFill);
            }
        }
    }

    /// Puts a packet on the membus toward its target.
    fn send(&mut self, cmd: MemCmd, addr: u64, origin: Origin) -> Option<RequestId> {
        let now = self.engine.now();
        let id = self.next_id;
        self.next_id += 1;
        let pkt = match MemPacket::new(id, cmd, addr, LINE_BYTES as u32, now, origin) {
            Ok(p) => p,
            Err(e) => {
                self.fail(e.to_string());
                return None;
            }
        };
        self.gauge(stat::OUTSTANDING, 1);
        self.at(now + self.host_path_out, Ev::MemArrive(pkt));
        Some(id)
    }

    fn mem_arrive(&mut self, pkt: MemPacket) {
        let now = self.engine.now();
        match self.map.route(pkt.addr) {
            Err(e) => self.fail(e.to_string()),
            Ok(Target::LocalDram) => {
                self.count(stat::LOCAL_REQS, 1);
                let write = pkt.cmd.is_write();
                let ready = match &mut self.local {
                    Medium::Coarse(m) => m.access(now),
                    Medium::Ddr(m) => {
                        let t = m.schedule(now, write);
                        let (qw, acc) = (t.queue_wait, t.ready - now);
                        self.record(stat::DRAM_QLAT, qw.0 as f64);
                        self.record(stat::DRAM_ACC, acc.0 as f64);
                        t.ready
                    }
                    Medium::Ssd(_) => unreachable!("validated: local memory is DRAM"),
                };
                let mut resp = pkt;
                resp.make_response();
                self.at(ready + self.host_path_back, Ev::HostResp(resp));
            }
            Ok(Target::Bridge(dev)) => {
                let id = pkt.id;
                if self.bridge.intercept(pkt) == Admission::Accepted {
                    self.gauge(stat::REQ_FIFO, 1);
                    self.at(now + self.bridge_lat, Ev::BridgeConvert { id, dev });
                }
            }
        }
    }

    fn bridge_convert(&mut self, id: RequestId, dev: usize) {
        let now = self.engine.now();
        let m2s = match self.bridge.to_m2s(id) {
            Ok(p) => p,
            Err(e) => return self.fail(e.to_string()),
        };
        if let Err(e) = self.bridge.downstream_req.push(id) {
            return self.fail(e.to_string());
        }
        let arrive = self.links[dev].transmit(m2s.kind, Direction::Tx, now);
        self.at(arrive, Ev::DeviceArrive { dev, pkt: m2s });
    }

    fn device_arrive(&mut self, dev: usize, pkt: CxlMemPacket) {
        let now = self.engine.now();
        self.bridge.downstream_req.remove(&pkt.id);
        match self.devices[dev].service(now, &pkt) {
            Err(e) => self.fail(format!("device {dev}: {e}")),
            Ok(s) => {
                self.record(stat::CXL_RSP, (s.ready - now).0 as f64);
                if let Some(w) = s.ddr_wait {
                    self.record(stat::DRAM_QLAT, w.0 as f64);
                    self.record(stat::DRAM_ACC, (s.medium_ready - s.medium_start).0 as f64);
                }
                self.at(s.ready, Ev::DeviceReady { dev, pkt: s.response });
            }
        }
    }

    /// Moves device responses onto the RX links while the downstream
    /// response FIFO has room; devices stall otherwise.
    fn deliver(&mut self) {
        let now = self.engine.now();
        for dev in 0..self.dev_out.len() {
            while self.bridge.downstream_resp.has_space() {
                let Some(pkt) = self.dev_out[dev].pop_front() else {
                    break;
                };
                self.bridge.downstream_resp.push(pkt.id).expect("space checked");
                self.gauge(stat::RESP_FIFO, 1);
                let arrive = self.links[dev].transmit(pkt.kind, Direction::Rx, now);
                self.at(arrive + self.bridge_lat, Ev::RespConvert { dev, pkt });
            }
        }
    }

    fn resp_convert(&mut self, _dev: usize, pkt: CxlMemPacket) {
        let now = self.engine.now();
        self.bridge.downstream_resp.remove(&pkt.id);
        self.gauge(stat::RESP_FIFO, -1);
        let host = match self.bridge.from_s2m(&pkt) {
            Ok(h) => h,
            Err(e) => return self.fail(e.to_string()),
        };
        self.gauge(stat::REQ_FIFO, -1);
        if let Err(e) = self.bridge.upstream_resp.push(host.id) {
            return self.fail(e.to_string());
        }
        self.bridge.upstream_resp.pop();
        self.at(now + self.host_path_back, Ev::HostResp(host));
        while let Some(id) = self.bridge.readmit() {
            self.gauge(stat::REQ_FIFO, 1);
            let addr = self.bridge.captured(id).expect("just admitted").addr;
            match self.map.route(addr) {
                Ok(Target::Bridge(dev)) => self.at(now + self.bridge_lat, Ev::BridgeConvert { id, dev }),
                _ => return self.fail(format!("captured packet {id} is not HDM-bound")),
            }
        }
        self.deliver();
    }

    fn host_resp(&mut self, pkt: MemPacket, driver: &mut dyn Driver) {
        let now = self.engine.now();
        self.gauge(stat::OUTSTANDING, -1);
        match pkt.origin {
            Origin::Writeback => {}
            Origin::Injector(_) => {
                if let Some((inj, op, issued)) = self.direct.remove(&pkt.id) {
                    self.complete(inj, op, issued, driver);
                } else {
                    self.fail(format!("response {} matches no request", pkt.id));
                }
            }
            Origin::CacheFill => {
                let line = line_of(pkt.addr);
                let Some(m) = self.mshr.remove(&line) else {
                    return self.fail(format!("fill for {line:#x} matches no MSHR"));
                };
                self.record(stat::L3_MISS_LAT, (now - m.issued).0 as f64);
                let dirty = m.waiters.iter().any(|(_, op, _)| op.write);
                let mut wbs = std::mem::take(&mut self.writebacks);
                self.caches.fill(line, dirty, &mut wbs);
                for wb in wbs.drain(..) {
                    self.send(MemCmd::WriteReq, wb, Origin::Writeback);
                }
                self.writebacks = wbs;
                for (inj, op, issued) in m.waiters {
                    self.complete(inj, op, issued, driver);
                }
            }
        }
    }

    fn complete(&mut self, inj: usize, op: Op, issued: Tick, driver: &mut dyn Driver) {
        let now = self.engine.now();
        if !op.write {
            let cycles = (now - issued).0 as f64 / self.cycle_ps;
            self.record(stat::LOAD_TO_USE, cycles);
        }
        driver.completed(inj, &op, issued, now);
        let st = &mut self.injectors[inj];
        st.outstanding -= 1;
        if st.sleeping || st.done {
            return;
        }
        if st.pending.is_some() || st.waiting {
            st.waiting = false;
            self.step(inj, driver);
        }
    }
}
