use std::collections::VecDeque;

use cxlsim::config::{ConfigError, InjectorConfig, SimConfig};
use cxlsim::engine::Tick;
use cxlsim::hdm::{NumaNodeKind, Policy, PAGE_BYTES};
use cxlsim::host::Target;
use cxlsim::system::{stat, Driver, Next, Op, SimError, System};
use cxlsim::StatsRegistry;

/// Plays a fixed op list from injector 0, one at a time.
struct Script {
    ops: VecDeque<Op>,
    done: Vec<(Op, Tick)>,
}

impl Script {
    fn new(ops: impl IntoIterator<Item = Op>) -> Self {
        Script {
            ops: ops.into_iter().collect(),
            done: Vec::new(),
        }
    }
}

impl Driver for Script {
    fn next(&mut self, inj: usize, _now: Tick, outstanding: usize) -> Next {
        if inj != 0 {
            return Next::Done;
        }
        if outstanding > 0 {
            return Next::WaitCompletion;
        }
        match self.ops.pop_front() {
            Some(op) => Next::Issue(op),
            None => Next::Done,
        }
    }

    fn completed(&mut self, _inj: usize, op: &Op, issued: Tick, now: Tick) {
        self.done.push((*op, now - issued));
    }
}

fn one_injector() -> InjectorConfig {
    InjectorConfig {
        count: 1,
        lsq_depth: 4,
        think_time_ns: Tick::ZERO,
    }
}

fn system(cfg: &SimConfig) -> System {
    System::new(cfg, &one_injector(), StatsRegistry::new()).unwrap()
}

#[test]
fn two_devices_enumerate_into_disjoint_windows() {
    let mut cfg = SimConfig::preset("cxl-dmsim-a").unwrap();
    cfg.devices.push(cfg.devices[0].clone());
    let sys = system(&cfg);

    let nodes = sys.numa_nodes();
    assert_eq!(nodes.len(), 3);
    assert_eq!(nodes[0].kind, NumaNodeKind::DdrLocal);
    for (i, dev) in sys.devices().iter().enumerate() {
        let node = &nodes[i + 1];
        assert_eq!(node.kind, NumaNodeKind::CxlHdm);
        assert_eq!(dev.base(), Some(node.base), "BAR base of device {i}");
        assert_eq!(node.size, cfg.devices[i].hdm_size);
        assert_eq!(node.base % node.size, 0, "window is naturally aligned");
        let map = sys.address_map();
        assert_eq!(map.route(node.base).unwrap(), Target::Bridge(i));
        assert_eq!(map.route(node.base + node.size - 1).unwrap(), Target::Bridge(i));
        assert_eq!(dev.translate(node.base + 64).unwrap(), 64);
        assert!(dev.translate(node.base + node.size).is_err());
    }
    assert!(nodes[1].base + nodes[1].size <= nodes[2].base);
    assert!(nodes[0].size <= nodes[1].base);
}

#[test]
fn uncached_traffic_is_accounted_on_the_link() {
    let cfg = SimConfig::preset("cxl-dmsim-a").unwrap();
    let mut sys = system(&cfg);
    let region = sys.map_region(1 << 20, &Policy::Bind { node: 1 }).unwrap();
    let (reads, writes) = (40u64, 25u64);
    let ops = (0..writes)
        .map(|i| Op::store(region.phys(i * 64)).uncached())
        .chain((0..reads).map(|i| Op::load(region.phys(i * 64)).uncached()));
    let mut script = Script::new(ops);
    sys.run(&mut script).unwrap();

    assert_eq!(script.done.len() as u64, reads + writes);
    let stats = sys.stats();
    assert_eq!(stats.counter(stat::M2S), Some(reads + writes));
    assert_eq!(stats.counter(stat::S2M), Some(reads + writes));
    // Requests: 16 B read headers, 80 B write-with-data. Responses mirror.
    assert_eq!(stats.counter(stat::LINK_TX), Some(reads * 16 + writes * 80));
    assert_eq!(stats.counter(stat::LINK_RX), Some(reads * 80 + writes * 16));
    assert_eq!(stats.counter(stat::LOCAL_REQS), Some(0));
}

#[test]
fn idle_uncached_read_pays_the_full_round_trip() {
    let cfg = SimConfig::preset("cxl-dmsim-a").unwrap();
    let mut local = system(&cfg);
    let lregion = local.map_region(1 << 20, &Policy::Bind { node: 0 }).unwrap();
    let mut s = Script::new([Op::load(lregion.phys(0)).uncached()]);
    local.run(&mut s).unwrap();
    let local_lat = s.done[0].1;

    let mut remote = system(&cfg);
    let rregion = remote.map_region(1 << 20, &Policy::Bind { node: 1 }).unwrap();
    let mut s = Script::new([Op::load(rregion.phys(0)).uncached()]);
    remote.run(&mut s).unwrap();
    let remote_lat = s.done[0].1;

    // The CXL path adds at least both bridge crossings on top of the host path.
    let extra = remote_lat.0 as i64 - local_lat.0 as i64;
    assert!(extra >= 2 * cfg.bridge.one_way_lat().0 as i64, "{local_lat:?} vs {remote_lat:?}");
}

#[test]
fn interleaved_region_spreads_requests_by_weight() {
    let cfg = SimConfig::preset("cxl-dmsim-a").unwrap();
    let mut sys = system(&cfg);
    let pages = 100;
    let policy = Policy::Interleave {
        nodes: vec![0, 1],
        weights: vec![0.3, 0.7],
    };
    let region = sys.map_region(pages * PAGE_BYTES, &policy).unwrap();
    let on_local = region.page_nodes().iter().filter(|&&n| n == 0).count() as u64;
    assert_eq!(on_local, 30);
    let ops = (0..pages).map(|p| Op::load(region.phys(p * PAGE_BYTES)).uncached());
    sys.run(&mut Script::new(ops)).unwrap();
    assert_eq!(sys.stats().counter(stat::LOCAL_REQS), Some(on_local));
    assert_eq!(sys.stats().counter(stat::M2S), Some(pages - on_local));
}

#[test]
fn exhausting_a_node_is_an_error() {
    let cfg = SimConfig::preset("cxl-dmsim-a").unwrap();
    let mut sys = system(&cfg);
    let too_big = cfg.devices[0].hdm_size + PAGE_BYTES;
    let err = sys.map_region(too_big, &Policy::Bind { node: 1 }).unwrap_err();
    assert!(matches!(err, SimError::Place(_)), "{err}");
    // A failed placement leaves the node untouched.
    sys.map_region(cfg.devices[0].hdm_size, &Policy::Bind { node: 1 }).unwrap();
}

#[test]
fn malformed_config_points_at_the_line() {
    let cfg = SimConfig::preset("cxl-dmsim-f").unwrap();
    let text = cfg.to_json();
    let field = format!("\"req_fifo_depth\": {}", cfg.bridge.req_fifo_depth);
    let bad = text.replacen(&field, "\"req_fifo_depth\": -3", 1);
    assert_ne!(bad, text, "fixture must contain the field");
    let line = bad.lines().position(|l| l.contains("-3")).unwrap() + 1;
    match SimConfig::from_json(&bad) {
        Err(ConfigError::Parse { line: l, path, .. }) => {
            assert_eq!(l, line);
            assert_eq!(path, "bridge.req_fifo_depth");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn param_overrides_reach_the_simulation() {
    let cfg = SimConfig::preset("cxl-dmsim-a").unwrap();
    let slow = cfg.with_param("bridge.bridge_lat_ns", 150.0).unwrap();
    let lat = |c: &SimConfig| {
        let mut sys = system(c);
        let r = sys.map_region(1 << 20, &Policy::Bind { node: 1 }).unwrap();
        let mut s = Script::new([Op::load(r.phys(0)).uncached()]);
        sys.run(&mut s).unwrap();
        s.done[0].1
    };
    let delta = lat(&slow).0 - lat(&cfg).0;
    // 100 ns more per crossing, two crossings.
    assert_eq!(delta, Tick::from_ns(200).0);
}
