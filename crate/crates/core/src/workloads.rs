//! Characterization workloads: dependent-load latency sweep, STREAM kernels,
//! an open-loop read/write-ratio bandwidth sweep, a gather-heavy DLRM proxy
//! and a key-value proxy for SSD-backed devices.
//!
//! Every workload builds fresh systems per measurement point and folds their
//! statistics into one registry, then returns a table (`curve.csv`) and a
//! JSON summary.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{InjectorConfig, SimConfig, KB, MB};
use crate::engine::Tick;
use crate::hdm::{Policy, Region};
use crate::host::{line_of, LINE_BYTES};
use crate::stats::{RunReport, StatsRegistry};
use crate::system::{stat, Driver, Next, Op, SimError, System};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSpec {
    LatencySweep(LatencySweepSpec),
    Stream(StreamSpec),
    RdwrSweep(RdWrSweepSpec),
    DlrmProxy(DlrmProxySpec),
    KvProxy(KvProxySpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySweepSpec {
    pub array_sizes: Vec<u64>,
    pub stride: u64,
    /// Measured loads per size, after one warm-up walk.
    pub samples: u64,
    pub placement: Policy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKernel {
    Copy,
    Scale,
    Add,
    Triad,
}

impl StreamKernel {
    pub const ALL: [StreamKernel; 4] = [
        StreamKernel::Copy,
        StreamKernel::Scale,
        StreamKernel::Add,
        StreamKernel::Triad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StreamKernel::Copy => "copy",
            StreamKernel::Scale => "scale",
            StreamKernel::Add => "add",
            StreamKernel::Triad => "triad",
        }
    }

    /// Per element: arrays read, then the array written (a = 0, b = 1, c = 2).
    pub fn pattern(self) -> (&'static [usize], usize) {
        match self {
            StreamKernel::Copy => (&[0], 2),
            StreamKernel::Scale => (&[2], 1),
            StreamKernel::Add => (&[0, 1], 2),
            StreamKernel::Triad => (&[1, 2], 0),
        }
    }

    pub fn read_fraction(self) -> f64 {
        let (reads, _) = self.pattern();
        reads.len() as f64 / (reads.len() + 1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub kernels: Vec<StreamKernel>,
    pub array_bytes: u64,
    pub injectors: u32,
    /// Outstanding line requests per injector.
    pub mlp: u32,
    pub placement: Policy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdWrSweepSpec {
    pub read_fractions: Vec<f64>,
    /// Offered load per point, GB/s (bytes per ns).
    pub rates_gbps: Vec<f64>,
    pub footprint: u64,
    /// Requests per grid point.
    pub requests: u64,
    pub injectors: u32,
    pub lsq_depth: u32,
    pub placement: Policy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DlrmProxySpec {
    pub injectors: u32,
    pub lsq_depth: u32,
    /// Embedding-table bytes; rows are one cache line.
    pub footprint: u64,
    pub lookups_per_query: u32,
    /// Loads to a small, cache-resident dense-feature buffer.
    pub hot_loads_per_query: u32,
    pub queries_per_injector: u64,
    pub placement: Policy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KvProxySpec {
    pub keys: u64,
    pub value_bytes: u64,
    /// Fraction of operations that are gets; the rest are puts.
    pub get_fraction: f64,
    /// The hot set is the lowest `hot_key_fraction` of the key range and
    /// receives `hot_access_fraction` of the operations.
    pub hot_key_fraction: f64,
    pub hot_access_fraction: f64,
    pub injectors: u32,
    pub lsq_depth: u32,
    pub ops_per_injector: u64,
    /// Operations per injector excluded from the throughput window.
    pub warmup_ops_per_injector: u64,
    pub placement: Policy,
}

impl Default for KvProxySpec {
    fn default() -> Self {
        KvProxySpec {
            keys: 16 * 1024,
            value_bytes: KB,
            get_fraction: 0.95,
            hot_key_fraction: 0.01,
            hot_access_fraction: 0.995,
            injectors: 16,
            lsq_depth: 16,
            ops_per_injector: 8000,
            warmup_ops_per_injector: 2000,
            placement: Policy::Bind { node: 1 },
        }
    }
}

impl KvProxySpec {
    pub fn working_set_bytes(&self) -> u64 {
        self.keys * self.value_bytes
    }
}

impl Default for StreamSpec {
    fn default() -> Self {
        StreamSpec {
            kernels: StreamKernel::ALL.to_vec(),
            array_bytes: 64 * MB,
            injectors: 8,
            mlp: 8,
            placement: Policy::Bind { node: 1 },
        }
    }
}

impl Default for RdWrSweepSpec {
    fn default() -> Self {
        RdWrSweepSpec {
            read_fractions: (0..=10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
            rates_gbps: vec![4.0, 8.0, 12.0, 16.0, 1000.0],
            footprint: 64 * MB,
            requests: 20_000,
            injectors: 16,
            lsq_depth: 16,
            placement: Policy::Bind { node: 1 },
        }
    }
}

impl Default for DlrmProxySpec {
    fn default() -> Self {
        DlrmProxySpec {
            injectors: 12,
            lsq_depth: 8,
            footprint: 256 * MB,
            lookups_per_query: 16,
            hot_loads_per_query: 24,
            queries_per_injector: 400,
            placement: Policy::Bind { node: 1 },
        }
    }
}

type FieldError = (String, String);

fn field(name: &str, msg: impl Into<String>) -> FieldError {
    (name.to_string(), msg.into())
}

impl WorkloadSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            WorkloadSpec::LatencySweep(_) => "latency_sweep",
            WorkloadSpec::Stream(_) => "stream",
            WorkloadSpec::RdwrSweep(_) => "rdwr_sweep",
            WorkloadSpec::DlrmProxy(_) => "dlrm_proxy",
            WorkloadSpec::KvProxy(_) => "kv_proxy",
        }
    }

    pub fn placement(&self) -> &Policy {
        match self {
            WorkloadSpec::LatencySweep(s) => &s.placement,
            WorkloadSpec::Stream(s) => &s.placement,
            WorkloadSpec::RdwrSweep(s) => &s.placement,
            WorkloadSpec::DlrmProxy(s) => &s.placement,
            WorkloadSpec::KvProxy(s) => &s.placement,
        }
    }

    pub fn validate(&self, cfg: &SimConfig) -> Result<(), FieldError> {
        self.placement()
            .validate(cfg.node_count())
            .map_err(|m| field("placement", m))?;
        let positive = |name: &str, v: u64| {
            if v == 0 {
                Err(field(name, "must be >= 1"))
            } else {
                Ok(())
            }
        };
        match self {
            WorkloadSpec::LatencySweep(s) => {
                if s.stride < LINE_BYTES || s.stride % LINE_BYTES != 0 {
                    return Err(field("stride", "must be a multiple of 64 and >= 64"));
                }
                if s.array_sizes.is_empty() {
                    return Err(field("array_sizes", "must not be empty"));
                }
                if s.array_sizes.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(field("array_sizes", "must be strictly ascending"));
                }
                if s.array_sizes[0] < s.stride {
                    return Err(field("array_sizes", "every size must hold at least one stride"));
                }
                positive("samples", s.samples)?;
            }
            WorkloadSpec::Stream(s) => {
                if s.kernels.is_empty() {
                    return Err(field("kernels", "must not be empty"));
                }
                if s.array_bytes < 8 * cfg.host.llc_bytes() {
                    return Err(field("array_bytes", "must be at least 8x the last-level cache"));
                }
                positive("injectors", s.injectors as u64)?;
                positive("mlp", s.mlp as u64)?;
            }
            WorkloadSpec::RdwrSweep(s) => {
                if s.read_fractions.is_empty()
                    || s.read_fractions.iter().any(|r| !(0.0..=1.0).contains(r))
                {
                    return Err(field("read_fractions", "must be non-empty and within [0, 1]"));
                }
                if s.rates_gbps.is_empty() || s.rates_gbps.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                    return Err(field("rates_gbps", "must be non-empty and positive"));
                }
                if s.footprint < LINE_BYTES {
                    return Err(field("footprint", "must hold at least one line"));
                }
                positive("requests", s.requests)?;
                positive("injectors", s.injectors as u64)?;
                positive("lsq_depth", s.lsq_depth as u64)?;
            }
            WorkloadSpec::DlrmProxy(s) => {
                if s.footprint < 4 * cfg.host.llc_bytes() {
                    return Err(field("footprint", "must be at least 4x the last-level cache"));
                }
                positive("injectors", s.injectors as u64)?;
                positive("lsq_depth", s.lsq_depth as u64)?;
                positive("lookups_per_query", s.lookups_per_query as u64)?;
                positive("queries_per_injector", s.queries_per_injector)?;
            }
            WorkloadSpec::KvProxy(s) => {
                if s.value_bytes < LINE_BYTES || s.value_bytes % LINE_BYTES != 0 {
                    return Err(field("value_bytes", "must be a multiple of 64"));
                }
                positive("keys", s.keys)?;
                for (n, v) in [
                    ("get_fraction", s.get_fraction),
                    ("hot_key_fraction", s.hot_key_fraction),
                    ("hot_access_fraction", s.hot_access_fraction),
                ] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(field(n, "must be within [0, 1]"));
                    }
                }
                positive("injectors", s.injectors as u64)?;
                positive("lsq_depth", s.lsq_depth as u64)?;
                if s.warmup_ops_per_injector >= s.ops_per_injector {
                    return Err(field("warmup_ops_per_injector", "must be below ops_per_injector"));
                }
            }
        }
        Ok(())
    }
}

/// Plot-ready table written as `curve.csv`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r[i].parse().ok()).collect()
    }
}

pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{}", (v * 1e6).round() / 1e6)
    } else {
        "nan".into()
    }
}

#[derive(Debug)]
pub struct WorkloadOutput {
    pub table: Table,
    pub summary: serde_json::Value,
    pub sim_time: Tick,
    pub stats: StatsRegistry,
}

impl WorkloadOutput {
    /// Scalar results used as one aggregated row per sweep point.
    pub fn headline(&self) -> Vec<(String, f64)> {
        let get = |k: &str| self.summary.get(k).and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
        match self.table.header[0].as_str() {
            "array_bytes" => vec![("plateau_ns".into(), get("plateau_ns"))],
            "kernel" => self
                .table
                .rows
                .iter()
                .map(|r| (format!("{}_gbps", r[0]), r[1].parse().unwrap_or(f64::NAN)))
                .collect(),
            "read_fraction" => {
                let bw = self.table.column("bandwidth_gbps").unwrap_or_default();
                vec![("peak_gbps".into(), bw.into_iter().fold(0.0, f64::max))]
            }
            "injectors" => vec![
                ("qps".into(), get("qps")),
                ("qps_per_injector".into(), get("qps_per_injector")),
            ],
            _ => vec![("ops_per_sec".into(), get("ops_per_sec"))],
        }
    }

    pub fn report(&self, cfg: &SimConfig) -> RunReport {
        RunReport {
            config_digest: cfg.digest(),
            seed: cfg.seed,
            workload: cfg.workload.kind().to_string(),
            sim_time_ps: self.sim_time.0,
            stats: self.stats.flatten(),
            outputs: self.summary.clone(),
        }
    }
}

/// Runs the configured workload.
pub fn run(cfg: &SimConfig) -> Result<WorkloadOutput, SimError> {
    cfg.validate().map_err(|e| SimError::Config(e.to_string()))?;
    match &cfg.workload {
        WorkloadSpec::LatencySweep(s) => run_latency_sweep(cfg, s),
        WorkloadSpec::Stream(s) => run_stream(cfg, s),
        WorkloadSpec::RdwrSweep(s) => run_rdwr_sweep(cfg, s),
        WorkloadSpec::DlrmProxy(s) => run_dlrm_proxy(cfg, s),
        WorkloadSpec::KvProxy(s) => run_kv_proxy(cfg, s),
    }
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Sattolo's algorithm: a uniformly random permutation that is one cycle.
/// `next[i]` is the element visited after `i`.
pub fn sattolo_cycle(n: usize, rng: &mut impl Rng) -> Vec<u32> {
    let mut p: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        p.swap(i, j);
    }
    p
}

fn injectors(count: u32, lsq_depth: u32) -> InjectorConfig {
    InjectorConfig {
        count,
        lsq_depth,
        think_time_ns: Tick::ZERO,
    }
}

/// Tracks completions and the time window between two completion marks so
/// ramp-up and drain are excluded from rate measurements.
#[derive(Debug, Default)]
struct Window {
    lo: u64,
    hi: u64,
    done: u64,
    t_lo: Option<Tick>,
    t_hi: Option<Tick>,
    lat_sum: u128,
    lat_n: u64,
}

impl Window {
    fn new(total: u64) -> Self {
        Window {
            lo: total / 10,
            hi: total - total / 10,
            ..Default::default()
        }
    }

    fn complete(&mut self, now: Tick, latency: Tick) {
        self.done += 1;
        if self.done == self.lo.max(1) {
            self.t_lo = Some(now);
        }
        if self.done > self.lo && self.done <= self.hi {
            self.lat_sum += latency.0 as u128;
            self.lat_n += 1;
        }
        if self.done == self.hi {
            self.t_hi = Some(now);
        }
    }

    /// Completions per ns inside the window.
    fn rate(&self) -> f64 {
        match (self.t_lo, self.t_hi) {
            (Some(a), Some(b)) if b > a => (self.hi - self.lo.max(1)) as f64 / (b - a).as_ns(),
            _ => 0.0,
        }
    }

    fn mean_latency_ns(&self) -> f64 {
        if self.lat_n == 0 {
            0.0
        } else {
            self.lat_sum as f64 / self.lat_n as f64 / 1000.0
        }
    }
}

// ---------------------------------------------------------------- latency

struct ChaseDriver<'a> {
    next: Vec<u32>,
    cur: u32,
    region: &'a Region,
    stride: u64,
    warmup: u64,
    total: u64,
    issued: u64,
    sum: Tick,
    measured: u64,
}

impl Driver for ChaseDriver<'_> {
    fn next(&mut self, _inj: usize, _now: Tick, outstanding: usize) -> Next {
        if outstanding > 0 {
            return Next::WaitCompletion;
        }
        if self.issued == self.total {
            return Next::Done;
        }
        let addr = line_of(self.region.phys(self.cur as u64 * self.stride));
        self.cur = self.next[self.cur as usize];
        self.issued += 1;
        Next::Issue(Op::load(addr).tagged(self.issued))
    }

    fn completed(&mut self, _inj: usize, op: &Op, issued: Tick, now: Tick) {
        if op.tag > self.warmup {
            self.sum += now - issued;
            self.measured += 1;
        }
    }
}

/// Mean dependent-load latency (ns) for one array size.
pub fn chase_point(
    cfg: &SimConfig,
    size: u64,
    stride: u64,
    samples: u64,
    placement: &Policy,
    stats: StatsRegistry,
) -> Result<(f64, Tick, StatsRegistry), SimError> {
    let mut sys = System::new(cfg, &injectors(1, 1), stats)?;
    let region = sys.map_region(size, placement)?;
    let n = (size / stride) as usize;
    let mut rng = rng_for(cfg.seed, size);
    let next = sattolo_cycle(n, &mut rng);
    let warmup = (n as u64).min(1 << 18);
    let mut d = ChaseDriver {
        next,
        cur: 0,
        region: &region,
        stride,
        warmup,
        total: warmup + samples,
        issued: 0,
        sum: Tick::ZERO,
        measured: 0,
    };
    let end = sys.run(&mut d)?;
    let mean = d.sum.as_ns() / d.measured.max(1) as f64;
    Ok((mean, end, sys.into_stats()))
}

pub fn run_latency_sweep(cfg: &SimConfig, spec: &LatencySweepSpec) -> Result<WorkloadOutput, SimError> {
    let mut stats = StatsRegistry::new();
    let mut table = Table::new(&["array_bytes", "ns_per_load"]);
    let mut points = Vec::new();
    let mut sim = Tick::ZERO;
    for &size in &spec.array_sizes {
        let (ns, t, s) = chase_point(cfg, size, spec.stride, spec.samples, &spec.placement, stats)?;
        stats = s;
        sim += t;
        table.push(vec![size.to_string(), num(ns)]);
        points.push(serde_json::json!({ "array_bytes": size, "ns_per_load": num(ns).parse::<f64>().unwrap_or(0.0) }));
    }
    let plateau = table.column("ns_per_load").and_then(|c| c.last().copied()).unwrap_or(0.0);
    Ok(WorkloadOutput {
        table,
        summary: serde_json::json!({ "points": points, "plateau_ns": plateau }),
        sim_time: sim,
        stats,
    })
}

// ----------------------------------------------------------------- stream

struct StreamDriver<'a> {
    arrays: [&'a Region; 3],
    reads: &'static [usize],
    write: usize,
    cursor: Vec<(u64, usize)>,
    end: Vec<u64>,
    window: Window,
    bytes_issued: u64,
}

impl Driver for StreamDriver<'_> {
    fn next(&mut self, inj: usize, _now: Tick, _outstanding: usize) -> Next {
        let (line, step) = self.cursor[inj];
        if line >= self.end[inj] {
            return Next::Done;
        }
        let offset = line * LINE_BYTES;
        let op = if step < self.reads.len() {
            Op::load(self.arrays[self.reads[step]].phys(offset))
        } else {
            Op::store(self.arrays[self.write].phys(offset)).uncached()
        };
        self.cursor[inj] = if step == self.reads.len() {
            (line + 1, 0)
        } else {
            (line, step + 1)
        };
        self.bytes_issued += LINE_BYTES;
        Next::Issue(op)
    }

    fn completed(&mut self, _inj: usize, _op: &Op, issued: Tick, now: Tick) {
        self.window.complete(now, now - issued);
    }
}

/// Sustained bandwidth (GB/s) of one kernel.
pub fn stream_point(
    cfg: &SimConfig,
    spec: &StreamSpec,
    kernel: StreamKernel,
    stats: StatsRegistry,
) -> Result<(f64, Tick, StatsRegistry), SimError> {
    let mut sys = System::new(cfg, &injectors(spec.injectors, spec.mlp), stats)?;
    let a = sys.map_region(spec.array_bytes, &spec.placement)?;
    let b = sys.map_region(spec.array_bytes, &spec.placement)?;
    let c = sys.map_region(spec.array_bytes, &spec.placement)?;
    let lines = spec.array_bytes / LINE_BYTES;
    let n = spec.injectors as u64;
    let (reads, write) = kernel.pattern();
    let total_ops = lines * (reads.len() as u64 + 1);
    let mut d = StreamDriver {
        arrays: [&a, &b, &c],
        reads,
        write,
        cursor: (0..n).map(|i| (i * lines / n, 0)).collect(),
        end: (0..n).map(|i| (i + 1) * lines / n).collect(),
        window: Window::new(total_ops),
        bytes_issued: 0,
    };
    let end = sys.run(&mut d)?;
    debug_assert_eq!(d.bytes_issued, total_ops * LINE_BYTES);
    let gbps = d.window.rate() * LINE_BYTES as f64;
    Ok((gbps, end, sys.into_stats()))
}

pub fn run_stream(cfg: &SimConfig, spec: &StreamSpec) -> Result<WorkloadOutput, SimError> {
    let mut stats = StatsRegistry::new();
    let mut table = Table::new(&["kernel", "bandwidth_gbps", "read_fraction"]);
    let mut summary = serde_json::Map::new();
    let mut sim = Tick::ZERO;
    for &k in &spec.kernels {
        let (gbps, t, s) = stream_point(cfg, spec, k, stats)?;
        stats = s;
        sim += t;
        table.push(vec![k.name().into(), num(gbps), num(k.read_fraction())]);
        summary.insert(k.name().into(), serde_json::json!(num(gbps).parse::<f64>().unwrap_or(0.0)));
    }
    Ok(WorkloadOutput {
        table,
        summary: serde_json::json!({ "bandwidth_gbps": summary }),
        sim_time: sim,
        stats,
    })
}

// ------------------------------------------------------------------ rd/wr

struct RdWrDriver<'a> {
    region: &'a Region,
    lines: u64,
    read_fraction: f64,
    interval: Tick,
    next_at: Vec<Tick>,
    left: Vec<u64>,
    rngs: Vec<ChaCha8Rng>,
    window: Window,
}

impl Driver for RdWrDriver<'_> {
    fn next(&mut self, inj: usize, now: Tick, _outstanding: usize) -> Next {
        if self.left[inj] == 0 {
            return Next::Done;
        }
        if now < self.next_at[inj] {
            return Next::WaitUntil(self.next_at[inj]);
        }
        self.left[inj] -= 1;
        self.next_at[inj] += self.interval;
        let rng = &mut self.rngs[inj];
        let line = rng.gen_range(0..self.lines);
        let write = rng.gen::<f64>() >= self.read_fraction;
        let addr = self.region.phys(line * LINE_BYTES);
        let op = if write { Op::store(addr) } else { Op::load(addr) };
        Next::Issue(op.uncached())
    }

    fn completed(&mut self, _inj: usize, _op: &Op, issued: Tick, now: Tick) {
        self.window.complete(now, now - issued);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdWrPoint {
    pub read_fraction: f64,
    pub rate_gbps: f64,
    pub bandwidth_gbps: f64,
    pub latency_ns: f64,
}

pub fn rdwr_point(
    cfg: &SimConfig,
    spec: &RdWrSweepSpec,
    read_fraction: f64,
    rate_gbps: f64,
    stats: StatsRegistry,
) -> Result<(RdWrPoint, Tick, StatsRegistry), SimError> {
    let mut sys = System::new(cfg, &injectors(spec.injectors, spec.lsq_depth), stats)?;
    let region = sys.map_region(spec.footprint, &spec.placement)?;
    let n = spec.injectors as u64;
    // Each injector offers rate / n; one line every 64 n / rate ns.
    let interval = Tick::from_ns_f64(LINE_BYTES as f64 * n as f64 / rate_gbps).max(Tick(1));
    let salt = (read_fraction * 1e6) as u64 ^ ((rate_gbps * 1e3) as u64).rotate_left(32);
    let mut d = RdWrDriver {
        region: &region,
        lines: spec.footprint / LINE_BYTES,
        read_fraction,
        interval,
        next_at: (0..n).map(|i| Tick(interval.0 * i / n)).collect(),
        left: (0..n).map(|i| (i + 1) * spec.requests / n - i * spec.requests / n).collect(),
        rngs: (0..n).map(|i| rng_for(cfg.seed ^ salt, i + 1)).collect(),
        window: Window::new(spec.requests),
    };
    let end = sys.run(&mut d)?;
    let point = RdWrPoint {
        read_fraction,
        rate_gbps,
        bandwidth_gbps: d.window.rate() * LINE_BYTES as f64,
        latency_ns: d.window.mean_latency_ns(),
    };
    Ok((point, end, sys.into_stats()))
}

/// Peak bandwidth per read fraction, in grid order.
pub fn rdwr_peaks(points: &[RdWrPoint], fractions: &[f64]) -> Vec<(f64, f64)> {
    fractions
        .iter()
        .map(|&r| {
            let peak = points
                .iter()
                .filter(|p| p.read_fraction == r)
                .map(|p| p.bandwidth_gbps)
                .fold(0.0, f64::max);
            (r, peak)
        })
        .collect()
}

pub fn run_rdwr_sweep(cfg: &SimConfig, spec: &RdWrSweepSpec) -> Result<WorkloadOutput, SimError> {
    let mut stats = StatsRegistry::new();
    let mut table = Table::new(&["read_fraction", "rate_gbps", "bandwidth_gbps", "latency_ns"]);
    let mut points = Vec::new();
    let mut sim = Tick::ZERO;
    for &r in &spec.read_fractions {
        for &rate in &spec.rates_gbps {
            let (p, t, s) = rdwr_point(cfg, spec, r, rate, stats)?;
            stats = s;
            sim += t;
            table.push(vec![num(r), num(rate), num(p.bandwidth_gbps), num(p.latency_ns)]);
            points.push(p);
        }
    }
    let peaks = rdwr_peaks(&points, &spec.read_fractions);
    let argmax = peaks
        .iter()
        .fold((0.0, f64::MIN), |best, &(r, bw)| if bw > best.1 { (r, bw) } else { best })
        .0;
    let summary = serde_json::json!({
        "peaks": peaks.iter().map(|&(r, bw)| serde_json::json!({
            "read_fraction": num(r).parse::<f64>().unwrap_or(r),
            "peak_gbps": num(bw).parse::<f64>().unwrap_or(0.0),
        })).collect::<Vec<_>>(),
        "argmax_read_fraction": num(argmax).parse::<f64>().unwrap_or(argmax),
    });
    Ok(WorkloadOutput {
        table,
        summary,
        sim_time: sim,
        stats,
    })
}

// ----------------------------------------------------------- transactions

/// Generates the ops of one transaction (query, get or put) for an injector.
trait TxnSource {
    fn fill(&mut self, inj: usize, ops: &mut VecDeque<Op>);
}

/// Issues transactions back to back; a transaction ends when all of its ops
/// have completed.
struct TxnDriver<S> {
    source: S,
    queue: Vec<VecDeque<Op>>,
    started: Vec<bool>,
    left: Vec<u64>,
    warmup_total: u64,
    done_total: u64,
    t_warm: Option<Tick>,
    t_end: Tick,
}

impl<S: TxnSource> TxnDriver<S> {
    fn new(source: S, injectors: usize, per_injector: u64, warmup_per_injector: u64) -> Self {
        TxnDriver {
            source,
            queue: (0..injectors).map(|_| VecDeque::new()).collect(),
            started: vec![false; injectors],
            left: vec![per_injector; injectors],
            warmup_total: warmup_per_injector * injectors as u64,
            done_total: 0,
            t_warm: None,
            t_end: Tick::ZERO,
        }
    }

    /// Transactions per second after warm-up.
    fn rate(&self) -> f64 {
        let measured = self.done_total - self.warmup_total;
        match self.t_warm {
            Some(t0) if self.t_end > t0 => measured as f64 / (self.t_end - t0).as_ns() * 1e9,
            _ => 0.0,
        }
    }
}

impl<S: TxnSource> Driver for TxnDriver<S> {
    fn next(&mut self, inj: usize, now: Tick, outstanding: usize) -> Next {
        if let Some(op) = self.queue[inj].pop_front() {
            return Next::Issue(op);
        }
        if outstanding > 0 {
            return Next::WaitCompletion;
        }
        if self.started[inj] {
            self.started[inj] = false;
            self.left[inj] -= 1;
            self.done_total += 1;
            self.t_end = now;
            if self.done_total == self.warmup_total.max(1) && self.t_warm.is_none() {
                self.t_warm = Some(now);
            }
        }
        if self.left[inj] == 0 {
            return Next::Done;
        }
        self.source.fill(inj, &mut self.queue[inj]);
        self.started[inj] = true;
        match self.queue[inj].pop_front() {
            Some(op) => Next::Issue(op),
            None => Next::WaitUntil(now),
        }
    }
}

struct DlrmSource<'a> {
    table: &'a Region,
    hot: &'a Region,
    rows: u64,
    hot_lines: u64,
    lookups: u32,
    hot_loads: u32,
    rngs: Vec<ChaCha8Rng>,
}

impl TxnSource for DlrmSource<'_> {
    fn fill(&mut self, inj: usize, ops: &mut VecDeque<Op>) {
        let rng = &mut self.rngs[inj];
        for _ in 0..self.lookups {
            let row = rng.gen_range(0..self.rows);
            ops.push_back(Op::load(self.table.phys(row * LINE_BYTES)));
        }
        for _ in 0..self.hot_loads {
            let l = rng.gen_range(0..self.hot_lines);
            ops.push_back(Op::load(self.hot.phys(l * LINE_BYTES)));
        }
    }
}

pub fn run_dlrm_proxy(cfg: &SimConfig, spec: &DlrmProxySpec) -> Result<WorkloadOutput, SimError> {
    let mut sys = System::new(cfg, &injectors(spec.injectors, spec.lsq_depth), StatsRegistry::new())?;
    let table_region = sys.map_region(spec.footprint, &spec.placement)?;
    let hot_bytes = 8 * KB;
    let hot = sys.map_region(hot_bytes, &Policy::Bind { node: 0 })?;
    let n = spec.injectors as usize;
    let source = DlrmSource {
        table: &table_region,
        hot: &hot,
        rows: spec.footprint / LINE_BYTES,
        hot_lines: hot_bytes / LINE_BYTES,
        lookups: spec.lookups_per_query,
        hot_loads: spec.hot_loads_per_query,
        rngs: (0..n as u64).map(|i| rng_for(cfg.seed, 0xd1 + i)).collect(),
    };
    let warm = spec.queries_per_injector / 10;
    let mut d = TxnDriver::new(source, n, spec.queries_per_injector, warm);
    let end = sys.run(&mut d)?;
    let qps = d.rate();
    sys.stats_mut().record(stat::QPS, qps).expect("registered");
    let mut table = Table::new(&["injectors", "qps", "qps_per_injector"]);
    table.push(vec![n.to_string(), num(qps), num(qps / n as f64)]);
    Ok(WorkloadOutput {
        table,
        summary: serde_json::json!({
            "injectors": n,
            "qps": qps.round(),
            "qps_per_injector": (qps / n as f64).round(),
        }),
        sim_time: end,
        stats: sys.into_stats(),
    })
}

struct KvSource<'a> {
    region: &'a Region,
    spec: &'a KvProxySpec,
    hot_keys: u64,
    rngs: Vec<ChaCha8Rng>,
}

impl TxnSource for KvSource<'_> {
    fn fill(&mut self, inj: usize, ops: &mut VecDeque<Op>) {
        let s = self.spec;
        let rng = &mut self.rngs[inj];
        let key = if self.hot_keys > 0 && rng.gen::<f64>() < s.hot_access_fraction {
            rng.gen_range(0..self.hot_keys)
        } else if self.hot_keys < s.keys {
            rng.gen_range(self.hot_keys..s.keys)
        } else {
            rng.gen_range(0..s.keys)
        };
        let write = rng.gen::<f64>() >= s.get_fraction;
        let base = key * s.value_bytes;
        for l in 0..s.value_bytes / LINE_BYTES {
            let addr = self.region.phys(base + l * LINE_BYTES);
            let op = if write { Op::store(addr) } else { Op::load(addr) };
            ops.push_back(op.uncached());
        }
    }
}

pub fn run_kv_proxy(cfg: &SimConfig, spec: &KvProxySpec) -> Result<WorkloadOutput, SimError> {
    let mut sys = System::new(cfg, &injectors(spec.injectors, spec.lsq_depth), StatsRegistry::new())?;
    let region = sys.map_region(spec.working_set_bytes(), &spec.placement)?;
    let n = spec.injectors as usize;
    let source = KvSource {
        region: &region,
        spec,
        hot_keys: (spec.keys as f64 * spec.hot_key_fraction).round() as u64,
        rngs: (0..n as u64).map(|i| rng_for(cfg.seed, 0x4b + i)).collect(),
    };
    let mut d = TxnDriver::new(source, n, spec.ops_per_injector, spec.warmup_ops_per_injector);
    let end = sys.run(&mut d)?;
    let ops = d.rate();
    sys.stats_mut().record(stat::QPS, ops).expect("registered");
    let mut table = Table::new(&["ops_per_sec"]);
    table.push(vec![num(ops)]);
    Ok(WorkloadOutput {
        table,
        summary: serde_json::json!({ "ops_per_sec": ops.round() }),
        sim_time: end,
        stats: sys.into_stats(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sattolo_is_a_single_cycle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 3, 17, 1000] {
            let next = sattolo_cycle(n, &mut rng);
            let mut seen = vec![false; n];
            let mut cur = 0usize;
            for _ in 0..n {
                assert!(!seen[cur]);
                seen[cur] = true;
                cur = next[cur] as usize;
            }
            assert_eq!(cur, 0);
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn kernel_read_fractions() {
        assert_eq!(StreamKernel::Add.read_fraction(), 2.0 / 3.0);
        assert_eq!(StreamKernel::Triad.read_fraction(), 2.0 / 3.0);
        assert_eq!(StreamKernel::Copy.read_fraction(), 0.5);
        assert_eq!(StreamKernel::Scale.read_fraction(), 0.5);
    }

    #[test]
    fn table_csv_has_header_row() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), num(0.5)]);
        assert_eq!(t.to_csv(), "a,b\n1,0.5\n");
        assert_eq!(t.column("b"), Some(vec![0.5]));
    }

    #[test]
    fn window_excludes_ramp() {
        let mut w = Window::new(100);
        for i in 1..=100u64 {
            w.complete(Tick::from_ns(i * 10), Tick::from_ns(5));
        }
        // 80 completions between t = 100 ns and t = 900 ns.
        assert!((w.rate() - 0.1).abs() < 1e-12);
        assert_eq!(w.mean_latency_ns(), 5.0);
    }
}
