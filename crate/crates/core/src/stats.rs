//! Named statistics registry and run reports.
//!
//! Names follow a dotted vocabulary (`core.loadToUse`, `bridge.reqRetryCounts`,
//! `cxl.rsp`, `dram.avgQLat`, ...). Every statistic is registered up front
//! with its kind; recording into an unknown name is an error so typos fail at
//! startup instead of silently producing empty columns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("statistic `{0}` is not registered")]
    Unregistered(String),
    #[error("statistic `{name}` is a {actual}, not a {expected}")]
    KindMismatch {
        name: String,
        expected: &'static str,
        actual: &'static str,
    },
    #[error("statistic `{0}` registered twice")]
    Duplicate(String),
}

/// Streaming histogram with fixed bucket edges and Welford moments.
///
/// Bucket `i` covers `[edges[i], edges[i + 1])`; the final bucket is
/// unbounded above. Samples below `edges[0]` land in bucket 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
    samples: u64,
    min: f64,
    max: f64,
    mean: f64,
    m2: f64,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Self {
        assert!(!edges.is_empty(), "histogram needs at least one edge");
        assert!(edges.windows(2).all(|w| w[0] < w[1]), "edges must ascend");
        let n = edges.len();
        Histogram {
            edges,
            counts: vec![0; n],
            samples: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            mean: 0.0,
            m2: 0.0,
        }
    }

    /// Decade buckets `0-9, 10-99, 100-999, ...` up to `10^decades`.
    pub fn decades(decades: u32) -> Self {
        let mut edges = vec![0.0];
        edges.extend((1..=decades).map(|d| 10f64.powi(d as i32)));
        Histogram::new(edges)
    }

    pub fn record(&mut self, x: f64) {
        let idx = self.edges.iter().rposition(|&e| x >= e).unwrap_or(0);
        self.counts[idx] += 1;
        self.samples += 1;
        self.min = self.min.min(x);
        self.max = self.max.max(x);
        let delta = x - self.mean;
        self.mean += delta / self.samples as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn mean(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.mean
        }
    }

    /// Population standard deviation.
    pub fn stdev(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            (self.m2 / self.samples as f64).max(0.0).sqrt()
        }
    }

    pub fn min(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.min
        }
    }

    pub fn max(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.max
        }
    }

    /// Fraction of samples in bucket `i`.
    pub fn bucket_fraction(&self, i: usize) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.counts[i] as f64 / self.samples as f64
        }
    }

    /// Bucket-resolution percentile (`p` in `[0, 100]`), linearly
    /// interpolated inside a bucket and clamped to the observed range.
    pub fn percentile(&self, p: f64) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        let p = p.clamp(0.0, 100.0);
        let target = p / 100.0 * self.samples as f64;
        let mut seen = 0.0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let next = seen + c as f64;
            if target <= next {
                let lo = self.edges[i].max(self.min);
                let hi = self.edges.get(i + 1).copied().unwrap_or(self.max).min(self.max);
                let frac = ((target - seen) / c as f64).clamp(0.0, 1.0);
                return (lo + frac * (hi - lo)).clamp(self.min, self.max);
            }
            seen = next;
        }
        self.max
    }

    fn bucket_label(&self, i: usize) -> String {
        match self.edges.get(i + 1) {
            Some(hi) => format!("{}-{}", self.edges[i], hi - 1.0),
            None => format!("{}+", self.edges[i]),
        }
    }
}

/// Running mean without buckets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Average {
    sum: f64,
    samples: u64,
}

impl Average {
    pub fn record(&mut self, x: f64) {
        self.sum += x;
        self.samples += 1;
    }

    pub fn mean(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.sum / self.samples as f64
        }
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Stat {
    Counter(u64),
    Gauge { value: i64, max: i64 },
    Average(Average),
    Histogram(Histogram),
}

impl Stat {
    fn kind(&self) -> &'static str {
        match self {
            Stat::Counter(_) => "counter",
            Stat::Gauge { .. } => "gauge",
            Stat::Average(_) => "average",
            Stat::Histogram(_) => "histogram",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct StatsRegistry {
    stats: BTreeMap<String, Stat>,
}

impl StatsRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn register(&mut self, name: &str, stat: Stat) -> Result<(), StatsError> {
        if self.stats.contains_key(name) {
            return Err(StatsError::Duplicate(name.to_string()));
        }
        self.stats.insert(name.to_string(), stat);
        Ok(())
    }

    pub fn register_counter(&mut self, name: &str) -> Result<(), StatsError> {
        self.register(name, Stat::Counter(0))
    }

    pub fn register_gauge(&mut self, name: &str) -> Result<(), StatsError> {
        self.register(name, Stat::Gauge { value: 0, max: 0 })
    }

    pub fn register_average(&mut self, name: &str) -> Result<(), StatsError> {
        self.register(name, Stat::Average(Average::default()))
    }

    pub fn register_histogram(&mut self, name: &str, hist: Histogram) -> Result<(), StatsError> {
        self.register(name, Stat::Histogram(hist))
    }

    pub fn is_registered(&self, name: &str) -> bool {
        self.stats.contains_key(name)
    }

    fn get_mut(&mut self, name: &str) -> Result<&mut Stat, StatsError> {
        self.stats
            .get_mut(name)
            .ok_or_else(|| StatsError::Unregistered(name.to_string()))
    }

    fn mismatch(name: &str, expected: &'static str, actual: &'static str) -> StatsError {
        StatsError::KindMismatch {
            name: name.to_string(),
            expected,
            actual,
        }
    }

    pub fn add(&mut self, name: &str, n: u64) -> Result<(), StatsError> {
        match self.get_mut(name)? {
            Stat::Counter(v) => {
                *v += n;
                Ok(())
            }
            other => Err(Self::mismatch(name, "counter", other.kind())),
        }
    }

    pub fn inc(&mut self, name: &str) -> Result<(), StatsError> {
        self.add(name, 1)
    }

    /// Adjusts a gauge by `delta` and tracks its high-water mark.
    pub fn gauge(&mut self, name: &str, delta: i64) -> Result<(), StatsError> {
        match self.get_mut(name)? {
            Stat::Gauge { value, max } => {
                *value += delta;
                *max = (*max).max(*value);
                Ok(())
            }
            other => Err(Self::mismatch(name, "gauge", other.kind())),
        }
    }

    /// Folds `sample` into an average or histogram.
    pub fn record(&mut self, name: &str, sample: f64) -> Result<(), StatsError> {
        match self.get_mut(name)? {
            Stat::Average(a) => {
                a.record(sample);
                Ok(())
            }
            Stat::Histogram(h) => {
                h.record(sample);
                Ok(())
            }
            other => Err(Self::mismatch(name, "average or histogram", other.kind())),
        }
    }

    pub fn counter(&self, name: &str) -> Option<u64> {
        match self.stats.get(name)? {
            Stat::Counter(v) => Some(*v),
            _ => None,
        }
    }

    pub fn gauge_value(&self, name: &str) -> Option<(i64, i64)> {
        match self.stats.get(name)? {
            Stat::Gauge { value, max } => Some((*value, *max)),
            _ => None,
        }
    }

    pub fn average(&self, name: &str) -> Option<&Average> {
        match self.stats.get(name)? {
            Stat::Average(a) => Some(a),
            _ => None,
        }
    }

    pub fn histogram(&self, name: &str) -> Option<&Histogram> {
        match self.stats.get(name)? {
            Stat::Histogram(h) => Some(h),
            _ => None,
        }
    }

    /// Flattens every statistic into `name[::field] -> value`.
    pub fn flatten(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (name, stat) in &self.stats {
            match stat {
                Stat::Counter(v) => {
                    out.insert(name.clone(), *v as f64);
                }
                Stat::Gauge { value, max } => {
                    out.insert(name.clone(), *value as f64);
                    out.insert(format!("{name}::max"), *max as f64);
                }
                Stat::Average(a) => {
                    out.insert(name.clone(), a.mean());
                    out.insert(format!("{name}::samples"), a.samples() as f64);
                }
                Stat::Histogram(h) => {
                    out.insert(format!("{name}::mean"), h.mean());
                    out.insert(format!("{name}::stdev"), h.stdev());
                    out.insert(format!("{name}::min_value"), h.min());
                    out.insert(format!("{name}::max_value"), h.max());
                    out.insert(format!("{name}::samples"), h.samples() as f64);
                    for i in 0..h.counts().len() {
                        out.insert(format!("{name}::{}", h.bucket_label(i)), h.bucket_fraction(i));
                    }
                }
            }
        }
        out
    }
}

/// Immutable end-of-run record. Serialized with sorted keys so identical
/// runs produce byte-identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_digest: String,
    pub seed: u64,
    pub workload: String,
    pub sim_time_ps: u64,
    pub stats: BTreeMap<String, f64>,
    pub outputs: serde_json::Value,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        // serde_json::Value objects are BTreeMap-backed without the
        // preserve_order feature, so nested key order is stable too.
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn stat(&self, name: &str) -> Option<f64> {
        self.stats.get(name).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_min_max_of_two_samples() {
        let mut h = Histogram::decades(3);
        h.record(2.0);
        h.record(4.0);
        assert_eq!(h.mean(), 3.0);
        assert_eq!(h.min(), 2.0);
        assert_eq!(h.max(), 4.0);
    }

    #[test]
    fn identical_samples_have_zero_stdev() {
        let mut h = Histogram::decades(3);
        for _ in 0..1000 {
            h.record(7.25);
        }
        assert_eq!(h.stdev(), 0.0);
        assert_eq!(h.mean(), 7.25);
    }

    #[test]
    fn decade_buckets() {
        let mut h = Histogram::decades(4);
        h.record(5.0);
        h.record(50.0);
        assert_eq!(&h.counts()[..2], &[1, 1]);
        assert_eq!(h.counts().iter().sum::<u64>(), h.samples());
        assert_eq!(h.bucket_label(0), "0-9");
    }

    #[test]
    fn unregistered_and_wrong_kind_fail() {
        let mut reg = StatsRegistry::new();
        assert_eq!(reg.inc("nope"), Err(StatsError::Unregistered("nope".into())));
        reg.register_average("dram.avgQLat").unwrap();
        assert!(matches!(reg.inc("dram.avgQLat"), Err(StatsError::KindMismatch { .. })));
        assert!(matches!(reg.register_counter("dram.avgQLat"), Err(StatsError::Duplicate(_))));
    }

    #[test]
    fn gauge_tracks_high_water_mark() {
        let mut reg = StatsRegistry::new();
        reg.register_gauge("bridge.reqFifoOccupancy").unwrap();
        reg.gauge("bridge.reqFifoOccupancy", 3).unwrap();
        reg.gauge("bridge.reqFifoOccupancy", -2).unwrap();
        reg.gauge("bridge.reqFifoOccupancy", 1).unwrap();
        let flat = reg.flatten();
        assert_eq!(flat["bridge.reqFifoOccupancy"], 2.0);
        assert_eq!(flat["bridge.reqFifoOccupancy::max"], 3.0);
    }

    #[test]
    fn percentile_edges() {
        let mut h = Histogram::decades(3);
        for x in [1.0, 2.0, 30.0, 400.0] {
            h.record(x);
        }
        assert_eq!(h.percentile(0.0), 1.0);
        assert_eq!(h.percentile(100.0), 400.0);
    }
}
