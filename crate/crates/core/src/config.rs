//! Simulation configuration: a single versioned JSON document.
//!
//! Latencies are written in nanoseconds (`*_ns` fields, floats allowed) and
//! held internally as [`Tick`]s. Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bridge::BridgeConfig;
use crate::engine::Tick;
use crate::expander::{CxlDeviceConfig, MediumConfig, QueuedDdrConfig};
use crate::hdm::Policy;
use crate::host::CacheLevelConfig;
use crate::ssd::{DeviceCacheConfig, ReplacementPolicy, SsdConfig, SsdMediumConfig};
use crate::workloads::{KvProxySpec, LatencySweepSpec, WorkloadSpec};

pub const CONFIG_VERSION: u32 = 1;

pub const KB: u64 = 1 << 10;
pub const MB: u64 = 1 << 20;
pub const GB: u64 = 1 << 30;

/// Serde adapter: `Tick` <-> nanoseconds as a JSON number.
pub mod ns {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::engine::Tick;

    pub fn serialize<S: Serializer>(t: &Tick, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(t.as_ns())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Tick, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() || v < 0.0 {
            return Err(D::Error::custom(format!(
                "latency must be a finite, non-negative number of ns (got {v})"
            )));
        }
        Ok(Tick::from_ns_f64(v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectorConfig {
    pub count: u32,
    pub lsq_depth: u32,
    #[serde(with = "ns")]
    pub think_time_ns: Tick,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalDramConfig {
    pub size_bytes: u64,
    /// Idle read latency of the local controller and DRAM.
    #[serde(with = "ns")]
    pub access_lat_ns: Tick,
    pub medium: MediumConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostConfig {
    pub core_freq_ghz: f64,
    /// Core issue, cache-miss traversal and membus, charged half on the way
    /// out and half on the way back.
    #[serde(with = "ns")]
    pub host_path_lat_ns: Tick,
    pub phys_addr_bits: u32,
    pub caches: Vec<CacheLevelConfig>,
    pub injectors: InjectorConfig,
    pub local_dram: LocalDramConfig,
}

impl HostConfig {
    /// Picoseconds per core cycle.
    pub fn cycle(&self) -> f64 {
        crate::engine::TICKS_PER_NS as f64 / self.core_freq_ghz
    }

    pub fn llc_bytes(&self) -> u64 {
        self.caches.last().map(|c| c.capacity_bytes).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub version: u32,
    pub seed: u64,
    pub host: HostConfig,
    pub bridge: BridgeConfig,
    pub devices: Vec<CxlDeviceConfig>,
    pub workload: WorkloadSpec,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: `{path}`: {msg}")]
    Parse {
        line: usize,
        column: usize,
        path: String,
        msg: String,
    },
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("`{field}`: {msg}")]
    Invalid { field: String, msg: String },
    #[error("unknown preset `{0}` (known: local-ddr, cxl-dmsim-f, cxl-dmsim-a, cxl-ssd)")]
    UnknownPreset(String),
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        msg: msg.into(),
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let (line, column) = (inner.line(), inner.column());
            // serde_json appends the position; it's already in our prefix.
            let full = inner.to_string();
            let suffix = format!(" at line {line} column {column}");
            let msg = full.strip_suffix(&suffix).unwrap_or(&full).to_string();
            ConfigError::Parse {
                line,
                column,
                path,
                msg,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the compact serialization.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        let h = &self.host;
        if !(h.core_freq_ghz.is_finite() && h.core_freq_ghz > 0.0) {
            return Err(invalid("host.core_freq_ghz", "must be positive"));
        }
        if !(20..=64).contains(&h.phys_addr_bits) {
            return Err(invalid("host.phys_addr_bits", "must be within 20..=64"));
        }
        if h.caches.is_empty() {
            return Err(invalid("host.caches", "at least one cache level is required"));
        }
        for (i, c) in h.caches.iter().enumerate() {
            c.validate()
                .map_err(|e| invalid(format!("host.caches[{i}]"), e.to_string()))?;
        }
        if h.injectors.count == 0 {
            return Err(invalid("host.injectors.count", "must be >= 1"));
        }
        if h.injectors.lsq_depth == 0 {
            return Err(invalid("host.injectors.lsq_depth", "must be >= 1"));
        }
        if h.local_dram.size_bytes == 0 || !h.local_dram.size_bytes.is_multiple_of(crate::hdm::PAGE_BYTES) {
            return Err(invalid(
                "host.local_dram.size_bytes",
                "must be a positive multiple of 4096",
            ));
        }
        if matches!(h.local_dram.medium, MediumConfig::Ssd(_)) {
            return Err(invalid("host.local_dram.medium", "local memory cannot be an SSD"));
        }
        h.local_dram
            .medium
            .validate(h.local_dram.access_lat_ns)
            .map_err(|m| invalid("host.local_dram.medium", m))?;
        self.bridge.validate().map_err(|m| {
            let (field, msg) = m.split_once(": ").unwrap_or(("bridge", m.as_str()));
            invalid(field, msg)
        })?;
        for (i, d) in self.devices.iter().enumerate() {
            d.validate()
                .map_err(|(field, msg)| invalid(format!("devices[{i}].{field}"), msg))?;
        }
        self.workload
            .validate(self)
            .map_err(|(field, msg)| invalid(format!("workload.{field}"), msg))?;
        Ok(())
    }

    /// Number of NUMA nodes: local DRAM plus one per device.
    pub fn node_count(&self) -> usize {
        1 + self.devices.len()
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "local-ddr" => Ok(preset_local_ddr()),
            "cxl-dmsim-f" => Ok(preset_fpga()),
            "cxl-dmsim-a" => Ok(preset_asic()),
            "cxl-ssd" => Ok(preset_ssd()),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    /// Returns a copy with the numeric field at dotted `path` set to `value`
    /// (`devices.0.medium.read_service_ns`). A numeric-list field becomes the
    /// one-element list `[value]`.
    pub fn with_param(&self, path: &str, value: f64) -> Result<Self, ConfigError> {
        if !value.is_finite() {
            return Err(invalid(path, "value must be finite"));
        }
        let mut root = serde_json::to_value(self).expect("config serializes");
        let mut slot = &mut root;
        for seg in path.split('.') {
            slot = match slot {
                serde_json::Value::Object(m) => m.get_mut(seg),
                serde_json::Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| invalid(path, format!("no such field `{seg}`")))?;
        }
        let number = if value.fract() == 0.0 && value.abs() < 9.0e15 {
            serde_json::json!(value as i64)
        } else {
            serde_json::json!(value)
        };
        match slot {
            serde_json::Value::Number(_) => *slot = number,
            serde_json::Value::Array(a) if !a.is_empty() && a.iter().all(|v| v.is_number()) => {
                *slot = serde_json::Value::Array(vec![number])
            }
            _ => return Err(invalid(path, "not a numeric field")),
        }
        Self::from_json(&root.to_string())
    }
}

pub const PRESETS: [&str; 4] = ["local-ddr", "cxl-dmsim-f", "cxl-dmsim-a", "cxl-ssd"];

/// Dependent-load plateau the local DRAM configuration is calibrated to.
pub const LOCAL_PLATEAU: Tick = Tick::from_ns(130);

/// `host_path_lat` such that a full-miss load to local DRAM takes
/// [`LOCAL_PLATEAU`] end to end.
pub fn calibrated_host_path_lat(local: &LocalDramConfig) -> Tick {
    LOCAL_PLATEAU.saturating_sub(local.medium.idle_read_latency(local.access_lat_ns))
}

fn desk_caches() -> Vec<CacheLevelConfig> {
    vec![
        CacheLevelConfig {
            capacity_bytes: 32 * KB,
            associativity: 8,
            hit_latency_ns: Tick::from_ns(1),
        },
        CacheLevelConfig {
            capacity_bytes: 256 * KB,
            associativity: 8,
            hit_latency_ns: Tick::from_ns(4),
        },
        CacheLevelConfig {
            capacity_bytes: 8 * MB,
            associativity: 16,
            hit_latency_ns: Tick::from_ns(15),
        },
    ]
}

fn local_dram() -> LocalDramConfig {
    LocalDramConfig {
        size_bytes: 32 * GB,
        access_lat_ns: Tick::from_ns_f64(61.5),
        medium: MediumConfig::QueuedDdr(QueuedDdrConfig {
            read_service_ns: Tick::from_ns_f64(3.6),
            write_service_ns: Tick::from_ns_f64(3.8),
            turnaround_penalty_ns: Tick::from_ns_f64(0.2),
            queue_capacity: 64,
        }),
    }
}

fn host() -> HostConfig {
    let local = local_dram();
    HostConfig {
        core_freq_ghz: 2.0,
        host_path_lat_ns: calibrated_host_path_lat(&local),
        phys_addr_bits: 48,
        caches: desk_caches(),
        injectors: InjectorConfig {
            count: 1,
            lsq_depth: 1,
            think_time_ns: Tick::ZERO,
        },
        local_dram: local,
    }
}

fn bridge(fifo_depth: u32) -> BridgeConfig {
    BridgeConfig {
        bridge_lat_ns: Tick::from_ns(50),
        host_proto_proc_lat_ns: Tick::from_ns(14),
        req_fifo_depth: fifo_depth,
        resp_fifo_depth: fifo_depth,
        link_bytes_per_ns_tx: 12.8,
        link_bytes_per_ns_rx: 12.8,
        msg_header_bytes: 16,
    }
}

/// DDR5-class device DRAM.
pub fn asic_ddr() -> QueuedDdrConfig {
    QueuedDdrConfig {
        read_service_ns: Tick::from_ns_f64(4.0),
        write_service_ns: Tick::from_ns_f64(4.6),
        turnaround_penalty_ns: Tick::from_ns_f64(1.0),
        queue_capacity: 64,
    }
}

/// DDR4-class device DRAM: 1.5x the DDR5 service times.
pub fn fpga_ddr() -> QueuedDdrConfig {
    QueuedDdrConfig {
        read_service_ns: Tick::from_ns_f64(6.0),
        write_service_ns: Tick::from_ns_f64(6.9),
        turnaround_penalty_ns: Tick::from_ns_f64(1.5),
        queue_capacity: 64,
    }
}

fn chase_on(node: usize) -> WorkloadSpec {
    WorkloadSpec::LatencySweep(LatencySweepSpec {
        array_sizes: vec![
            16 * KB,
            128 * KB,
            2 * MB,
            64 * MB,
        ],
        stride: 64,
        samples: 20_000,
        placement: Policy::Bind { node },
    })
}

fn preset_local_ddr() -> SimConfig {
    SimConfig {
        version: CONFIG_VERSION,
        seed: 1,
        host: host(),
        bridge: bridge(52),
        devices: vec![],
        workload: chase_on(0),
    }
}

fn preset_asic() -> SimConfig {
    SimConfig {
        version: CONFIG_VERSION,
        seed: 1,
        host: host(),
        bridge: bridge(52),
        devices: vec![CxlDeviceConfig {
            hdm_size: 64 * GB,
            device_proto_proc_lat_ns: Tick::from_ns(15),
            medium_access_lat_ns: Tick::from_ns(50),
            medium: MediumConfig::QueuedDdr(asic_ddr()),
        }],
        workload: chase_on(1),
    }
}

fn preset_fpga() -> SimConfig {
    SimConfig {
        version: CONFIG_VERSION,
        seed: 1,
        host: host(),
        bridge: bridge(48),
        devices: vec![CxlDeviceConfig {
            hdm_size: 16 * GB,
            device_proto_proc_lat_ns: Tick::from_ns(60),
            medium_access_lat_ns: Tick::from_ns(50),
            medium: MediumConfig::QueuedDdr(fpga_ddr()),
        }],
        workload: chase_on(1),
    }
}

fn preset_ssd() -> SimConfig {
    let kv = KvProxySpec::default();
    let working_set = kv.working_set_bytes();
    SimConfig {
        version: CONFIG_VERSION,
        seed: 1,
        host: host(),
        bridge: bridge(52),
        devices: vec![CxlDeviceConfig {
            hdm_size: 64 * GB,
            device_proto_proc_lat_ns: Tick::from_ns(15),
            medium_access_lat_ns: Tick::from_ns(50),
            medium: MediumConfig::Ssd(SsdMediumConfig {
                ssd: SsdConfig::default(),
                cache: Some(DeviceCacheConfig {
                    capacity_bytes: working_set / 8,
                    policy: ReplacementPolicy::Lru,
                    writeback: true,
                }),
                prefetch: true,
            }),
        }],
        workload: WorkloadSpec::KvProxy(kv),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = SimConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let back = SimConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg, "{name}");
            assert_eq!(back.digest(), cfg.digest());
        }
    }

    #[test]
    fn presets_carry_device_parameter_table() {
        let a = SimConfig::preset("cxl-dmsim-a").unwrap();
        let f = SimConfig::preset("cxl-dmsim-f").unwrap();
        for (cfg, proto, depth, size) in [(&f, 60, 48, 16 * GB), (&a, 15, 52, 64 * GB)] {
            assert_eq!(cfg.bridge.bridge_lat_ns, Tick::from_ns(50));
            assert_eq!(cfg.bridge.host_proto_proc_lat_ns, Tick::from_ns(14));
            assert_eq!(cfg.bridge.req_fifo_depth, depth);
            assert_eq!(cfg.bridge.resp_fifo_depth, depth);
            let d = &cfg.devices[0];
            assert_eq!(d.device_proto_proc_lat_ns, Tick::from_ns(proto));
            assert_eq!(d.medium_access_lat_ns, Tick::from_ns(50));
            assert_eq!(d.hdm_size, size);
        }
    }

    #[test]
    fn host_path_is_calibrated_against_local_idle_latency() {
        let cfg = SimConfig::preset("local-ddr").unwrap();
        assert_eq!(cfg.host.host_path_lat_ns, Tick::from_ns_f64(68.5));
    }

    #[test]
    fn negative_fifo_depth_names_the_field() {
        let mut v: serde_json::Value =
            serde_json::from_str(&SimConfig::preset("cxl-dmsim-a").unwrap().to_json()).unwrap();
        v["bridge"]["req_fifo_depth"] = serde_json::json!(-1);
        let text = serde_json::to_string_pretty(&v).unwrap();
        let err = SimConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("bridge.req_fifo_depth"), "{err}");
        assert!(err.starts_with("line "), "{err}");
    }

    #[test]
    fn zero_fifo_depth_is_rejected_by_validation() {
        let mut cfg = SimConfig::preset("cxl-dmsim-a").unwrap();
        cfg.bridge.req_fifo_depth = 0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("bridge.req_fifo_depth"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(&SimConfig::preset("local-ddr").unwrap().to_json()).unwrap();
        v["host"]["turbo"] = serde_json::json!(true);
        let err = SimConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("turbo"), "{err}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut cfg = SimConfig::preset("local-ddr").unwrap();
        cfg.version = 7;
        assert!(matches!(cfg.validate(), Err(ConfigError::Version(7))));
    }

    #[test]
    fn cycle_length_follows_core_frequency() {
        let cfg = SimConfig::preset("local-ddr").unwrap();
        assert_eq!(cfg.host.cycle(), 500.0);
    }

    #[test]
    fn params_override_numeric_fields() {
        let cfg = SimConfig::preset("cxl-dmsim-a").unwrap();
        let c = cfg.with_param("bridge.req_fifo_depth", 13.0).unwrap();
        assert_eq!(c.bridge.req_fifo_depth, 13);
        let c = cfg.with_param("devices.0.medium_access_lat_ns", 40.5).unwrap();
        assert_eq!(c.devices[0].medium_access_lat_ns, Tick::from_ns_f64(40.5));
        let c = cfg.with_param("workload.array_sizes", 4096.0).unwrap();
        match c.workload {
            WorkloadSpec::LatencySweep(s) => assert_eq!(s.array_sizes, vec![4096]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn params_reject_non_numeric_and_missing_fields() {
        let cfg = SimConfig::preset("cxl-dmsim-a").unwrap();
        let e = cfg.with_param("workload.placement", 1.0).unwrap_err().to_string();
        assert!(e.contains("not a numeric field"), "{e}");
        let e = cfg.with_param("bridge.nope", 1.0).unwrap_err().to_string();
        assert!(e.contains("no such field"), "{e}");
        assert!(cfg.with_param("bridge.req_fifo_depth", 1.5).is_err());
    }
}
