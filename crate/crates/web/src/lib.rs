//! Browser bindings for the simulator. Every export returns a JSON string;
//! the `*_json` functions underneath are plain Rust so they test natively.

use cxlsim::config::{SimConfig, PRESETS};
use cxlsim::hdm::{AllocList, Policy};
use cxlsim::workloads::{self, LatencySweepSpec, RdWrSweepSpec, WorkloadSpec};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn presets() -> String {
    json!(PRESETS).to_string()
}

/// Dependent-load latency vs working-set size, one point per power of four
/// from 16 KiB up to `max_mb` MiB.
#[wasm_bindgen]
pub fn latency_curve(preset: &str, max_mb: u32, samples: u32) -> Result<String, JsValue> {
    js(latency_curve_json(preset, max_mb, samples))
}

pub fn latency_curve_json(preset: &str, max_mb: u32, samples: u32) -> Result<String, String> {
    let mut cfg = SimConfig::preset(preset).map_err(|e| e.to_string())?;
    let max = u64::from(max_mb.max(1)) << 20;
    let array_sizes = std::iter::successors(Some(16u64 << 10), |s| Some(s * 4))
        .take_while(|&s| s <= max)
        .collect();
    let node = if cfg.devices.is_empty() { 0 } else { 1 };
    cfg.workload = WorkloadSpec::LatencySweep(LatencySweepSpec {
        array_sizes,
        stride: 64,
        samples: u64::from(samples.max(100)),
        placement: Policy::Bind { node },
    });
    let out = workloads::run(&cfg).map_err(|e| e.to_string())?;
    Ok(out.summary.to_string())
}

/// Peak bandwidth for each read fraction from 0.5 to 1.0.
#[wasm_bindgen]
pub fn rdwr_curve(preset: &str, requests: u32) -> Result<String, JsValue> {
    js(rdwr_curve_json(preset, requests))
}

pub fn rdwr_curve_json(preset: &str, requests: u32) -> Result<String, String> {
    let mut cfg = SimConfig::preset(preset).map_err(|e| e.to_string())?;
    let node = if cfg.devices.is_empty() { 0 } else { 1 };
    cfg.workload = WorkloadSpec::RdwrSweep(RdWrSweepSpec {
        rates_gbps: vec![1000.0],
        requests: u64::from(requests.max(200)),
        placement: Policy::Bind { node },
        ..RdWrSweepSpec::default()
    });
    let out = workloads::run(&cfg).map_err(|e| e.to_string())?;
    Ok(out.summary.to_string())
}

/// Interactive first-fit allocator over one device's HDM window.
#[wasm_bindgen]
pub struct HdmDemo {
    list: AllocList,
}

#[wasm_bindgen]
impl HdmDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(hdm_mb: u32) -> HdmDemo {
        HdmDemo {
            list: AllocList::new(u64::from(hdm_mb.max(1)) << 20),
        }
    }

    /// Returns the block offset.
    pub fn alloc(&mut self, pid: u32, kb: u32) -> Result<f64, JsValue> {
        self.try_alloc(pid, kb)
            .map(|o| o as f64)
            .map_err(|e| JsValue::from_str(&e))
    }

    pub fn free(&mut self, pid: u32, offset: f64) -> Result<(), JsValue> {
        self.try_free(pid, offset as u64)
            .map_err(|e| JsValue::from_str(&e))
    }

    pub fn layout(&self) -> String {
        self.list.to_json()
    }
}

impl HdmDemo {
    pub fn try_alloc(&mut self, pid: u32, kb: u32) -> Result<u64, String> {
        self.list
            .alloc(pid, u64::from(kb) << 10)
            .map_err(|e| e.to_string())
    }

    pub fn try_free(&mut self, pid: u32, offset: u64) -> Result<(), String> {
        self.list.free(pid, offset).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn latency_curve_rises_with_size() {
        let v: Value = serde_json::from_str(&latency_curve_json("cxl-dmsim-a", 16, 500).unwrap()).unwrap();
        let lat: Vec<f64> = v["points"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p["ns_per_load"].as_f64().unwrap())
            .collect();
        assert_eq!(lat.len(), 6);
        assert!(lat.last().unwrap() > &(lat[0] * 5.0), "{lat:?}");
        assert!(latency_curve_json("nope", 1, 1).is_err());
    }

    #[test]
    fn rdwr_curve_has_every_fraction() {
        let v: Value = serde_json::from_str(&rdwr_curve_json("cxl-dmsim-f", 400).unwrap()).unwrap();
        assert_eq!(v["peaks"].as_array().unwrap().len(), 11);
    }

    #[test]
    fn allocator_round_trip() {
        let mut d = HdmDemo::new(1);
        let a = d.try_alloc(1, 256).unwrap();
        let b = d.try_alloc(2, 256).unwrap();
        assert_eq!((a, b), (0, 256 << 10));
        assert!(d.try_alloc(3, 1024).is_err());
        assert!(d.try_free(2, a).is_err(), "wrong owner");
        d.try_free(1, a).unwrap();
        assert_eq!(d.try_alloc(3, 128).unwrap(), 0);
        let layout: Value = serde_json::from_str(&d.layout()).unwrap();
        let blocks = layout.as_array().unwrap();
        assert_eq!(blocks[0]["pid"], 3);
        assert_eq!(blocks.iter().map(|b| b["size"].as_u64().unwrap()).sum::<u64>(), 1 << 20);
    }
}
