//! Discrete-event model of a CXL Type-3 memory expander datapath.
//!
//! The host side (traffic injectors and a cache hierarchy) issues memory
//! packets onto a membus. HDM-bound packets are captured by a bridge, turned
//! into CXL.mem messages, carried over a link and served by an expander
//! device with a DRAM or SSD backend. Workloads drive the system and produce
//! curves and statistics.
//!
//! ```
//! use cxlsim::config::SimConfig;
//!
//! let mut cfg = SimConfig::preset("cxl-dmsim-a").unwrap();
//! if let cxlsim::workloads::WorkloadSpec::LatencySweep(s) = &mut cfg.workload {
//!     s.array_sizes = vec![64 << 20];
//!     s.samples = 200;
//! }
//! let out = cxlsim::workloads::run(&cfg).unwrap();
//! let ns = out.table.column("ns_per_load").unwrap()[0];
//! assert!((ns - 284.0).abs() < 1.0);
//! ```

pub mod bridge;
pub mod config;
pub mod engine;
pub mod expander;
pub mod hdm;
pub mod host;
pub mod ssd;
pub mod stats;
pub mod system;
pub mod workloads;

pub use config::SimConfig;
pub use engine::{Engine, Tick};
pub use stats::{RunReport, StatsRegistry};
