//! Membus-to-IObus bridge with CXL.mem conversion.
//!
//! Two FIFO pairs sit in the bridge. The upstream pair buffers host packets,
//! the downstream pair buffers CXL.mem messages:
//!
//! ```text
//!  membus ─▶ upstream_req ─▶ convert ─▶ downstream_req ─▶ TX link ─▶ device
//!  membus ◀─ upstream_resp ◀─ convert ◀─ downstream_resp ◀─ RX link ◀─ device
//! ```
//!
//! A captured host packet keeps its `upstream_req` slot until its response
//! has been converted back, because the response is built from it. That slot
//! is what bounds the number of HDM requests in flight. Admission failures
//! are reported to the sender, which holds the packet and re-offers it when
//! a slot frees.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Tick;
use crate::host::{MemCmd, MemPacket, RequestId, LINE_BYTES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CxlMemKind {
    /// Read request, header only.
    M2SReq,
    /// Write request with data.
    M2SRwD,
    /// No-data response (write completion).
    S2MNDR,
    /// Data response.
    S2MDRS,
}

impl CxlMemKind {
    pub fn payload_bytes(self) -> u32 {
        match self {
            CxlMemKind::M2SReq | CxlMemKind::S2MNDR => 0,
            CxlMemKind::M2SRwD | CxlMemKind::S2MDRS => LINE_BYTES as u32,
        }
    }

    pub fn is_request(self) -> bool {
        matches!(self, CxlMemKind::M2SReq | CxlMemKind::M2SRwD)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CxlMemPacket {
    pub kind: CxlMemKind,
    pub id: RequestId,
    pub addr: u64,
    /// Line contents for functional checking. `None` on timing-only traffic;
    /// a `None` write leaves stored contents untouched.
    pub data: Option<Box<[u8; 64]>>,
}

impl CxlMemPacket {
    pub fn new(kind: CxlMemKind, id: RequestId, addr: u64) -> Self {
        CxlMemPacket {
            kind,
            id,
            addr,
            data: None,
        }
    }

    pub fn payload_bytes(&self) -> u32 {
        self.kind.payload_bytes()
    }

    /// The device's answer to this request: S2MDRS for reads, S2MNDR for
    /// writes. `None` for responses.
    pub fn reply(&self) -> Option<CxlMemPacket> {
        let kind = match self.kind {
            CxlMemKind::M2SReq => CxlMemKind::S2MDRS,
            CxlMemKind::M2SRwD => CxlMemKind::S2MNDR,
            _ => return None,
        };
        Some(CxlMemPacket::new(kind, self.id, self.addr))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeConfig {
    #[serde(with = "crate::config::ns")]
    pub bridge_lat_ns: Tick,
    #[serde(with = "crate::config::ns")]
    pub host_proto_proc_lat_ns: Tick,
    pub req_fifo_depth: u32,
    pub resp_fifo_depth: u32,
    pub link_bytes_per_ns_tx: f64,
    pub link_bytes_per_ns_rx: f64,
    pub msg_header_bytes: u32,
}

impl BridgeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.req_fifo_depth == 0 {
            return Err("bridge.req_fifo_depth: must be >= 1".into());
        }
        if self.resp_fifo_depth == 0 {
            return Err("bridge.resp_fifo_depth: must be >= 1".into());
        }
        for (name, v) in [
            ("link_bytes_per_ns_tx", self.link_bytes_per_ns_tx),
            ("link_bytes_per_ns_rx", self.link_bytes_per_ns_rx),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("bridge.{name}: must be a positive number"));
            }
        }
        Ok(())
    }

    /// Latency added by one traversal of the bridge.
    pub fn one_way_lat(&self) -> Tick {
        self.bridge_lat_ns + self.host_proto_proc_lat_ns
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BridgeError {
    #[error("cannot convert {0:?} into a CXL.mem request")]
    UnsupportedCmd(MemCmd),
    #[error("{0:?} is not an S2M response")]
    NotAResponse(CxlMemKind),
    #[error("response for unknown request id {0}")]
    UnknownId(RequestId),
    #[error("response {kind:?} does not pair with request {cmd:?} (id {id})")]
    Mismatch {
        id: RequestId,
        kind: CxlMemKind,
        cmd: MemCmd,
    },
    #[error("{queue} FIFO overflow (depth {depth})")]
    Overflow { queue: &'static str, depth: usize },
}

pub fn convert_m2s(pkt: &MemPacket) -> Result<CxlMemPacket, BridgeError> {
    let kind = match pkt.cmd {
        MemCmd::ReadReq => CxlMemKind::M2SReq,
        MemCmd::WriteReq => CxlMemKind::M2SRwD,
        other => return Err(BridgeError::UnsupportedCmd(other)),
    };
    Ok(CxlMemPacket::new(kind, pkt.id, pkt.addr))
}

/// Builds the host response for `resp` from the captured request.
pub fn convert_s2m(request: &MemPacket, resp: &CxlMemPacket) -> Result<MemPacket, BridgeError> {
    let expected = match resp.kind {
        CxlMemKind::S2MDRS => MemCmd::ReadReq,
        CxlMemKind::S2MNDR => MemCmd::WriteReq,
        other => return Err(BridgeError::NotAResponse(other)),
    };
    if request.id != resp.id {
        return Err(BridgeError::UnknownId(resp.id));
    }
    if request.cmd != expected {
        return Err(BridgeError::Mismatch {
            id: resp.id,
            kind: resp.kind,
            cmd: request.cmd,
        });
    }
    let mut out = request.clone();
    out.make_response();
    Ok(out)
}

/// Bounded queue that records its high-water mark.
#[derive(Debug)]
pub struct BoundedFifo<T> {
    items: VecDeque<T>,
    depth: usize,
    max_occupancy: usize,
    name: &'static str,
}

impl<T: PartialEq> BoundedFifo<T> {
    pub fn new(name: &'static str, depth: usize) -> Self {
        BoundedFifo {
            items: VecDeque::with_capacity(depth),
            depth,
            max_occupancy: 0,
            name,
        }
    }

    pub fn has_space(&self) -> bool {
        self.items.len() < self.depth
    }

    pub fn push(&mut self, item: T) -> Result<(), BridgeError> {
        if !self.has_space() {
            return Err(BridgeError::Overflow {
                queue: self.name,
                depth: self.depth,
            });
        }
        self.items.push_back(item);
        self.max_occupancy = self.max_occupancy.max(self.items.len());
        Ok(())
    }

    pub fn pop(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    /// Removes a specific entry (entries may retire out of order).
    pub fn remove(&mut self, item: &T) -> bool {
        match self.items.iter().position(|x| x == item) {
            Some(i) => {
                self.items.remove(i);
                true
            }
            None => false,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn max_occupancy(&self) -> usize {
        self.max_occupancy
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Host to device.
    Tx,
    /// Device to host.
    Rx,
}

/// One CXL link: independent TX and RX channels, each serializing messages
/// in arrival order.
#[derive(Clone, Debug)]
pub struct Link {
    tx_bytes_per_ns: f64,
    rx_bytes_per_ns: f64,
    header: u32,
    tx_free: Tick,
    rx_free: Tick,
    pub tx_bytes: u64,
    pub rx_bytes: u64,
}

impl Link {
    pub fn new(cfg: &BridgeConfig) -> Self {
        Link {
            tx_bytes_per_ns: cfg.link_bytes_per_ns_tx,
            rx_bytes_per_ns: cfg.link_bytes_per_ns_rx,
            header: cfg.msg_header_bytes,
            tx_free: Tick::ZERO,
            rx_free: Tick::ZERO,
            tx_bytes: 0,
            rx_bytes: 0,
        }
    }

    pub fn message_bytes(&self, kind: CxlMemKind) -> u32 {
        self.header + kind.payload_bytes()
    }

    pub fn serialization(&self, bytes: u32, dir: Direction) -> Tick {
        let cap = match dir {
            Direction::Tx => self.tx_bytes_per_ns,
            Direction::Rx => self.rx_bytes_per_ns,
        };
        Tick((bytes as f64 * crate::engine::TICKS_PER_NS as f64 / cap).ceil() as u64)
    }

    /// Returns the tick at which the last byte of the message arrives.
    pub fn transmit(&mut self, kind: CxlMemKind, dir: Direction, now: Tick) -> Tick {
        let bytes = self.message_bytes(kind);
        let dur = self.serialization(bytes, dir);
        let (free, total) = match dir {
            Direction::Tx => (&mut self.tx_free, &mut self.tx_bytes),
            Direction::Rx => (&mut self.rx_free, &mut self.rx_bytes),
        };
        let start = now.max(*free);
        *free = start + dur;
        *total += bytes as u64;
        *free
    }
}

/// Outcome of offering a packet to the bridge.
#[derive(Debug, PartialEq, Eq)]
pub enum Admission {
    Accepted,
    Retry,
}

/// FIFO and retry state of the bridge. Timing is driven by the system: this
/// type only tracks occupancy, captured packets and counters.
#[derive(Debug)]
pub struct Bridge {
    pub cfg: BridgeConfig,
    pub upstream_req: BoundedFifo<RequestId>,
    pub downstream_req: BoundedFifo<RequestId>,
    pub downstream_resp: BoundedFifo<RequestId>,
    pub upstream_resp: BoundedFifo<RequestId>,
    captured: HashMap<RequestId, MemPacket>,
    /// Packets refused at admission, held by their senders.
    waiters: VecDeque<MemPacket>,
    pub retries: u64,
    pub m2s_sent: u64,
    pub s2m_received: u64,
}

impl Bridge {
    pub fn new(cfg: BridgeConfig) -> Self {
        let req = cfg.req_fifo_depth as usize;
        let resp = cfg.resp_fifo_depth as usize;
        Bridge {
            upstream_req: BoundedFifo::new("upstream req", req),
            downstream_req: BoundedFifo::new("downstream req", req),
            downstream_resp: BoundedFifo::new("downstream resp", resp),
            upstream_resp: BoundedFifo::new("upstream resp", resp),
            cfg,
            captured: HashMap::new(),
            waiters: VecDeque::new(),
            retries: 0,
            m2s_sent: 0,
            s2m_received: 0,
        }
    }

    /// Offers a host request. On `Retry` the packet joins the sender-side
    /// wait list and the retry counter is bumped.
    pub fn intercept(&mut self, pkt: MemPacket) -> Admission {
        debug_assert!(pkt.cmd.is_request());
        if self.upstream_req.has_space() && self.waiters.is_empty() {
            self.capture(pkt);
            Admission::Accepted
        } else {
            self.retries += 1;
            self.waiters.push_back(pkt);
            Admission::Retry
        }
    }

    fn capture(&mut self, pkt: MemPacket) {
        self.upstream_req.push(pkt.id).expect("space checked");
        self.captured.insert(pkt.id, pkt);
    }

    /// Called whenever an upstream slot frees. Every waiting sender re-offers;
    /// the oldest is admitted and each of the others counts one more retry.
    pub fn readmit(&mut self) -> Option<RequestId> {
        if !self.upstream_req.has_space() {
            return None;
        }
        let pkt = self.waiters.pop_front()?;
        self.retries += self.waiters.len() as u64;
        let id = pkt.id;
        self.capture(pkt);
        Some(id)
    }

    pub fn waiting(&self) -> usize {
        self.waiters.len()
    }

    pub fn captured(&self, id: RequestId) -> Option<&MemPacket> {
        self.captured.get(&id)
    }

    /// Converts a captured request into its CXL.mem message.
    pub fn to_m2s(&mut self, id: RequestId) -> Result<CxlMemPacket, BridgeError> {
        let pkt = self.captured.get(&id).ok_or(BridgeError::UnknownId(id))?;
        let m2s = convert_m2s(pkt)?;
        self.m2s_sent += 1;
        Ok(m2s)
    }

    /// Converts a device response back to a host response and releases the
    /// captured request's upstream slot.
    pub fn from_s2m(&mut self, resp: &CxlMemPacket) -> Result<MemPacket, BridgeError> {
        let request = self
            .captured
            .get(&resp.id)
            .ok_or(BridgeError::UnknownId(resp.id))?;
        let host = convert_s2m(request, resp)?;
        self.captured.remove(&resp.id);
        self.upstream_req.remove(&resp.id);
        self.s2m_received += 1;
        Ok(host)
    }

    pub fn in_flight(&self) -> usize {
        self.captured.len()
    }
}
