//! Host side of the datapath: memory packets, the physical address map and
//! the cache hierarchy. Injector scheduling lives in [`crate::system`].

pub mod cache;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Tick;

pub use cache::{CacheHierarchy, CacheLevel, CacheLevelConfig, Lookup};

pub const LINE_BYTES: u64 = 64;

pub fn line_of(addr: u64) -> u64 {
    addr & !(LINE_BYTES - 1)
}

pub type RequestId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MemCmd {
    ReadReq,
    WriteReq,
    ReadResp,
    WriteResp,
}

impl MemCmd {
    pub fn is_request(self) -> bool {
        matches!(self, MemCmd::ReadReq | MemCmd::WriteReq)
    }

    pub fn is_write(self) -> bool {
        matches!(self, MemCmd::WriteReq | MemCmd::WriteResp)
    }

    pub fn response(self) -> Option<MemCmd> {
        match self {
            MemCmd::ReadReq => Some(MemCmd::ReadResp),
            MemCmd::WriteReq => Some(MemCmd::WriteResp),
            _ => None,
        }
    }
}

/// Who is waiting for a memory-side packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Injector(usize),
    /// Line fill for a cache miss (MSHR entry).
    CacheFill,
    /// Dirty eviction leaving the last-level cache.
    Writeback,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemPacket {
    pub id: RequestId,
    pub cmd: MemCmd,
    pub addr: u64,
    pub size: u32,
    pub issue_tick: Tick,
    pub origin: Origin,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PacketError {
    #[error("size {0} is not a power of two <= 64")]
    BadSize(u32),
    #[error("address {addr:#x} not aligned to size {size}")]
    Misaligned { addr: u64, size: u32 },
}

impl MemPacket {
    pub fn new(
        id: RequestId,
        cmd: MemCmd,
        addr: u64,
        size: u32,
        issue_tick: Tick,
        origin: Origin,
    ) -> Result<Self, PacketError> {
        if size == 0 || size > 64 || !size.is_power_of_two() {
            return Err(PacketError::BadSize(size));
        }
        if !addr.is_multiple_of(size as u64) {
            return Err(PacketError::Misaligned { addr, size });
        }
        Ok(MemPacket {
            id,
            cmd,
            addr,
            size,
            issue_tick,
            origin,
        })
    }

    /// Turns a request into its response in place; the id is kept.
    pub fn make_response(&mut self) {
        if let Some(resp) = self.cmd.response() {
            self.cmd = resp;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    LocalDram,
    /// HDM window of the CXL device with this index, reached via the bridge.
    Bridge(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddrRange {
    pub base: u64,
    /// Exclusive.
    pub limit: u64,
    pub target: Target,
}

impl AddrRange {
    pub fn contains(&self, addr: u64) -> bool {
        self.base <= addr && addr < self.limit
    }

    pub fn size(&self) -> u64 {
        self.limit - self.base
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AddrMapError {
    #[error("address {0:#x} is not mapped")]
    Unmapped(u64),
    #[error("range [{base:#x}, {limit:#x}) overlaps an existing range")]
    Overlap { base: u64, limit: u64 },
    #[error("empty or inverted range [{base:#x}, {limit:#x})")]
    Empty { base: u64, limit: u64 },
    #[error("no room for {size:#x} bytes aligned to {align:#x} in the host address space")]
    Exhausted { size: u64, align: u64 },
}

/// Non-overlapping physical ranges, kept sorted by base.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressMap {
    ranges: Vec<AddrRange>,
}

impl AddressMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ranges(&self) -> &[AddrRange] {
        &self.ranges
    }

    pub fn add(&mut self, range: AddrRange) -> Result<(), AddrMapError> {
        if range.limit <= range.base {
            return Err(AddrMapError::Empty {
                base: range.base,
                limit: range.limit,
            });
        }
        if self
            .ranges
            .iter()
            .any(|r| range.base < r.limit && r.base < range.limit)
        {
            return Err(AddrMapError::Overlap {
                base: range.base,
                limit: range.limit,
            });
        }
        let pos = self.ranges.partition_point(|r| r.base < range.base);
        self.ranges.insert(pos, range);
        Ok(())
    }

    /// Lowest base above every existing range that is aligned to `align`.
    pub fn next_free_base(&self, size: u64, align: u64) -> Result<u64, AddrMapError> {
        let top = self.ranges.iter().map(|r| r.limit).max().unwrap_or(0);
        let base = top
            .checked_add(align - 1)
            .map(|v| v / align * align)
            .ok_or(AddrMapError::Exhausted { size, align })?;
        base.checked_add(size)
            .ok_or(AddrMapError::Exhausted { size, align })?;
        Ok(base)
    }

    pub fn lookup(&self, addr: u64) -> Result<&AddrRange, AddrMapError> {
        let idx = self.ranges.partition_point(|r| r.base <= addr);
        match idx.checked_sub(1).map(|i| &self.ranges[i]) {
            Some(r) if r.contains(addr) => Ok(r),
            _ => Err(AddrMapError::Unmapped(addr)),
        }
    }

    pub fn route(&self, addr: u64) -> Result<Target, AddrMapError> {
        self.lookup(addr).map(|r| r.target)
    }

    pub fn range_of(&self, target: Target) -> Option<&AddrRange> {
        self.ranges.iter().find(|r| r.target == target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GB: u64 = 1 << 30;

    fn map() -> AddressMap {
        let mut m = AddressMap::new();
        m.add(AddrRange {
            base: 0,
            limit: 32 * GB,
            target: Target::LocalDram,
        })
        .unwrap();
        m.add(AddrRange {
            base: 32 * GB,
            limit: 96 * GB,
            target: Target::Bridge(0),
        })
        .unwrap();
        m
    }

    #[test]
    fn routes_by_range_boundaries() {
        let m = map();
        assert_eq!(m.route(32 * GB), Ok(Target::Bridge(0)));
        assert_eq!(m.route(32 * GB - 64), Ok(Target::LocalDram));
        assert_eq!(m.route(96 * GB), Err(AddrMapError::Unmapped(96 * GB)));
    }

    #[test]
    fn rejects_overlap() {
        let mut m = map();
        let err = m.add(AddrRange {
            base: 95 * GB,
            limit: 97 * GB,
            target: Target::Bridge(1),
        });
        assert!(matches!(err, Err(AddrMapError::Overlap { .. })));
    }

    #[test]
    fn packet_validation() {
        assert!(MemPacket::new(1, MemCmd::ReadReq, 0x40, 64, Tick(0), Origin::CacheFill).is_ok());
        assert_eq!(
            MemPacket::new(1, MemCmd::ReadReq, 0x40, 48, Tick(0), Origin::CacheFill),
            Err(PacketError::BadSize(48))
        );
        assert_eq!(
            MemPacket::new(1, MemCmd::ReadReq, 0x20, 64, Tick(0), Origin::CacheFill),
            Err(PacketError::Misaligned { addr: 0x20, size: 64 })
        );
        let mut p = MemPacket::new(7, MemCmd::WriteReq, 0, 8, Tick(0), Origin::Injector(0)).unwrap();
        p.make_response();
        assert_eq!((p.id, p.cmd), (7, MemCmd::WriteResp));
    }
}
