//! Host-side management of device memory.
//!
//! Two modes. In application-managed mode a driver-like allocator hands out
//! contiguous HDM segments tracked in a doubly linked list of blocks. In
//! kernel-managed mode HDM is a memory-only NUMA node and pages are spread
//! over nodes by a bind, preferred or interleave policy.

use std::sync::{Mutex, TryLockError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAGE_BYTES: u64 = 4096;

pub fn round_to_page(bytes: u64) -> Option<u64> {
    bytes.checked_add(PAGE_BYTES - 1).map(|b| b / PAGE_BYTES * PAGE_BYTES)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BlockState {
    Free,
    Busy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HdmAllocNode {
    /// Owning workload id; 0 for free blocks.
    pub pid: u32,
    pub state: BlockState,
    pub size: u64,
    pub offset: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AllocError {
    #[error("allocation size must be positive")]
    ZeroSize,
    #[error("no free block of {size} bytes")]
    NoSpace { size: u64 },
    #[error("no allocated block at offset {offset:#x}")]
    InvalidFree { offset: u64 },
    #[error("block at {offset:#x} belongs to pid {owner}, not {pid}")]
    Permission { offset: u64, owner: u32, pid: u32 },
    #[error("HDM allocator is held by another operation")]
    Busy,
}

#[derive(Debug)]
struct Link {
    node: HdmAllocNode,
    prev: Option<usize>,
    next: Option<usize>,
}

/// Offset-ordered doubly linked block list over an arena. Free blocks are
/// coalesced as soon as they become adjacent.
#[derive(Debug)]
pub struct AllocList {
    arena: Vec<Option<Link>>,
    spare: Vec<usize>,
    head: usize,
    total: u64,
}

impl AllocList {
    pub fn new(total: u64) -> Self {
        AllocList {
            arena: vec![Some(Link {
                node: HdmAllocNode {
                    pid: 0,
                    state: BlockState::Free,
                    size: total,
                    offset: 0,
                },
                prev: None,
                next: None,
            })],
            spare: Vec::new(),
            head: 0,
            total,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    fn link(&self, i: usize) -> &Link {
        self.arena[i].as_ref().expect("live list slot")
    }

    fn link_mut(&mut self, i: usize) -> &mut Link {
        self.arena[i].as_mut().expect("live list slot")
    }

    fn put(&mut self, link: Link) -> usize {
        match self.spare.pop() {
            Some(i) => {
                self.arena[i] = Some(link);
                i
            }
            None => {
                self.arena.push(Some(link));
                self.arena.len() - 1
            }
        }
    }

    fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(Some(self.head), move |&i| self.link(i).next)
    }

    /// Blocks in offset order.
    pub fn nodes(&self) -> Vec<HdmAllocNode> {
        self.indices().map(|i| self.link(i).node.clone()).collect()
    }

    /// First-fit allocation of `size` rounded up to whole pages.
    pub fn alloc(&mut self, pid: u32, size: u64) -> Result<u64, AllocError> {
        if size == 0 {
            return Err(AllocError::ZeroSize);
        }
        let size = round_to_page(size).ok_or(AllocError::NoSpace { size })?;
        let found = self.indices().find(|&i| {
            let n = &self.link(i).node;
            n.state == BlockState::Free && n.size >= size
        });
        let i = found.ok_or(AllocError::NoSpace { size })?;
        let (offset, rest, next) = {
            let l = self.link(i);
            (l.node.offset, l.node.size - size, l.next)
        };
        if rest > 0 {
            let j = self.put(Link {
                node: HdmAllocNode {
                    pid: 0,
                    state: BlockState::Free,
                    size: rest,
                    offset: offset + size,
                },
                prev: Some(i),
                next,
            });
            if let Some(n) = next {
                self.link_mut(n).prev = Some(j);
            }
            self.link_mut(i).next = Some(j);
        }
        let node = &mut self.link_mut(i).node;
        node.pid = pid;
        node.state = BlockState::Busy;
        node.size = size;
        Ok(offset)
    }

    pub fn free(&mut self, pid: u32, offset: u64) -> Result<(), AllocError> {
        let i = self
            .indices()
            .find(|&i| {
                let n = &self.link(i).node;
                n.offset == offset && n.state == BlockState::Busy
            })
            .ok_or(AllocError::InvalidFree { offset })?;
        let owner = self.link(i).node.pid;
        if owner != pid {
            return Err(AllocError::Permission { offset, owner, pid });
        }
        let node = &mut self.link_mut(i).node;
        node.state = BlockState::Free;
        node.pid = 0;
        if let Some(n) = self.link(i).next {
            if self.link(n).node.state == BlockState::Free {
                self.absorb_next(i);
            }
        }
        if let Some(p) = self.link(i).prev {
            if self.link(p).node.state == BlockState::Free {
                self.absorb_next(p);
            }
        }
        Ok(())
    }

    /// Merges the successor of `i` into `i`.
    fn absorb_next(&mut self, i: usize) {
        let n = self.link(i).next.expect("successor exists");
        let gone = self.arena[n].take().expect("live list slot");
        self.spare.push(n);
        let l = self.link_mut(i);
        l.node.size += gone.node.size;
        l.next = gone.next;
        if let Some(nn) = gone.next {
            self.link_mut(nn).prev = Some(i);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.nodes()).expect("nodes serialize")
    }
}

/// The allocator behind its exclusive-access token. Operations never block:
/// a caller that finds the token taken gets [`AllocError::Busy`].
#[derive(Debug)]
pub struct HdmManager {
    list: Mutex<AllocList>,
}

impl HdmManager {
    pub fn new(hdm_size: u64) -> Self {
        HdmManager {
            list: Mutex::new(AllocList::new(hdm_size)),
        }
    }

    fn with<T>(&self, f: impl FnOnce(&mut AllocList) -> T) -> Result<T, AllocError> {
        match self.list.try_lock() {
            Ok(mut guard) => Ok(f(&mut guard)),
            Err(TryLockError::WouldBlock) => Err(AllocError::Busy),
            Err(TryLockError::Poisoned(p)) => Ok(f(&mut p.into_inner())),
        }
    }

    pub fn am_alloc(&self, pid: u32, size: u64) -> Result<u64, AllocError> {
        self.with(|l| l.alloc(pid, size))?
    }

    pub fn am_free(&self, pid: u32, offset: u64) -> Result<(), AllocError> {
        self.with(|l| l.free(pid, offset))?
    }

    pub fn nodes(&self) -> Result<Vec<HdmAllocNode>, AllocError> {
        self.with(|l| l.nodes())
    }

    pub fn dump_json(&self) -> Result<String, AllocError> {
        self.with(|l| l.to_json())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NumaNodeKind {
    DdrLocal,
    DdrRemote,
    CxlHdm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumaNode {
    pub id: usize,
    pub kind: NumaNodeKind,
    pub base: u64,
    pub size: u64,
    pub distance: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Policy {
    Bind { node: usize },
    Preferred { order: Vec<usize> },
    Interleave { nodes: Vec<usize>, weights: Vec<f64> },
}

impl Policy {
    pub fn validate(&self, node_count: usize) -> Result<(), String> {
        let nodes: &[usize] = match self {
            Policy::Bind { node } => std::slice::from_ref(node),
            Policy::Preferred { order } => order,
            Policy::Interleave { nodes, weights } => {
                if nodes.len() != weights.len() {
                    return Err("interleave nodes and weights differ in length".into());
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err("interleave weights must be non-negative".into());
                }
                if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err("interleave weights must sum to 1".into());
                }
                nodes
            }
        };
        if nodes.is_empty() {
            return Err("policy names no nodes".into());
        }
        if let Some(n) = nodes.iter().find(|&&n| n >= node_count) {
            return Err(format!("node {n} does not exist ({node_count} nodes)"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlaceError {
    #[error("node {node} has {free} free pages, {wanted} requested")]
    NodeExhausted { node: usize, free: u64, wanted: u64 },
    #[error("{wanted} pages requested but only {free} free across the policy's nodes")]
    Exhausted { free: u64, wanted: u64 },
    #[error("invalid policy: {0}")]
    BadPolicy(String),
}

/// Assigns each of `pages` pages to a node. `free` holds the free page count
/// per node id. Pure: identical inputs give identical placements.
pub fn km_place(pages: u64, policy: &Policy, free: &[u64]) -> Result<Vec<usize>, PlaceError> {
    policy.validate(free.len()).map_err(PlaceError::BadPolicy)?;
    match policy {
        Policy::Bind { node } => {
            if free[*node] < pages {
                return Err(PlaceError::NodeExhausted {
                    node: *node,
                    free: free[*node],
                    wanted: pages,
                });
            }
            Ok(vec![*node; pages as usize])
        }
        Policy::Preferred { order } => {
            let avail: u64 = order.iter().map(|&n| free[n]).sum();
            if avail < pages {
                return Err(PlaceError::Exhausted { free: avail, wanted: pages });
            }
            let mut out = Vec::with_capacity(pages as usize);
            for &n in order {
                let take = free[n].min(pages - out.len() as u64);
                out.extend(std::iter::repeat_n(n, take as usize));
            }
            Ok(out)
        }
        Policy::Interleave { nodes, weights } => {
            let avail: u64 = nodes.iter().map(|&n| free[n]).sum();
            if avail < pages {
                return Err(PlaceError::Exhausted { free: avail, wanted: pages });
            }
            // Smooth weighted round-robin; a full node drops out.
            let mut left: Vec<u64> = nodes.iter().map(|&n| free[n]).collect();
            let mut current = vec![0.0f64; nodes.len()];
            let mut out = Vec::with_capacity(pages as usize);
            while (out.len() as u64) < pages {
                let live: f64 = (0..nodes.len())
                    .filter(|&i| left[i] > 0)
                    .map(|i| weights[i])
                    .sum();
                let mut pick = None::<usize>;
                for i in 0..nodes.len() {
                    if left[i] == 0 {
                        continue;
                    }
                    current[i] += weights[i];
                    if pick.is_none_or(|p| current[i] > current[p] + 1e-12) {
                        pick = Some(i);
                    }
                }
                let p = match pick {
                    Some(p) if live > 0.0 => p,
                    // Only zero-weight nodes have room left.
                    _ => (0..nodes.len()).find(|&i| left[i] > 0).expect("capacity checked"),
                };
                current[p] -= live;
                left[p] -= 1;
                out.push(nodes[p]);
            }
            Ok(out)
        }
    }
}

/// Page-granular physical memory of every NUMA node, handed out bump-style.
#[derive(Clone, Debug)]
pub struct NodeSpace {
    nodes: Vec<NumaNode>,
    used_pages: Vec<u64>,
}

/// A virtually contiguous region backed by pages on possibly many nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub bytes: u64,
    pages: Vec<u64>,
    nodes: Vec<usize>,
}

impl Region {
    /// Physical address of byte `offset` within the region.
    pub fn phys(&self, offset: u64) -> u64 {
        debug_assert!(offset < self.bytes);
        self.pages[(offset / PAGE_BYTES) as usize] + offset % PAGE_BYTES
    }

    pub fn node_of(&self, offset: u64) -> usize {
        self.nodes[(offset / PAGE_BYTES) as usize]
    }

    pub fn page_nodes(&self) -> &[usize] {
        &self.nodes
    }
}

impl NodeSpace {
    pub fn new(nodes: Vec<NumaNode>) -> Self {
        let n = nodes.len();
        NodeSpace {
            nodes,
            used_pages: vec![0; n],
        }
    }

    pub fn nodes(&self) -> &[NumaNode] {
        &self.nodes
    }

    pub fn free_pages(&self) -> Vec<u64> {
        self.nodes
            .iter()
            .zip(&self.used_pages)
            .map(|(n, &u)| n.size / PAGE_BYTES - u)
            .collect()
    }

    pub fn map(&mut self, bytes: u64, policy: &Policy) -> Result<Region, PlaceError> {
        let rounded = round_to_page(bytes.max(1)).ok_or(PlaceError::Exhausted {
            free: 0,
            wanted: u64::MAX,
        })?;
        let count = rounded / PAGE_BYTES;
        let nodes = km_place(count, policy, &self.free_pages())?;
        let pages = nodes
            .iter()
            .map(|&n| {
                let addr = self.nodes[n].base + self.used_pages[n] * PAGE_BYTES;
                self.used_pages[n] += 1;
                addr
            })
            .collect();
        Ok(Region {
            bytes,
            pages,
            nodes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GB: u64 = 1 << 30;

    fn busy(l: &AllocList) -> Vec<(u64, u64)> {
        l.nodes()
            .iter()
            .filter(|n| n.state == BlockState::Busy)
            .map(|n| (n.offset, n.size))
            .collect()
    }

    #[test]
    fn first_alloc_on_empty_is_offset_zero() {
        let mut l = AllocList::new(16 * GB);
        assert_eq!(l.alloc(1, 4096), Ok(0));
    }

    #[test]
    fn first_fit_reuses_hole() {
        let mut l = AllocList::new(16 * GB);
        let a = l.alloc(1, 8192).unwrap();
        let b = l.alloc(1, 4096).unwrap();
        assert_eq!((a, b), (0, 8192));
        l.free(1, a).unwrap();
        assert_eq!(l.alloc(2, 4096), Ok(0));
    }

    #[test]
    fn oversize_fails_without_change() {
        let mut l = AllocList::new(16 * GB);
        let before = l.nodes();
        assert!(matches!(l.alloc(1, 16 * GB + 4096), Err(AllocError::NoSpace { .. })));
        assert_eq!(l.nodes(), before);
    }

    #[test]
    fn sizes_round_up_to_pages() {
        let mut l = AllocList::new(1 << 20);
        l.alloc(1, 1).unwrap();
        assert_eq!(busy(&l), vec![(0, 4096)]);
        assert_eq!(l.alloc(1, 0), Err(AllocError::ZeroSize));
    }

    #[test]
    fn freeing_only_block_restores_single_free_node() {
        let mut l = AllocList::new(GB);
        let a = l.alloc(3, 12345).unwrap();
        l.free(3, a).unwrap();
        assert_eq!(
            l.nodes(),
            vec![HdmAllocNode {
                pid: 0,
                state: BlockState::Free,
                size: GB,
                offset: 0
            }]
        );
    }

    #[test]
    fn free_middle_then_neighbours() {
        let mut l = AllocList::new(3 * 4096);
        let a = l.alloc(1, 4096).unwrap();
        let b = l.alloc(1, 4096).unwrap();
        let c = l.alloc(1, 4096).unwrap();
        l.free(1, b).unwrap();
        assert_eq!(l.nodes().len(), 3);
        l.free(1, a).unwrap();
        l.free(1, c).unwrap();
        assert_eq!(l.nodes().len(), 1);

        let mut l = AllocList::new(3 * 4096);
        let a = l.alloc(1, 4096).unwrap();
        let b = l.alloc(1, 4096).unwrap();
        let c = l.alloc(1, 4096).unwrap();
        l.free(1, a).unwrap();
        l.free(1, c).unwrap();
        assert_eq!(l.nodes().len(), 3);
        l.free(1, b).unwrap();
        assert_eq!(l.nodes().len(), 1);
    }

    #[test]
    fn free_errors() {
        let mut l = AllocList::new(GB);
        let a = l.alloc(1, 4096).unwrap();
        assert_eq!(
            l.free(2, a),
            Err(AllocError::Permission {
                offset: a,
                owner: 1,
                pid: 2
            })
        );
        assert_eq!(l.free(1, 4096), Err(AllocError::InvalidFree { offset: 4096 }));
        l.free(1, a).unwrap();
        assert_eq!(l.free(1, a), Err(AllocError::InvalidFree { offset: a }));
    }

    #[test]
    fn manager_rejects_reentrant_use() {
        let m = HdmManager::new(GB);
        let _guard = m.list.lock().unwrap();
        assert_eq!(m.am_alloc(1, 4096), Err(AllocError::Busy));
    }

    #[test]
    fn allocation_map_dumps_as_json() {
        let m = HdmManager::new(8192);
        m.am_alloc(4, 4096).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.dump_json().unwrap()).unwrap();
        assert_eq!(v[0]["state"], "BUSY");
        assert_eq!(v[0]["pid"], 4);
        assert_eq!(v[1]["offset"], 4096);
    }

    #[test]
    fn interleave_even_alternates() {
        let p = Policy::Interleave {
            nodes: vec![0, 1],
            weights: vec![0.5, 0.5],
        };
        assert_eq!(km_place(4, &p, &[100, 100]).unwrap(), vec![0, 1, 0, 1]);
    }

    #[test]
    fn interleave_three_to_one() {
        let p = Policy::Interleave {
            nodes: vec![0, 1],
            weights: vec![0.75, 0.25],
        };
        let v = km_place(8, &p, &[100, 100]).unwrap();
        assert_eq!(v, vec![0, 0, 1, 0, 0, 0, 1, 0]);
    }

    #[test]
    fn preferred_spills_in_order() {
        let p = Policy::Preferred { order: vec![0, 1] };
        assert_eq!(km_place(5, &p, &[2, 100]).unwrap(), vec![0, 0, 1, 1, 1]);
    }

    #[test]
    fn bind_fails_on_exhaustion() {
        let p = Policy::Bind { node: 1 };
        assert_eq!(
            km_place(5, &p, &[100, 4]),
            Err(PlaceError::NodeExhausted {
                node: 1,
                free: 4,
                wanted: 5
            })
        );
        let p = Policy::Preferred { order: vec![0, 1] };
        assert!(matches!(km_place(10, &p, &[3, 4]), Err(PlaceError::Exhausted { .. })));
    }

    #[test]
    fn interleave_weights_must_sum_to_one() {
        let p = Policy::Interleave {
            nodes: vec![0, 1],
            weights: vec![0.5, 0.4],
        };
        assert!(p.validate(2).is_err());
    }

    #[test]
    fn regions_map_pages_to_node_ranges() {
        let mut ns = NodeSpace::new(vec![
            NumaNode {
                id: 0,
                kind: NumaNodeKind::DdrLocal,
                base: 0,
                size: 8 * PAGE_BYTES,
                distance: 10,
            },
            NumaNode {
                id: 1,
                kind: NumaNodeKind::CxlHdm,
                base: GB,
                size: 8 * PAGE_BYTES,
                distance: 20,
            },
        ]);
        let r = ns
            .map(
                4 * PAGE_BYTES,
                &Policy::Interleave {
                    nodes: vec![0, 1],
                    weights: vec![0.5, 0.5],
                },
            )
            .unwrap();
        assert_eq!(r.phys(0), 0);
        assert_eq!(r.phys(PAGE_BYTES + 64), GB + 64);
        assert_eq!(r.phys(2 * PAGE_BYTES), PAGE_BYTES);
        assert_eq!(ns.free_pages(), vec![6, 6]);
    }
}
