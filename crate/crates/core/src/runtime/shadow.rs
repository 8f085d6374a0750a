use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// First address handed out by the heap. Addresses below it (including null)
/// never belong to an allocation.
pub const HEAP_BASE: u64 = 0x1000_0000;
/// Unmapped gap left after every allocation so that small overruns land
/// outside any block.
const REDZONE: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Created by the driver or by lazy materialization.
    Driver,
    /// Created by the program under test (`alloc`, `malloc`).
    Program,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    OutOfBounds,
    UseAfterFree,
    DoubleFree,
}

#[derive(Debug, Clone)]
pub struct Allocation {
    pub handle: u32,
    pub base: u64,
    pub size: u64,
    pub freed: bool,
    pub origin: Origin,
    data: Vec<u8>,
    assigned: Vec<bool>,
}

impl Allocation {
    pub fn assigned(&self) -> &[bool] {
        &self.assigned
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// Summary of one live allocation, as reported by [`ShadowHeap::leak_check`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveAllocation {
    pub handle: u32,
    pub base: u64,
    pub size: u64,
}

/// Allocation ledger with per-byte assigned bitmaps.
///
/// Freed blocks stay in the ledger so later accesses are reported as
/// use-after-free; their address range is never reissued.
#[derive(Debug, Clone)]
pub struct ShadowHeap {
    allocs: Vec<Allocation>,
    by_base: BTreeMap<u64, usize>,
    next_base: u64,
}

impl Default for ShadowHeap {
    fn default() -> Self {
        ShadowHeap {
            allocs: Vec::new(),
            by_base: BTreeMap::new(),
            next_base: HEAP_BASE,
        }
    }
}

impl ShadowHeap {
    pub fn allocate(&mut self, size: u64, origin: Origin) -> u64 {
        let base = self.next_base;
        self.next_base = (base + size + REDZONE).next_multiple_of(16);
        let handle = self.allocs.len() as u32;
        self.allocs.push(Allocation {
            handle,
            base,
            size,
            freed: false,
            origin,
            data: vec![0; size as usize],
            assigned: vec![false; size as usize],
        });
        self.by_base.insert(base, handle as usize);
        base
    }

    pub fn allocations(&self) -> &[Allocation] {
        &self.allocs
    }

    fn containing(&self, addr: u64) -> Option<usize> {
        let (_, &idx) = self.by_base.range(..=addr).next_back()?;
        let a = &self.allocs[idx];
        // A zero-sized block still owns its base address for lifetime checks.
        (addr < a.base + a.size.max(1)).then_some(idx)
    }

    /// Resolve `[addr, addr+len)` to (allocation, offset), checking bounds and
    /// lifetime.
    pub fn locate(&self, addr: u64, len: u64) -> Result<(usize, usize), Fault> {
        let idx = self.containing(addr).ok_or(Fault::OutOfBounds)?;
        let a = &self.allocs[idx];
        if a.freed {
            return Err(Fault::UseAfterFree);
        }
        let off = addr - a.base;
        match off.checked_add(len) {
            Some(end) if end <= a.size => Ok((idx, off as usize)),
            _ => Err(Fault::OutOfBounds),
        }
    }

    pub fn read(&self, addr: u64, len: u64) -> Result<&[u8], Fault> {
        let (idx, off) = self.locate(addr, len)?;
        Ok(&self.allocs[idx].data[off..off + len as usize])
    }

    pub fn write(&mut self, addr: u64, bytes: &[u8]) -> Result<(), Fault> {
        let (idx, off) = self.locate(addr, bytes.len() as u64)?;
        self.allocs[idx].data[off..off + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    /// Number of unassigned bytes in the range.
    pub fn unassigned_count(&self, addr: u64, len: u64) -> Result<usize, Fault> {
        let (idx, off) = self.locate(addr, len)?;
        Ok(self.allocs[idx].assigned[off..off + len as usize]
            .iter()
            .filter(|a| !**a)
            .count())
    }

    pub fn mark_assigned(&mut self, addr: u64, len: u64) -> Result<(), Fault> {
        let (idx, off) = self.locate(addr, len)?;
        self.allocs[idx].assigned[off..off + len as usize].fill(true);
        Ok(())
    }

    /// Write `bytes` into the unassigned positions of the range, in address
    /// order, and mark the whole range assigned. `bytes` must hold exactly
    /// as many bytes as there are unassigned positions.
    pub fn fill_unassigned(&mut self, addr: u64, len: u64, bytes: &[u8]) -> Result<(), Fault> {
        let (idx, off) = self.locate(addr, len)?;
        let a = &mut self.allocs[idx];
        let mut src = bytes.iter();
        for i in off..off + len as usize {
            if !a.assigned[i] {
                a.data[i] = *src.next().expect("fill_unassigned: too few bytes");
                a.assigned[i] = true;
            }
        }
        Ok(())
    }

    pub fn free(&mut self, addr: u64) -> Result<(), Fault> {
        let Some(&idx) = self.by_base.get(&addr) else {
            return Err(Fault::OutOfBounds);
        };
        let a = &mut self.allocs[idx];
        if a.freed {
            return Err(Fault::DoubleFree);
        }
        a.freed = true;
        Ok(())
    }

    /// Live allocations created by the program under test.
    pub fn leak_check(&self) -> Vec<LiveAllocation> {
        self.allocs
            .iter()
            .filter(|a| !a.freed && a.origin == Origin::Program)
            .map(|a| LiveAllocation {
                handle: a.handle,
                base: a.base,
                size: a.size,
            })
            .collect()
    }

    /// Free every live allocation. Returns the number of program-origin
    /// blocks released.
    pub fn release_all(&mut self) -> usize {
        let mut released = 0;
        for a in &mut self.allocs {
            if !a.freed {
                a.freed = true;
                if a.origin == Origin::Program {
                    released += 1;
                }
            }
        }
        released
    }
}
