//! Interpreter for instrumented programs.
//!
//! Every access is checked against a [`ShadowHeap`]: out-of-range and
//! dangling accesses become crashes, never host faults. The lazy-store hooks
//! materialize unassigned memory from the fuzz input on first load, using
//! the loaded type to decide what to build (scalar bytes, a fresh pointer, or
//! a member-wise aggregate).

mod interp;
mod lower;
mod shadow;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hash::Fnv64;
use crate::ir::{BlockId, Program};

pub use lower::{func_addr, func_index, FUNC_BASE, TRAP_FUNC};
pub use shadow::{Allocation, Fault, LiveAllocation, Origin, ShadowHeap, HEAP_BASE};

/// Default instruction budget per execution.
pub const DEFAULT_STEP_LIMIT: u64 = 1_000_000;
/// Default lazy allocation size (`SIZE`): pointers materialized by the
/// runtime get `max(pointee size, SIZE)` bytes.
pub const DEFAULT_ALLOC_SIZE: u64 = 64;
/// Number of leading blocks of a trace that feed the path signature.
pub const PATH_PREFIX: usize = 4096;
/// Calls nested deeper than this end the run like an exhausted step budget.
pub const MAX_CALL_DEPTH: usize = 4096;
/// Program allocation requests above this size fail and return null.
pub const MAX_ALLOC: u64 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CrashKind {
    OutOfBounds,
    UseAfterFree,
    DoubleFree,
    Trap,
    InvalidDriver,
    StepLimit,
}

impl CrashKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CrashKind::OutOfBounds => "OutOfBounds",
            CrashKind::UseAfterFree => "UseAfterFree",
            CrashKind::DoubleFree => "DoubleFree",
            CrashKind::Trap => "Trap",
            CrashKind::InvalidDriver => "InvalidDriver",
            CrashKind::StepLimit => "StepLimit",
        }
    }
}

impl fmt::Display for CrashKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<Fault> for CrashKind {
    fn from(f: Fault) -> Self {
        match f {
            Fault::OutOfBounds => CrashKind::OutOfBounds,
            Fault::UseAfterFree => CrashKind::UseAfterFree,
            Fault::DoubleFree => CrashKind::DoubleFree,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum ExecStatus {
    Ok,
    Crash { kind: CrashKind, block: BlockId },
}

impl ExecStatus {
    pub fn crash_kind(&self) -> Option<CrashKind> {
        match self {
            ExecStatus::Ok => None,
            ExecStatus::Crash { kind, .. } => Some(*kind),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    /// `input` instruction in the driver.
    Driver,
    /// Lazy materialization in a load hook.
    LoadHook,
}

/// Observable runtime events, recorded when [`ExecLimits::record`] is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// A whole scalar read from the input at `cursor`.
    Scalar {
        source: ValueSource,
        cursor: usize,
        size: u64,
        value: u64,
    },
    /// Raw bytes read from the input at `cursor` (range fills and partially
    /// assigned scalars).
    Bytes { cursor: usize, addr: u64, bytes: Vec<u8> },
    /// A fresh, unassigned driver-owned block.
    Pointer { base: u64, size: u64 },
    /// Call of an in-module function with its argument values.
    Call { function: String, args: Vec<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecLimits {
    pub step_limit: u64,
    /// Record the full block trace and [`Event`]s.
    pub record: bool,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            step_limit: DEFAULT_STEP_LIMIT,
            record: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub status: ExecStatus,
    /// Distinct blocks executed, ascending.
    pub blocks: Vec<BlockId>,
    pub path_hash: u64,
    /// Input bytes consumed; never more than the input length.
    pub consumed: usize,
    /// Set when a read ran past the end of the input.
    pub exhausted: bool,
    /// Live program allocations when the leak guard ran, if it ran.
    pub leaks_before_epilogue: Option<usize>,
    /// Live program allocations when execution stopped.
    pub live_after: usize,
    /// Loads that observed bytes neither stored nor materialized.
    pub shadow_violations: u64,
    pub steps: u64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<BlockId>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub events: Vec<Event>,
}

impl ExecResult {
    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuntimeError {
    #[error("no function named {0}")]
    UnknownFunction(String),
    #[error("{0} is external and cannot be executed")]
    ExternalEntry(String),
    #[error("cannot lower program: {0}")]
    Lowering(String),
}

/// The fuzzer-supplied byte buffer with a read cursor.
#[derive(Debug, Clone)]
pub struct FuzzInput<'a> {
    data: &'a [u8],
    cursor: usize,
    exhausted: bool,
}

impl<'a> FuzzInput<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        FuzzInput {
            data,
            cursor: 0,
            exhausted: false,
        }
    }

    /// Read `n` bytes; bytes past the end read as zero and set the exhausted
    /// flag without advancing the cursor.
    pub fn read(&mut self, n: usize) -> Vec<u8> {
        let avail = (self.data.len() - self.cursor).min(n);
        let mut out = Vec::with_capacity(n);
        out.extend_from_slice(&self.data[self.cursor..self.cursor + avail]);
        self.cursor += avail;
        if avail < n {
            self.exhausted = true;
            out.resize(n, 0);
        }
        out
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn exhausted(&self) -> bool {
        self.exhausted
    }
}

/// Stable hash of a block trace, over its first [`PATH_PREFIX`] blocks.
pub fn path_signature(trace: &[BlockId]) -> u64 {
    let mut h = Fnv64::default();
    for b in trace.iter().take(PATH_PREFIX) {
        h.write_u32(b.0);
    }
    h.finish()
}

/// Live program-origin allocations in a heap.
pub fn leak_check(heap: &ShadowHeap) -> Vec<LiveAllocation> {
    heap.leak_check()
}

/// A lowered program ready to run many inputs. Immutable and `Sync`; share
/// one across worker threads.
#[derive(Debug, Clone)]
pub struct Machine {
    lowered: lower::Lowered,
    alloc_size: u64,
}

impl Machine {
    pub fn new(p: &Program) -> Result<Self, RuntimeError> {
        Self::with_alloc_size(p, DEFAULT_ALLOC_SIZE)
    }

    pub fn with_alloc_size(p: &Program, alloc_size: u64) -> Result<Self, RuntimeError> {
        Ok(Machine {
            lowered: lower::lower(p, alloc_size)?,
            alloc_size,
        })
    }

    pub fn alloc_size(&self) -> u64 {
        self.alloc_size
    }

    pub fn function_index(&self, name: &str) -> Result<usize, RuntimeError> {
        let idx = *self
            .lowered
            .by_name
            .get(name)
            .ok_or_else(|| RuntimeError::UnknownFunction(name.to_string()))?;
        if self.lowered.funcs[idx].ext.is_some() {
            return Err(RuntimeError::ExternalEntry(name.to_string()));
        }
        Ok(idx)
    }

    pub fn block_count(&self) -> u32 {
        self.lowered.block_count
    }

    pub fn execute(&self, driver: &str, input: &[u8], limits: &ExecLimits) -> Result<ExecResult, RuntimeError> {
        let idx = self.function_index(driver)?;
        Ok(self.execute_index(idx, input, limits))
    }

    /// Run function `idx` (from [`Machine::function_index`]) on `input`.
    pub fn execute_index(&self, idx: usize, input: &[u8], limits: &ExecLimits) -> ExecResult {
        interp::run(&self.lowered, idx, input, limits)
    }
}

/// One-shot execution: lower `p` and run `driver` on `input`.
pub fn execute(p: &Program, driver: &str, input: &[u8], limits: &ExecLimits) -> Result<ExecResult, RuntimeError> {
    Machine::new(p)?.execute(driver, input, limits)
}
