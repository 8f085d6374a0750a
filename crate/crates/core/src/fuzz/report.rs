use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ir::BlockId;
use crate::runtime::CrashKind;

pub const REPORT_SCHEMA: u32 = 1;

/// What "paths" counts in this report.
pub const PATH_DEFINITION: &str = "distinct FNV-1a hashes of the first 4096 executed block ids";

/// A unique bug: crash kind plus the block the crash happened in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CrashSignature {
    pub kind: CrashKind,
    pub block: BlockId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub kind: CrashKind,
    pub block: BlockId,
    pub driver: String,
    #[serde(with = "hex")]
    pub input: Vec<u8>,
}

impl CrashRecord {
    pub fn signature(&self) -> CrashSignature {
        CrashSignature {
            kind: self.kind,
            block: self.block,
        }
    }

    fn rank(&self) -> (usize, &[u8], &str) {
        (self.input.len(), &self.input, &self.driver)
    }
}

/// Coverage for one driver, or for the whole program. All sets are sorted
/// so serialized reports compare byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub block_count: usize,
    pub path_count: usize,
    pub bug_count: usize,
    pub hang_count: usize,
    pub executions: u64,
    pub blocks: BTreeSet<BlockId>,
    pub paths: BTreeSet<u64>,
    /// Keyed by `kind@block`, the smallest input seen for it.
    pub crashes: BTreeMap<String, CrashRecord>,
    /// Blocks where a run hit the step limit.
    pub hangs: BTreeSet<BlockId>,
    /// Executions per shard (one shard = one worker on one driver of one
    /// campaign). Merging takes the maximum per shard, so merging a report
    /// with itself does not double count.
    pub shards: BTreeMap<String, u64>,
}

fn crash_key(s: CrashSignature) -> String {
    format!("{}@{}", s.kind, s.block)
}

impl Coverage {
    pub fn refresh(&mut self) {
        self.block_count = self.blocks.len();
        self.path_count = self.paths.len();
        self.bug_count = self.crashes.len();
        self.hang_count = self.hangs.len();
        self.executions = self.shards.values().sum();
    }

    pub fn add_crash(&mut self, rec: CrashRecord) {
        let key = crash_key(rec.signature());
        match self.crashes.get(&key) {
            Some(old) if old.rank() <= rec.rank() => {}
            _ => {
                self.crashes.insert(key, rec);
            }
        }
    }

    pub fn merge(&mut self, other: &Coverage) {
        self.blocks.extend(other.blocks.iter().copied());
        self.paths.extend(other.paths.iter().copied());
        self.hangs.extend(other.hangs.iter().copied());
        for rec in other.crashes.values() {
            self.add_crash(rec.clone());
        }
        for (k, &n) in &other.shards {
            let e = self.shards.entry(k.clone()).or_insert(0);
            *e = (*e).max(n);
        }
        self.refresh();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub schema: u32,
    /// [`crate::ir::Program::identity`] of the fuzzed program.
    pub program: String,
    pub path_definition: String,
    pub total: Coverage,
    pub drivers: BTreeMap<String, Coverage>,
    /// Not serialized: it would make otherwise identical reports differ.
    #[serde(skip)]
    pub wall_time: std::time::Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot merge reports of different programs ({0} vs {1})")]
pub struct IdentityMismatch(pub String, pub String);

impl CoverageReport {
    pub fn empty(program: impl Into<String>) -> Self {
        CoverageReport {
            schema: REPORT_SCHEMA,
            program: program.into(),
            path_definition: PATH_DEFINITION.to_string(),
            total: Coverage::default(),
            drivers: BTreeMap::new(),
            wall_time: Default::default(),
        }
    }

    /// Merge one driver's coverage into the per-driver table and the total.
    pub fn absorb(&mut self, driver: &str, cov: &Coverage) {
        self.drivers.entry(driver.to_string()).or_default().merge(cov);
        self.total.merge(cov);
    }

    pub fn bugs(&self) -> impl Iterator<Item = &CrashRecord> {
        self.total.crashes.values()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Union of two reports of the same program. Associative, commutative and
/// idempotent; `CoverageReport::empty` of the same program is the identity.
pub fn merge_reports(a: &CoverageReport, b: &CoverageReport) -> Result<CoverageReport, IdentityMismatch> {
    if a.program != b.program {
        return Err(IdentityMismatch(a.program.clone(), b.program.clone()));
    }
    let mut out = a.clone();
    for (name, cov) in &b.drivers {
        out.drivers.entry(name.clone()).or_default().merge(cov);
    }
    out.total.merge(&b.total);
    out.wall_time = a.wall_time.max(b.wall_time);
    Ok(out)
}
