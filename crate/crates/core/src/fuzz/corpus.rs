use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::hash::fnv1a64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    #[serde(with = "hex")]
    pub data: Vec<u8>,
    /// Execution index (within its shard) at which the input was admitted.
    pub found_at: u64,
    pub path_hash: u64,
    pub new_blocks: usize,
}

/// Admitted inputs, deduplicated by content.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
    hashes: HashSet<u64>,
}

impl Corpus {
    /// Returns false if an identical input is already present.
    pub fn add(&mut self, entry: CorpusEntry) -> bool {
        if !self.hashes.insert(fnv1a64(&entry.data)) {
            return false;
        }
        self.entries.push(entry);
        true
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
