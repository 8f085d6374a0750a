use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Longest input a mutation may produce.
pub const MAX_INPUT_LEN: usize = 4096;

/// (value, width in bytes) written little-endian by the interesting-constant
/// operator, before any harvested ones.
pub const INTERESTING: [(u64, u64); 4] = [(0, 1), (1, 1), (0xFF, 1), (0x7FFF_FFFF, 4)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mutation {
    BitFlip,
    ByteSet,
    Insert,
    Delete,
    Duplicate,
    Splice,
    Interesting,
}

impl Mutation {
    pub const ALL: [Mutation; 7] = [
        Mutation::BitFlip,
        Mutation::ByteSet,
        Mutation::Insert,
        Mutation::Delete,
        Mutation::Duplicate,
        Mutation::Splice,
        Mutation::Interesting,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutator {
    pub max_len: usize,
    /// Built-in constants followed by harvested ones.
    constants: Vec<(u64, u64)>,
}

impl Default for Mutator {
    fn default() -> Self {
        Mutator::new(&[])
    }
}

impl Mutator {
    pub fn new(dictionary: &[(u64, u64)]) -> Self {
        let mut constants = INTERESTING.to_vec();
        for &(v, w) in dictionary {
            let w = w.clamp(1, 8);
            if !constants.contains(&(v, w)) {
                constants.push((v, w));
            }
        }
        Mutator {
            max_len: MAX_INPUT_LEN,
            constants,
        }
    }

    pub fn constants(&self) -> &[(u64, u64)] {
        &self.constants
    }

    /// One random mutation. `other` is the splice partner, if any.
    pub fn mutate<R: Rng>(&self, input: &[u8], other: Option<&[u8]>, rng: &mut R) -> Vec<u8> {
        let op = *Mutation::ALL.choose(rng).unwrap();
        self.apply(op, input, other, rng)
    }

    /// Apply `op`; operators that cannot act on the input (flipping a bit of
    /// nothing, growing a full input) fall back to one that can.
    pub fn apply<R: Rng>(&self, op: Mutation, input: &[u8], other: Option<&[u8]>, rng: &mut R) -> Vec<u8> {
        let mut out: Vec<u8> = input[..input.len().min(self.max_len)].to_vec();
        let full = out.len() >= self.max_len;
        let op = match op {
            Mutation::BitFlip | Mutation::ByteSet | Mutation::Delete | Mutation::Duplicate if out.is_empty() => {
                Mutation::Insert
            }
            Mutation::Insert | Mutation::Duplicate if full => Mutation::ByteSet,
            Mutation::Splice if other.is_none_or(|o| o.is_empty()) => {
                if out.is_empty() {
                    Mutation::Insert
                } else if full {
                    Mutation::ByteSet
                } else {
                    Mutation::Duplicate
                }
            }
            op => op,
        };
        match op {
            Mutation::BitFlip => {
                let i = rng.gen_range(0..out.len());
                out[i] ^= 1 << rng.gen_range(0..8);
            }
            Mutation::ByteSet => {
                let i = rng.gen_range(0..out.len());
                out[i] = rng.gen();
            }
            Mutation::Insert => {
                let i = rng.gen_range(0..=out.len());
                out.insert(i, rng.gen());
            }
            Mutation::Delete => {
                let i = rng.gen_range(0..out.len());
                out.remove(i);
            }
            Mutation::Duplicate => {
                let len = rng.gen_range(1..=out.len().min(32));
                let start = rng.gen_range(0..=out.len() - len);
                let block = out[start..start + len].to_vec();
                let at = rng.gen_range(0..=out.len());
                out.splice(at..at, block);
                out.truncate(self.max_len);
            }
            Mutation::Splice => {
                let other = other.unwrap_or_default();
                let cut = rng.gen_range(0..=out.len());
                let from = rng.gen_range(0..other.len());
                out.truncate(cut);
                out.extend_from_slice(&other[from..]);
                out.truncate(self.max_len);
            }
            Mutation::Interesting => {
                let (value, width) = *self.constants.choose(rng).unwrap();
                let at = rng.gen_range(0..=out.len());
                write_le(&mut out, at, value, width as usize, self.max_len);
            }
        }
        out
    }
}

/// Write `value` as `width` little-endian bytes at `at`, growing the buffer
/// if needed; the write is shifted left if it would pass `max_len`.
pub fn write_le(buf: &mut Vec<u8>, at: usize, value: u64, width: usize, max_len: usize) {
    let width = width.min(8).min(max_len);
    let at = at.min(max_len - width);
    if buf.len() < at + width {
        buf.resize(at + width, 0);
    }
    buf[at..at + width].copy_from_slice(&value.to_le_bytes()[..width]);
}

/// One mutation with the built-in constants only.
pub fn mutate<R: Rng>(input: &[u8], rng: &mut R) -> Vec<u8> {
    Mutator::default().mutate(input, None, rng)
}
