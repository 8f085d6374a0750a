//! Coverage-guided fuzzing of synthesized drivers.

mod corpus;
mod mutate;
mod report;

use std::collections::BTreeSet;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hash::Fnv64;
use crate::runtime::{CrashKind, ExecLimits, ExecResult, ExecStatus, Machine, RuntimeError, DEFAULT_STEP_LIMIT};

pub use corpus::{Corpus, CorpusEntry};
pub use mutate::{mutate, write_le, Mutation, Mutator, INTERESTING, MAX_INPUT_LEN};
pub use report::{
    merge_reports, Coverage, CoverageReport, CrashRecord, CrashSignature, IdentityMismatch, PATH_DEFINITION,
    REPORT_SCHEMA,
};

pub const DEFAULT_SMOKE_TRIALS: usize = 256;
/// Each campaign input is its parent with 1 to this many stacked mutations,
/// so two-step edits across a coverage plateau are reachable.
pub const MAX_STACK: usize = 4;
/// Random smoke-filter inputs are at most this long.
pub const SMOKE_MAX_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict")]
pub enum SmokeVerdict {
    Valid,
    Invalid {
        kind: CrashKind,
        #[serde(with = "hex")]
        input: Vec<u8>,
    },
}

impl SmokeVerdict {
    pub fn is_valid(&self) -> bool {
        *self == SmokeVerdict::Valid
    }
}

/// Run `driver` on the empty input and `trials - 1` random short inputs.
/// Any crash except a step-limit hang makes the driver invalid.
pub fn smoke_filter(
    m: &Machine,
    driver: &str,
    trials: usize,
    seed: u64,
    step_limit: u64,
) -> Result<SmokeVerdict, RuntimeError> {
    let idx = m.function_index(driver)?;
    let limits = ExecLimits {
        step_limit,
        record: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..trials.max(1) {
        let input: Vec<u8> = if t == 0 {
            Vec::new()
        } else {
            let n = rng.gen_range(0..=SMOKE_MAX_LEN);
            (0..n).map(|_| rng.gen()).collect()
        };
        let r = m.execute_index(idx, &input, &limits);
        match r.status.crash_kind() {
            None | Some(CrashKind::StepLimit) => {}
            Some(kind) => return Ok(SmokeVerdict::Invalid { kind, input }),
        }
    }
    Ok(SmokeVerdict::Valid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Executions per driver.
    Execs(u64),
    /// Wall-clock seconds per driver.
    Secs(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub budget: Budget,
    pub seed: u64,
    pub workers: usize,
    pub step_limit: u64,
    pub max_input_len: usize,
    /// Record a progress point after every execution rather than only when
    /// coverage grows.
    pub trace_every_exec: bool,
    /// Run with event recording on (for observers that inspect events).
    pub record_events: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            budget: Budget::Execs(10_000),
            seed: 0,
            workers: 1,
            step_limit: DEFAULT_STEP_LIMIT,
            max_input_len: MAX_INPUT_LEN,
            trace_every_exec: false,
            record_events: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DriverTarget {
    pub name: String,
    /// Harvested (value, width) pairs for the interesting-constant mutator.
    pub dictionary: Vec<(u64, u64)>,
}

impl DriverTarget {
    pub fn new(name: impl Into<String>) -> Self {
        DriverTarget {
            name: name.into(),
            dictionary: Vec::new(),
        }
    }
}

/// Coverage after `execs` executions of one shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressPoint {
    pub execs: u64,
    pub blocks: usize,
    pub paths: usize,
}

#[derive(Debug, Clone)]
pub struct ShardOutcome {
    pub driver: String,
    pub worker: usize,
    pub corpus: Corpus,
    pub progress: Vec<ProgressPoint>,
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub report: CoverageReport,
    /// In (driver, worker) order.
    pub shards: Vec<ShardOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FuzzError {
    #[error("no drivers to fuzz")]
    NoDrivers,
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

/// Called after each execution with (driver, input, result).
pub type Observer<'a> = &'a (dyn Fn(&str, &[u8], &ExecResult) + Sync);

fn shard_seed(seed: u64, worker: usize, driver: &str) -> u64 {
    let mut h = Fnv64::default();
    for b in seed.to_le_bytes() {
        h.write_u32(u32::from(b));
    }
    h.write_u32(worker as u32);
    for b in driver.bytes() {
        h.write_u32(u32::from(b));
    }
    h.finish()
}

struct Shard<'a> {
    m: &'a Machine,
    idx: usize,
    driver: &'a str,
    worker: usize,
    key: String,
    execs: u64,
    deadline: Option<Instant>,
    cfg: &'a CampaignConfig,
    mutator: Mutator,
    observer: Option<Observer<'a>>,
}

impl Shard<'_> {
    fn run(self) -> (Coverage, ShardOutcome) {
        let mut rng = ChaCha8Rng::seed_from_u64(shard_seed(self.cfg.seed, self.worker, self.driver));
        let limits = ExecLimits {
            step_limit: self.cfg.step_limit,
            record: self.cfg.record_events,
        };
        let mut cov = Coverage::default();
        let mut corpus = Corpus::default();
        let mut progress = Vec::new();
        let mut n = 0u64;
        loop {
            let more = match self.deadline {
                Some(d) => Instant::now() < d,
                None => n < self.execs,
            };
            if !more {
                break;
            }
            let input = if n == 0 || corpus.is_empty() {
                Vec::new()
            } else {
                let entries = corpus.entries();
                let base = &entries[rng.gen_range(0..entries.len())].data;
                let other = &entries[rng.gen_range(0..entries.len())].data;
                let mut x = self.mutator.mutate(base, Some(other), &mut rng);
                for _ in 1..rng.gen_range(1..=MAX_STACK) {
                    x = self.mutator.mutate(&x, Some(other), &mut rng);
                }
                x
            };
            let r = self.m.execute_index(self.idx, &input, &limits);
            n += 1;
            if let Some(obs) = self.observer {
                obs(self.driver, &input, &r);
            }

            let before = cov.blocks.len();
            cov.blocks.extend(r.blocks.iter().copied());
            let new_blocks = cov.blocks.len() - before;
            let new_path = cov.paths.insert(r.path_hash);
            match r.status {
                ExecStatus::Ok => {
                    if new_blocks > 0 || new_path {
                        corpus.add(CorpusEntry {
                            data: input,
                            found_at: n - 1,
                            path_hash: r.path_hash,
                            new_blocks,
                        });
                    }
                }
                ExecStatus::Crash {
                    kind: CrashKind::StepLimit,
                    block,
                } => {
                    cov.hangs.insert(block);
                }
                ExecStatus::Crash { kind, block } => cov.add_crash(CrashRecord {
                    kind,
                    block,
                    driver: self.driver.to_string(),
                    input,
                }),
            }
            if self.cfg.trace_every_exec || new_blocks > 0 || new_path {
                progress.push(ProgressPoint {
                    execs: n,
                    blocks: cov.blocks.len(),
                    paths: cov.paths.len(),
                });
            }
        }
        cov.shards.insert(self.key, n);
        cov.refresh();
        (
            cov,
            ShardOutcome {
                driver: self.driver.to_string(),
                worker: self.worker,
                corpus,
                progress,
            },
        )
    }
}

/// Fuzz each driver with its own budget. With `workers > 1` each driver's
/// budget is split across independent workers whose reports are merged, so
/// the result does not depend on thread timing; with one worker and an
/// execution budget the whole campaign is deterministic.
pub fn run_campaign(
    m: &Machine,
    program_identity: &str,
    drivers: &[DriverTarget],
    cfg: &CampaignConfig,
) -> Result<CampaignOutcome, FuzzError> {
    run_campaign_observed(m, program_identity, drivers, cfg, None)
}

pub fn run_campaign_observed(
    m: &Machine,
    program_identity: &str,
    drivers: &[DriverTarget],
    cfg: &CampaignConfig,
    observer: Option<Observer<'_>>,
) -> Result<CampaignOutcome, FuzzError> {
    if drivers.is_empty() {
        return Err(FuzzError::NoDrivers);
    }
    let started = Instant::now();
    let workers = cfg.workers.max(1);
    let mut shards = Vec::new();
    for d in drivers {
        let idx = m.function_index(&d.name)?;
        let deadline = match cfg.budget {
            Budget::Secs(s) => Some(Instant::now() + Duration::from_secs_f64(s.max(0.0))),
            Budget::Execs(_) => None,
        };
        for w in 0..workers {
            let execs = match cfg.budget {
                Budget::Execs(n) => n / workers as u64 + u64::from((w as u64) < n % workers as u64),
                Budget::Secs(_) => 0,
            };
            let mut mutator = Mutator::new(&d.dictionary);
            mutator.max_len = cfg.max_input_len.max(1);
            shards.push(Shard {
                m,
                idx,
                driver: &d.name,
                worker: w,
                key: format!("seed{}/{}/w{}", cfg.seed, d.name, w),
                execs,
                deadline,
                cfg,
                mutator,
                observer,
            });
        }
    }

    // Drivers run one after another (a seconds budget is per driver); the
    // workers of one driver run in parallel.
    let mut results: Vec<(Coverage, ShardOutcome)> = Vec::new();
    let mut pending = shards.into_iter().peekable();
    while pending.peek().is_some() {
        let batch: Vec<Shard> = (0..workers).filter_map(|_| pending.next()).collect();
        if batch.len() == 1 {
            results.extend(batch.into_iter().map(Shard::run));
            continue;
        }
        let slot = Mutex::new(Vec::new());
        std::thread::scope(|s| {
            for (i, sh) in batch.into_iter().enumerate() {
                let slot = &slot;
                s.spawn(move || {
                    let r = sh.run();
                    slot.lock().unwrap().push((i, r));
                });
            }
        });
        let mut done = slot.into_inner().unwrap();
        done.sort_by_key(|(i, _)| *i);
        results.extend(done.into_iter().map(|(_, r)| r));
    }

    let mut report = CoverageReport::empty(program_identity);
    for d in drivers {
        report.drivers.entry(d.name.clone()).or_default();
    }
    let mut outcomes = Vec::new();
    for (cov, out) in results {
        report.absorb(&out.driver, &cov);
        outcomes.push(out);
    }
    report.wall_time = started.elapsed();
    Ok(CampaignOutcome {
        report,
        shards: outcomes,
    })
}

/// Distinct blocks reached by replaying `inputs`.
pub fn replay_blocks(m: &Machine, driver: &str, inputs: &[Vec<u8>]) -> Result<BTreeSet<crate::ir::BlockId>, RuntimeError> {
    let idx = m.function_index(driver)?;
    let mut out = BTreeSet::new();
    for i in inputs {
        out.extend(m.execute_index(idx, i, &ExecLimits::default()).blocks);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
