//! Line-oriented `key = value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored. `input`, `entry` and
//! `composite` may repeat; `input` also accepts a comma-separated list.
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use drivergen::fuzz::{Budget, DEFAULT_SMOKE_TRIALS};
use drivergen::runtime::{DEFAULT_ALLOC_SIZE, DEFAULT_STEP_LIMIT};
use serde::Serialize;

pub const MIN_ALLOC_SIZE: u64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub inputs: Vec<PathBuf>,
    /// Explicit entries; when empty the locator picks `max_entries`.
    pub entries: Vec<String>,
    /// Extra drivers, each calling several entries in order.
    pub composites: Vec<Vec<String>>,
    pub max_entries: usize,
    pub alloc_size: u64,
    pub smoke_trials: usize,
    pub budget: Budget,
    pub seed: u64,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub harvest: bool,
    pub step_limit: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            inputs: Vec::new(),
            entries: Vec::new(),
            composites: Vec::new(),
            max_entries: 8,
            alloc_size: DEFAULT_ALLOC_SIZE,
            smoke_trials: DEFAULT_SMOKE_TRIALS,
            budget: Budget::Execs(10_000),
            seed: 1,
            workers: 1,
            output_dir: PathBuf::from("drivergen-out"),
            harvest: true,
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => bail!("expected a boolean, got {v:?}"),
    }
}

fn names(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Config::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Config> {
        let mut c = Config::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected key = value", n + 1);
            };
            c.set(k.trim(), v.trim(), base)
                .with_context(|| format!("line {}", n + 1))?;
        }
        c.check()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<()> {
        let num = |v: &str| v.parse::<u64>().with_context(|| format!("{key}: expected a non-negative integer"));
        match key {
            "input" => self.inputs.extend(names(v).into_iter().map(|p| base.join(p))),
            "entry" => self.entries.extend(names(v)),
            "composite" => self.composites.push(names(v)),
            "max_entries" => self.max_entries = num(v)? as usize,
            "alloc_size" => self.alloc_size = num(v)?,
            "smoke_trials" => self.smoke_trials = num(v)? as usize,
            "budget_execs" => self.budget = Budget::Execs(num(v)?),
            "budget_secs" => {
                let s: f64 = v.parse().context("budget_secs: expected a number")?;
                if !(s >= 0.0) {
                    bail!("budget_secs must be non-negative");
                }
                self.budget = Budget::Secs(s);
            }
            "seed" => self.seed = num(v)?,
            "workers" => self.workers = num(v)? as usize,
            "output_dir" => self.output_dir = base.join(v),
            "harvest" => self.harvest = parse_bool(v)?,
            "step_limit" => self.step_limit = num(v)?,
            _ => bail!("unknown key {key:?}"),
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        if self.alloc_size < MIN_ALLOC_SIZE {
            bail!("alloc_size must be at least {MIN_ALLOC_SIZE}");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.smoke_trials == 0 {
            bail!("smoke_trials must be at least 1");
        }
        if let Some(c) = self.composites.iter().find(|c| c.len() < 2) {
            bail!("composite {c:?} needs at least two entries");
        }
        Ok(())
    }
}
