//! Front end for the drivergen pipeline: locate entries, synthesize
//! drivers, smoke-filter them, fuzz the survivors and write the artifacts.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use drivergen::fuzz::{
    run_campaign, smoke_filter, CampaignConfig, CampaignOutcome, CoverageReport, CrashRecord, DriverTarget,
    SmokeVerdict, MAX_INPUT_LEN,
};
use drivergen::ir::{parse_module, render_module, Program};
use drivergen::locator::{rank_entries, RankedEntry};
use drivergen::runtime::Machine;
use drivergen::synth::{
    emit_pseudo_source, synthesize_composite_driver, synthesize_driver, DriverSpec, SynthOptions,
};
use serde::Serialize;

pub use config::Config;

/// Exit code when every synthesized driver was rejected.
pub const EXIT_ALL_INVALID: i32 = 2;

/// Parse and link `.mir` files. Diagnostics carry the file name.
pub fn load_program(paths: &[PathBuf]) -> Result<Program> {
    if paths.is_empty() {
        return Err(anyhow!("no input files"));
    }
    let mut modules = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m = parse_module(&text).map_err(|e| {
            let lines: Vec<String> = e.diagnostics.iter().map(|d| format!("{}:{d}", path.display())).collect();
            anyhow!(lines.join("\n"))
        })?;
        modules.push(m);
    }
    if modules.len() == 1 {
        return Ok(modules.pop().unwrap());
    }
    Program::link(modules).map_err(|e| anyhow!("{e}"))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Ranking of the top `config.max_entries` functions.
pub fn cmd_analyze(config: &Config) -> Result<Vec<RankedEntry>> {
    let p = load_program(&config.inputs)?;
    Ok(rank_entries(&p, config.max_entries))
}

pub fn synth_options(config: &Config) -> SynthOptions {
    SynthOptions {
        alloc_size: config.alloc_size,
        harvest: config.harvest,
    }
}

/// File name of a persisted crash input.
pub fn crash_file_name(rec: &CrashRecord) -> String {
    format!("{}-{}-{}.bin", rec.kind, rec.driver, rec.block)
}

#[derive(Debug, Clone, Serialize)]
pub struct DriverSummary {
    pub driver: String,
    pub entries: Vec<String>,
    pub verdict: SmokeVerdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub schema: u32,
    pub program: String,
    pub ranking: Vec<RankedEntry>,
    pub drivers: Vec<DriverSummary>,
    pub bugs: usize,
    pub hangs: usize,
    pub executions: u64,
}

pub struct PipelineOutcome {
    pub program: Program,
    pub specs: Vec<DriverSpec>,
    pub summary: PipelineSummary,
    pub report: CoverageReport,
    pub campaign: Option<CampaignOutcome>,
    pub exit_code: i32,
}

impl PipelineOutcome {
    /// Drivers rejected by the smoke filter, with reasons.
    pub fn invalid(&self) -> impl Iterator<Item = &DriverSummary> {
        self.summary.drivers.iter().filter(|d| !d.verdict.is_valid())
    }

    pub fn valid(&self) -> impl Iterator<Item = &DriverSummary> {
        self.summary.drivers.iter().filter(|d| d.verdict.is_valid())
    }
}

/// locate → synthesize → smoke-filter → fuzz, writing into
/// `config.output_dir`:
///
/// * `program.mir`: the input program with every driver added
/// * `<driver>.mir`, `<driver>.txt`, `<driver>.json`: each driver alone, its
///   pseudo-C rendering and its argument plan
/// * `report.json`: the merged coverage report
/// * `summary.json`: ranking, smoke verdicts and totals
/// * `crashes/<Kind>-<driver>-b<block>.bin` and `corpus/<driver>/NNNN.bin`
pub fn cmd_pipeline(config: &Config) -> Result<PipelineOutcome> {
    config.check()?;
    let base = load_program(&config.inputs)?;
    let opts = synth_options(config);
    let ranking = rank_entries(&base, config.max_entries);

    let mut jobs: Vec<Vec<String>> = if config.entries.is_empty() {
        ranking.iter().map(|r| vec![r.function.clone()]).collect()
    } else {
        config.entries.iter().map(|e| vec![e.clone()]).collect()
    };
    jobs.extend(config.composites.iter().cloned());
    let mut seen = std::collections::HashSet::new();
    jobs.retain(|j| seen.insert(j.clone()));

    let out = &config.output_dir;
    let mut program = base.clone();
    let mut specs = Vec::new();
    for job in &jobs {
        let names: Vec<&str> = job.iter().map(String::as_str).collect();
        let alone = if names.len() == 1 {
            synthesize_driver(&base, names[0], &opts)
        } else {
            synthesize_composite_driver(&base, &names, &opts)
        }?;
        let (with_driver, spec) = alone;
        let driver_fn = with_driver.function(&spec.driver).expect("driver present").clone();
        write(&out.join(format!("{}.mir", spec.driver)), render_module(&with_driver))?;
        write(&out.join(format!("{}.txt", spec.driver)), emit_pseudo_source(&spec, &with_driver))?;
        write(&out.join(format!("{}.json", spec.driver)), to_json(&spec))?;

        // Same driver in the cumulative program; hooks are idempotent so
        // instrumenting again is harmless.
        program.functions.push(driver_fn);
        program = drivergen::synth::instrument_lazy_store(&program, &[&spec.driver]);
        specs.push(spec);
    }
    write(&out.join("program.mir"), render_module(&program))?;

    let machine = Machine::with_alloc_size(&program, config.alloc_size)?;
    let mut drivers = Vec::new();
    let mut targets = Vec::new();
    for spec in &specs {
        let verdict = smoke_filter(&machine, &spec.driver, config.smoke_trials, config.seed, config.step_limit)?;
        if verdict.is_valid() {
            targets.push(DriverTarget {
                name: spec.driver.clone(),
                dictionary: spec.dictionary(),
            });
        }
        drivers.push(DriverSummary {
            driver: spec.driver.clone(),
            entries: spec.entries.iter().map(|e| e.entry.clone()).collect(),
            verdict,
        });
    }

    let identity = program.identity();
    let (report, campaign, exit_code) = if targets.is_empty() {
        (CoverageReport::empty(&identity), None, EXIT_ALL_INVALID)
    } else {
        let cfg = CampaignConfig {
            budget: config.budget,
            seed: config.seed,
            workers: config.workers,
            step_limit: config.step_limit,
            max_input_len: MAX_INPUT_LEN,
            ..Default::default()
        };
        let c = run_campaign(&machine, &identity, &targets, &cfg)?;
        (c.report.clone(), Some(c), 0)
    };

    write(&out.join("report.json"), report.to_json() + "\n")?;
    for rec in report.bugs() {
        write(&out.join("crashes").join(crash_file_name(rec)), &rec.input)?;
    }
    if let Some(c) = &campaign {
        for shard in &c.shards {
            let dir = out.join("corpus").join(&shard.driver);
            for (i, e) in shard.corpus.entries().iter().enumerate() {
                write(&dir.join(format!("w{}-{i:04}.bin", shard.worker)), &e.data)?;
            }
        }
    }

    let summary = PipelineSummary {
        schema: drivergen::fuzz::REPORT_SCHEMA,
        program: identity,
        ranking,
        drivers,
        bugs: report.total.bug_count,
        hangs: report.total.hang_count,
        executions: report.total.executions,
    };
    write(&out.join("summary.json"), to_json(&summary))?;
    Ok(PipelineOutcome {
        program,
        specs,
        summary,
        report,
        campaign,
        exit_code,
    })
}

/// Human-readable table of smoke verdicts.
pub fn verdict_table(drivers: &[DriverSummary]) -> String {
    let mut s = String::new();
    for d in drivers {
        let v = match &d.verdict {
            SmokeVerdict::Valid => "valid".to_string(),
            SmokeVerdict::Invalid { kind, input } => format!("invalid: {kind} on {} byte input", input.len()),
        };
        s.push_str(&format!("{:<40} {v}\n", d.driver));
    }
    s
}
