use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use drivergen::fuzz::{
    merge_reports, run_campaign, smoke_filter, Budget, CampaignConfig, CoverageReport, DriverTarget, SmokeVerdict,
    DEFAULT_SMOKE_TRIALS,
};
use drivergen::ir::render_module;
use drivergen::locator::{rank_entries, DRIVER_PREFIX};
use drivergen::runtime::{ExecLimits, Machine, DEFAULT_ALLOC_SIZE, DEFAULT_STEP_LIMIT};
use drivergen::synth::{
    driver_dictionary, emit_pseudo_source, instrument_lazy_store, synthesize_composite_driver, synthesize_driver,
    SynthOptions,
};
use drivergen_cli::{
    cmd_analyze, cmd_pipeline, crash_file_name, load_program, to_json, verdict_table, write, Config, EXIT_ALL_INVALID,
};

#[derive(Parser)]
#[command(name = "drivergen", version, about = "Synthesize and fuzz drivers for .mir libraries")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Rank functions as fuzzing entries.
    Analyze {
        files: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// How many entries to list.
        #[arg(long = "max")]
        max: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check .mir files and print them in canonical form.
    Parse {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Only check; print nothing on success.
        #[arg(long)]
        check: bool,
    },
    /// Add a driver to a program.
    Synth(SynthArgs),
    /// Fuzz drivers already present in a program.
    Fuzz(FuzzArgs),
    /// Run one driver on one input.
    Exec {
        program: PathBuf,
        #[arg(long)]
        driver: String,
        #[arg(long)]
        input: PathBuf,
        /// Print the executed blocks before the result.
        #[arg(long)]
        trace: bool,
        #[arg(long, default_value_t = DEFAULT_ALLOC_SIZE)]
        alloc_size: u64,
        #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
        step_limit: u64,
    },
    /// Merge coverage reports and summarize them.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Locate, synthesize, filter and fuzz in one go.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Entry to drive; two or more make one composite driver.
    #[arg(long = "entry")]
    entries: Vec<String>,
    /// Drive each of the top N ranked functions instead.
    #[arg(long, conflicts_with = "entries")]
    top: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ALLOC_SIZE)]
    alloc_size: u64,
    #[arg(long)]
    no_harvest: bool,
    /// Where to write the program with the drivers (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    pseudo: Option<PathBuf>,
    /// Where to write the driver specs as JSON (default: next to --out).
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long, conflicts_with = "budget_secs")]
    budget_execs: Option<u64>,
    #[arg(long)]
    budget_secs: Option<f64>,
}

impl BudgetArgs {
    fn get(&self) -> Option<Budget> {
        match (self.budget_execs, self.budget_secs) {
            (Some(n), _) => Some(Budget::Execs(n)),
            (None, Some(s)) => Some(Budget::Secs(s)),
            _ => None,
        }
    }
}

#[derive(Args)]
struct FuzzArgs {
    program: PathBuf,
    /// Driver to fuzz (repeatable); default: every driver in the program.
    #[arg(long = "driver")]
    drivers: Vec<String>,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Directory for admitted corpus inputs.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for crash inputs.
    #[arg(long, default_value = "crashes")]
    crashes: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALLOC_SIZE)]
    alloc_size: u64,
    #[arg(long, default_value_t = DEFAULT_SMOKE_TRIALS)]
    smoke_trials: usize,
    #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
    step_limit: u64,
    /// Do not seed the mutator with harvested constants.
    #[arg(long)]
    no_harvest: bool,
}

#[derive(Args)]
struct PipelineArgs {
    /// Inputs, in addition to those named in the config.
    files: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "entry")]
    entries: Vec<String>,
    #[arg(long)]
    max_entries: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    alloc_size: Option<u64>,
    #[arg(long)]
    smoke_trials: Option<usize>,
    #[arg(long)]
    no_harvest: bool,
}

fn base_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn analyze(files: Vec<PathBuf>, config: Option<PathBuf>, max: Option<usize>, out: Option<PathBuf>) -> Result<i32> {
    let mut c = base_config(&config)?;
    c.inputs.extend(files);
    if let Some(m) = max {
        c.max_entries = m;
    }
    let ranking = cmd_analyze(&c)?;
    let json = to_json(&ranking);
    print!("{json}");
    if let Some(out) = out {
        write(&out, &json)?;
    }
    Ok(0)
}

fn synth(a: SynthArgs) -> Result<i32> {
    let p = load_program(&a.files)?;
    let opts = SynthOptions {
        alloc_size: a.alloc_size,
        harvest: !a.no_harvest,
    };
    if opts.alloc_size < drivergen_cli::config::MIN_ALLOC_SIZE {
        bail!("--alloc-size must be at least {}", drivergen_cli::config::MIN_ALLOC_SIZE);
    }
    let groups: Vec<Vec<String>> = match (a.top, a.entries.len()) {
        (Some(n), _) => rank_entries(&p, n).into_iter().map(|r| vec![r.function]).collect(),
        (None, 0) => bail!("give --entry NAME or --top N"),
        (None, _) => vec![a.entries.clone()],
    };
    let mut q = p;
    let mut specs = Vec::new();
    for g in groups {
        let names: Vec<&str> = g.iter().map(String::as_str).collect();
        let (next, spec) = if names.len() == 1 {
            synthesize_driver(&q, names[0], &opts)?
        } else {
            synthesize_composite_driver(&q, &names, &opts)?
        };
        q = next;
        specs.push(spec);
    }
    let text = render_module(&q);
    match &a.out {
        Some(out) => write(out, &text)?,
        None => print!("{text}"),
    }
    if let Some(pseudo) = &a.pseudo {
        let all: String = specs.iter().map(|s| emit_pseudo_source(s, &q) + "\n").collect();
        write(pseudo, all.trim_end().to_string() + "\n")?;
    }
    let spec_path = a.spec.clone().or_else(|| a.out.as_ref().map(|o| o.with_extension("json")));
    let json = if specs.len() == 1 { to_json(&specs[0]) } else { to_json(&specs) };
    match spec_path {
        Some(path) => write(&path, json)?,
        None => eprint!("{json}"),
    }
    Ok(0)
}

fn fuzz(a: FuzzArgs) -> Result<i32> {
    let p = load_program(&[a.program.clone()])?;
    let mut drivers = a.drivers.clone();
    if drivers.is_empty() {
        drivers = p
            .functions
            .iter()
            .filter(|f| f.name.starts_with(DRIVER_PREFIX))
            .map(|f| f.name.clone())
            .collect();
    }
    if drivers.is_empty() {
        bail!("{} contains no drivers", a.program.display());
    }
    // Hooks are idempotent; this makes hand-written drivers usable too.
    let roots: Vec<&str> = drivers.iter().map(String::as_str).collect();
    let p = instrument_lazy_store(&p, &roots);
    let m = Machine::with_alloc_size(&p, a.alloc_size)?;
    let mut targets = Vec::new();
    for d in &drivers {
        match smoke_filter(&m, d, a.smoke_trials, a.seed, a.step_limit)? {
            SmokeVerdict::Valid => targets.push(DriverTarget {
                name: d.clone(),
                dictionary: if a.no_harvest { Vec::new() } else { driver_dictionary(&p, d) },
            }),
            SmokeVerdict::Invalid { kind, input } => {
                eprintln!("{d}: invalid ({kind} on {} byte input), skipped", input.len())
            }
        }
    }
    if targets.is_empty() {
        eprintln!("every driver is invalid");
        return Ok(EXIT_ALL_INVALID);
    }
    let cfg = CampaignConfig {
        budget: a.budget.get().unwrap_or(Budget::Execs(10_000)),
        seed: a.seed,
        workers: a.workers.max(1),
        step_limit: a.step_limit,
        ..Default::default()
    };
    let out = run_campaign(&m, &p.identity(), &targets, &cfg)?;
    for rec in out.report.bugs() {
        write(&a.crashes.join(crash_file_name(rec)), &rec.input)?;
    }
    if let Some(dir) = &a.corpus {
        for s in &out.shards {
            for (i, e) in s.corpus.entries().iter().enumerate() {
                write(&dir.join(&s.driver).join(format!("w{}-{i:04}.bin", s.worker)), &e.data)?;
            }
        }
    }
    let json = out.report.to_json() + "\n";
    match &a.report {
        Some(path) => write(path, &json)?,
        None => print!("{json}"),
    }
    eprintln!(
        "{} executions, {} blocks, {} paths, {} bugs, {} hangs",
        out.report.total.executions,
        out.report.total.block_count,
        out.report.total.path_count,
        out.report.total.bug_count,
        out.report.total.hang_count
    );
    Ok(0)
}

fn exec(
    program: PathBuf,
    driver: String,
    input: PathBuf,
    trace: bool,
    alloc_size: u64,
    step_limit: u64,
) -> Result<i32> {
    let p = load_program(&[program])?;
    let data = std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
    let m = Machine::with_alloc_size(&p, alloc_size)?;
    let r = m.execute(
        &driver,
        &data,
        &ExecLimits {
            step_limit,
            record: trace,
        },
    )?;
    if trace {
        for b in &r.trace {
            let (f, l) = p.block_name(*b).unwrap_or(("?", "?"));
            println!("{b} {f}:{l}");
        }
    }
    let mut shown = r.clone();
    shown.trace.clear();
    print!("{}", to_json(&shown));
    Ok(0)
}

fn report(reports: Vec<PathBuf>, out: Option<PathBuf>) -> Result<i32> {
    let mut merged: Option<CoverageReport> = None;
    for path in &reports {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let r: CoverageReport =
            serde_json::from_str(&text).with_context(|| format!("{} is not a coverage report", path.display()))?;
        merged = Some(match merged {
            None => r,
            Some(m) => merge_reports(&m, &r)?,
        });
    }
    let r = merged.expect("at least one report");
    println!("program {}", r.program);
    println!("{:<40} {:>8} {:>8} {:>6} {:>6} {:>10}", "driver", "blocks", "paths", "bugs", "hangs", "execs");
    let row = |name: &str, c: &drivergen::fuzz::Coverage| {
        println!(
            "{name:<40} {:>8} {:>8} {:>6} {:>6} {:>10}",
            c.block_count, c.path_count, c.bug_count, c.hang_count, c.executions
        )
    };
    for (name, c) in &r.drivers {
        row(name, c);
    }
    row("total", &r.total);
    for rec in r.bugs() {
        println!("bug {} in {} ({}), {} byte input", rec.kind, rec.block, rec.driver, rec.input.len());
    }
    if let Some(out) = out {
        write(&out, r.to_json() + "\n")?;
    }
    Ok(0)
}

fn pipeline(a: PipelineArgs) -> Result<i32> {
    let mut c = base_config(&a.config)?;
    c.inputs.extend(a.files);
    c.entries.extend(a.entries);
    if let Some(v) = a.max_entries {
        c.max_entries = v;
    }
    if let Some(v) = a.out_dir {
        c.output_dir = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(b) = a.budget.get() {
        c.budget = b;
    }
    if let Some(v) = a.workers {
        c.workers = v;
    }
    if let Some(v) = a.alloc_size {
        c.alloc_size = v;
    }
    if let Some(v) = a.smoke_trials {
        c.smoke_trials = v;
    }
    if a.no_harvest {
        c.harvest = false;
    }
    let out = cmd_pipeline(&c)?;
    eprint!("{}", verdict_table(&out.summary.drivers));
    eprintln!(
        "{} executions, {} bugs, {} hangs; artifacts in {}",
        out.summary.executions,
        out.summary.bugs,
        out.summary.hangs,
        c.output_dir.display()
    );
    print!("{}", to_json(&out.summary));
    Ok(out.exit_code)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Analyze {
            files,
            config,
            max,
            out,
        } => analyze(files, config, max, out),
        Cmd::Parse { files, check } => {
            for f in &files {
                let p = load_program(std::slice::from_ref(f))?;
                if !check {
                    print!("{}", render_module(&p));
                }
            }
            Ok(0)
        }
        Cmd::Synth(a) => synth(a),
        Cmd::Fuzz(a) => fuzz(a),
        Cmd::Exec {
            program,
            driver,
            input,
            trace,
            alloc_size,
            step_limit,
        } => exec(program, driver, input, trace, alloc_size, step_limit),
        Cmd::Report { reports, out } => report(reports, out),
        Cmd::Pipeline(a) => pipeline(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Usage errors exit 1; 2 is reserved for "every driver invalid".
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
