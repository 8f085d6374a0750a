//! Driver synthesis.
//!
//! A driver is a function `__driver_<entry>(%buf: ptr<i8>, %len: i64) -> i32`
//! added to the program. It builds each argument of the entry from the fuzz
//! input following an [`ArgPlan`], calls the entry, and releases whatever
//! the program left allocated. Pointers are handed over as fresh,
//! unassigned blocks; their contents are filled in lazily by the load hooks
//! that [`instrument_lazy_store`] places in every reachable function.

mod driver;
mod harvest;
mod instrument;
mod plan;
mod pseudo;

use serde::{Deserialize, Serialize};

use crate::ir::{Function, Inst, Operand, Param, Program, TypeDesc};
use crate::locator::DRIVER_PREFIX;
use crate::runtime::DEFAULT_ALLOC_SIZE;

pub use harvest::{harvest_comparison_constants, HarvestedConstant, PathStep};
pub use instrument::{insert_leak_guard, instrument_lazy_store, reachable};
pub use plan::{apply_constants, plan_arguments, plan_type, ArgPlan, Candidate, Member};
pub use pseudo::emit_pseudo_source;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Minimum size of blocks handed out for pointer arguments.
    pub alloc_size: u64,
    /// Harvest comparison constants and give the driver a choice of them.
    pub harvest: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            alloc_size: DEFAULT_ALLOC_SIZE,
            harvest: true,
        }
    }
}

/// Plans for one entry of a driver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryPlan {
    pub entry: String,
    pub args: Vec<ArgPlan>,
    /// Everything harvested for this entry, attached to a plan node or not.
    pub constants: Vec<HarvestedConstant>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverSpec {
    pub driver: String,
    /// Entries in call order.
    pub entries: Vec<EntryPlan>,
    pub alloc_size: u64,
}

impl DriverSpec {
    /// Harvested (value, width in bytes) pairs, deduplicated, for mutators
    /// that splice known-interesting constants into inputs.
    pub fn dictionary(&self) -> Vec<(u64, u64)> {
        let mut out: Vec<(u64, u64)> = Vec::new();
        for c in self.entries.iter().flat_map(|e| &e.constants) {
            let w = c.width.clamp(1, 8);
            let v = if w == 8 { c.value as u64 } else { (c.value as u64) & ((1 << (w * 8)) - 1) };
            if !out.contains(&(v, w)) {
                out.push((v, w));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("entry function {0} not found")]
    UnknownEntry(String),
    #[error("entry function {0} is external")]
    ExternalEntry(String),
    #[error("composite requires ≥ 2 entries, got {0}")]
    CompositeTooShort(usize),
    #[error("a function named {0} already exists")]
    DriverExists(String),
}

/// `__driver_<entry>`, or `__driver_a__b` for a composite.
pub fn driver_name(entries: &[&str]) -> String {
    format!("{DRIVER_PREFIX}{}", entries.join("__"))
}

pub fn plan_entry(p: &Program, entry: &str, opts: &SynthOptions) -> Result<EntryPlan, SynthError> {
    let f = p
        .function(entry)
        .ok_or_else(|| SynthError::UnknownEntry(entry.to_string()))?;
    if f.external {
        return Err(SynthError::ExternalEntry(entry.to_string()));
    }
    let mut args = plan_arguments(f, p, opts.alloc_size);
    let constants = if opts.harvest {
        harvest_comparison_constants(f, p)
    } else {
        Vec::new()
    };
    apply_constants(&mut args, &constants);
    Ok(EntryPlan {
        entry: entry.to_string(),
        args,
        constants,
    })
}

/// Build a driver from explicit plans, calling the entries in order, and
/// return the instrumented program that contains it.
pub fn synthesize_from_plans(
    p: &Program,
    plans: Vec<EntryPlan>,
    opts: &SynthOptions,
) -> Result<(Program, DriverSpec), SynthError> {
    for e in &plans {
        match p.function(&e.entry) {
            None => return Err(SynthError::UnknownEntry(e.entry.clone())),
            Some(f) if f.external => return Err(SynthError::ExternalEntry(e.entry.clone())),
            _ => {}
        }
    }
    let names: Vec<&str> = plans.iter().map(|e| e.entry.as_str()).collect();
    let name = driver_name(&names);
    if p.function(&name).is_some() {
        return Err(SynthError::DriverExists(name));
    }

    let mut em = driver::Emitter::new();
    for e in &plans {
        let args: Vec<Operand> = e.args.iter().map(|a| em.value(a)).collect();
        em.emit(Inst::Call {
            dst: None,
            callee: crate::ir::Callee::Direct(e.entry.clone()),
            args,
        });
    }
    let mut f = Function::new(
        name.clone(),
        vec![
            Param::new("buf", TypeDesc::ptr_to(TypeDesc::i8())),
            Param::new("len", TypeDesc::i64()),
        ],
        TypeDesc::i32(),
    );
    f.blocks = em.finish(Inst::Ret {
        value: Some(Operand::Const(0)),
    });
    let f = insert_leak_guard(&f);

    let mut out = p.clone();
    out.functions.push(f);
    let out = instrument_lazy_store(&out, &[&name]);
    debug_assert!(crate::ir::validate(&out).is_ok(), "{:?}", crate::ir::validate(&out));
    Ok((
        out,
        DriverSpec {
            driver: name,
            entries: plans,
            alloc_size: opts.alloc_size,
        },
    ))
}

pub fn synthesize_driver(p: &Program, entry: &str, opts: &SynthOptions) -> Result<(Program, DriverSpec), SynthError> {
    let plan = plan_entry(p, entry, opts)?;
    synthesize_from_plans(p, vec![plan], opts)
}

/// One driver that calls every entry in order, sharing the input cursor.
pub fn synthesize_composite_driver(
    p: &Program,
    entries: &[&str],
    opts: &SynthOptions,
) -> Result<(Program, DriverSpec), SynthError> {
    if entries.len() < 2 {
        return Err(SynthError::CompositeTooShort(entries.len()));
    }
    let plans = entries
        .iter()
        .map(|e| plan_entry(p, e, opts))
        .collect::<Result<Vec<_>, _>>()?;
    synthesize_from_plans(p, plans, opts)
}

/// Functions a driver calls directly, in call order.
pub fn driver_entries(p: &Program, driver: &str) -> Vec<String> {
    p.function(driver)
        .map(|f| {
            f.insts()
                .filter_map(|i| match i {
                    Inst::Call {
                        callee: crate::ir::Callee::Direct(g),
                        ..
                    } => Some(g.clone()),
                    _ => None,
                })
                .collect()
        })
        .unwrap_or_default()
}

/// The constant dictionary of a driver already present in `p`, found by
/// harvesting its entries again.
pub fn driver_dictionary(p: &Program, driver: &str) -> Vec<(u64, u64)> {
    let entries = driver_entries(p, driver)
        .into_iter()
        .filter_map(|e| {
            let f = p.function(&e).filter(|f| !f.external)?;
            Some(EntryPlan {
                constants: harvest_comparison_constants(f, p),
                entry: e,
                args: Vec::new(),
            })
        })
        .collect();
    DriverSpec {
        driver: driver.to_string(),
        entries,
        alloc_size: 0,
    }
    .dictionary()
}

#[cfg(test)]
mod tests;
