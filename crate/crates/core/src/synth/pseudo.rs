use std::fmt::Write;

use crate::ir::{Program, TypeDesc};

use super::plan::{ArgPlan, Candidate};
use super::DriverSpec;

fn c_int(size: u64) -> String {
    format!("int{}_t", size * 8)
}

fn choices(c: &[Candidate]) -> String {
    c.iter().map(|c| format!("{:#x}", c.value)).collect::<Vec<_>>().join(", ")
}

fn describe(out: &mut String, indent: &str, var: &str, plan: &ArgPlan) {
    match plan {
        ArgPlan::ScalarFromBuffer { size, candidates } if candidates.is_empty() => {
            let _ = writeln!(out, "{indent}{} {var} = consume_{}(&in);", c_int(*size), size * 8);
        }
        ArgPlan::ScalarFromBuffer { size, candidates } => {
            let _ = writeln!(
                out,
                "{indent}{} {var} = pick_or_consume_{}(&in, {{{}}});",
                c_int(*size),
                size * 8,
                choices(candidates)
            );
        }
        ArgPlan::FreshAllocation {
            pointee,
            alloc_size,
            candidates,
        } => {
            let what = pointee.as_ref().map_or("opaque".to_string(), TypeDesc::to_string);
            let _ = writeln!(out, "{indent}void *{var} = lazy_alloc({alloc_size}); /* {what}, unassigned */");
            for c in candidates {
                let _ = writeln!(
                    out,
                    "{indent}if (consume_u8(&in) & 1) *({} *)({var} + {}) = {:#x};",
                    c_int(c.width),
                    c.offset,
                    c.value
                );
            }
        }
        ArgPlan::FuncRefTrap => {
            let _ = writeln!(out, "{indent}void *{var} = invalid_function; /* calling it rejects the driver */");
        }
        ArgPlan::RecursiveAggregate { ty, size, members } => {
            let _ = writeln!(out, "{indent}uint8_t {var}[{size}]; /* {ty} */");
            for (i, m) in members.iter().enumerate() {
                let field = format!("{var}_{i}");
                describe(out, indent, &field, &m.plan);
                if !matches!(m.plan, ArgPlan::RecursiveAggregate { .. }) {
                    let _ = writeln!(out, "{indent}memcpy({var} + {}, &{field}, sizeof {field});", m.offset);
                }
            }
        }
    }
}

/// A libFuzzer-style C rendering of a driver, for reading only.
pub fn emit_pseudo_source(spec: &DriverSpec, p: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "// {}", spec.driver);
    let _ = writeln!(out, "int LLVMFuzzerTestOneInput(const uint8_t *data, size_t size) {{");
    let _ = writeln!(out, "  input_t in = {{ data, size, 0 }};");
    let composite = spec.entries.len() > 1;
    for (k, e) in spec.entries.iter().enumerate() {
        let params = p.function(&e.entry).map(|f| f.params.clone()).unwrap_or_default();
        let mut names = Vec::new();
        for (i, plan) in e.args.iter().enumerate() {
            let base = params.get(i).map_or_else(|| format!("arg{i}"), |prm| prm.name.clone());
            let var = if composite { format!("e{k}_{base}") } else { base };
            describe(&mut out, "  ", &var, plan);
            names.push(var);
        }
        let _ = writeln!(out, "  {}({});", e.entry, names.join(", "));
    }
    let _ = writeln!(out, "  free_all_program_allocations();");
    let _ = writeln!(out, "  return 0;");
    out.push_str("}\n");
    out
}
