use std::fmt::{self, Write};

use super::*;

impl fmt::Display for TypeDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeDesc::Void => f.write_str("void"),
            TypeDesc::Scalar(w) => write!(f, "i{w}"),
            TypeDesc::Ptr(None) => f.write_str("ptr"),
            TypeDesc::Ptr(Some(t)) => write!(f, "ptr<{t}>"),
            TypeDesc::Record(fields) => {
                f.write_str("{ ")?;
                write_list(f, fields)?;
                f.write_str(" }")
            }
            TypeDesc::Array(elem, n) => write!(f, "[{n} x {elem}]"),
            TypeDesc::FuncRef { params, ret } => {
                f.write_str("fn(")?;
                write_list(f, params)?;
                write!(f, ") -> {ret}")
            }
            TypeDesc::Named(n) => f.write_str(n),
        }
    }
}

fn write_list<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
    for (i, it) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{it}")?;
    }
    Ok(())
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Local(n) => write!(f, "%{n}"),
            Operand::Const(v) => write!(f, "{v}"),
            Operand::Func(n) => write!(f, "@{n}"),
        }
    }
}

impl fmt::Display for Inst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inst::Const { dst, ty, value } => write!(f, "%{dst} = const {ty} {value}"),
            Inst::Bin { dst, op, ty, lhs, rhs } => {
                write!(f, "%{dst} = {} {ty} {lhs}, {rhs}", op.mnemonic())
            }
            Inst::Cmp {
                dst,
                pred,
                ty,
                lhs,
                rhs,
            } => write!(f, "%{dst} = cmp {} {ty} {lhs}, {rhs}", pred.mnemonic()),
            Inst::Load { dst, ty, ptr } => write!(f, "%{dst} = load {ty}, {ptr}"),
            Inst::Store { ty, value, ptr } => write!(f, "store {ty} {value}, {ptr}"),
            Inst::Gep {
                dst,
                base,
                ptr,
                offset,
            } => {
                write!(f, "%{dst} = gep {base}, {ptr}, ")?;
                match offset {
                    GepOffset::Field(i) => write!(f, "field {i}"),
                    GepOffset::Index(op) => write!(f, "index {op}"),
                }
            }
            Inst::Call { dst, callee, args } => {
                if let Some(d) = dst {
                    write!(f, "%{d} = ")?;
                }
                match callee {
                    Callee::Direct(n) => write!(f, "call @{n}(")?,
                    Callee::Indirect(op) => write!(f, "call {op}(")?,
                }
                write_list(f, args)?;
                f.write_str(")")
            }
            Inst::Alloc { dst, size } => write!(f, "%{dst} = alloc {size}"),
            Inst::Free { ptr } => write!(f, "free {ptr}"),
            Inst::Memcpy { dst, src, len } => write!(f, "memcpy {dst}, {src}, {len}"),
            Inst::Memset { dst, byte, len } => write!(f, "memset {dst}, {byte}, {len}"),
            Inst::Phi { dst, ty, incoming } => {
                write!(f, "%{dst} = phi {ty} ")?;
                for (i, (v, l)) in incoming.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "[{v}, {l}]")?;
                }
                Ok(())
            }
            Inst::Br {
                cond,
                then_label,
                else_label,
            } => write!(f, "br {cond}, {then_label}, {else_label}"),
            Inst::Jmp { target } => write!(f, "jmp {target}"),
            Inst::Ret { value: None } => f.write_str("ret"),
            Inst::Ret { value: Some(v) } => write!(f, "ret {v}"),
            Inst::Trap => f.write_str("trap"),
            Inst::LoadHook { ty, ptr } => write!(f, "hook.load {ty}, {ptr}"),
            Inst::StoreHook { ty, ptr } => write!(f, "hook.store {ty}, {ptr}"),
            Inst::LoadRangeHook { ptr, len } => write!(f, "hook.loadrange {ptr}, {len}"),
            Inst::StoreRangeHook { ptr, len } => write!(f, "hook.storerange {ptr}, {len}"),
            Inst::Input { dst, ty } => write!(f, "%{dst} = input {ty}"),
            Inst::LazyAlloc { dst, size } => write!(f, "%{dst} = lazyalloc {size}"),
            Inst::FnTrap { dst } => write!(f, "%{dst} = fntrap"),
            Inst::LeakGuard => f.write_str("leakguard"),
        }
    }
}

fn render_function(out: &mut String, func: &Function) {
    if func.external {
        let _ = write!(out, "declare {}(", func.name);
        for (i, p) in func.params.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            if p.name.is_empty() {
                let _ = write!(out, "{}", p.ty);
            } else {
                let _ = write!(out, "%{}: {}", p.name, p.ty);
            }
        }
        let _ = write!(out, ") -> {}", func.ret);
        if func.memory {
            out.push_str(" memory");
        }
        out.push('\n');
        return;
    }
    let _ = write!(out, "func {}(", func.name);
    for (i, p) in func.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "%{}: {}", p.name, p.ty);
    }
    let _ = writeln!(out, ") -> {} {{", func.ret);
    for b in &func.blocks {
        let _ = writeln!(out, "{}:", b.label);
        for i in &b.insts {
            let _ = writeln!(out, "  {i}");
        }
    }
    out.push_str("}\n");
}

/// Canonical text of a program. Declaration order is preserved.
pub fn render_module(p: &Program) -> String {
    let mut out = String::new();
    for t in &p.types {
        let _ = writeln!(out, "type {} = {}", t.name, t.ty);
    }
    for (i, f) in p.functions.iter().enumerate() {
        if i > 0 || !p.types.is_empty() {
            out.push('\n');
        }
        render_function(&mut out, f);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_body_canonical_text() {
        let p = parse_module("func f() -> void { entry: ret }").unwrap();
        assert_eq!(render_module(&p), "func f() -> void {\nentry:\n  ret\n}\n");
    }

    #[test]
    fn render_is_deterministic() {
        let p = parse_module("type T = { i8, [3 x i32] }\ndeclare m(ptr) -> void memory\nfunc f(%t: ptr<T>) -> void { entry: call @m(%t)\n ret }").unwrap();
        assert_eq!(render_module(&p), render_module(&p));
        assert_eq!(parse_module(&render_module(&p)).unwrap(), p);
    }
}
