use std::collections::{BTreeSet, VecDeque};

use crate::ir::{Callee, Function, Inst, Operand, Program};

/// Functions reachable from `roots` through direct calls and function
/// references, in-module definitions only.
pub fn reachable(p: &Program, roots: &[&str]) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<&str> = roots.iter().copied().collect();
    while let Some(name) = queue.pop_front() {
        let Some(f) = p.function(name) else { continue };
        if f.external || !seen.insert(f.name.clone()) {
            continue;
        }
        for inst in f.insts() {
            if let Inst::Call {
                callee: Callee::Direct(g),
                ..
            } = inst
            {
                queue.push_back(g);
            }
            for op in inst.operands() {
                if let Operand::Func(g) = op {
                    queue.push_back(g);
                }
            }
        }
    }
    seen
}

/// Externals whose calls are expanded into range hooks, and the argument
/// positions of (destination, source, length). Memset has no source.
fn range_external(p: &Program, callee: &Callee) -> Option<(usize, Option<usize>, usize)> {
    let Callee::Direct(name) = callee else { return None };
    let f = p.function(name)?;
    if !f.external {
        return None;
    }
    match name.as_str() {
        "memcpy" | "memmove" => Some((0, Some(1), 2)),
        "memset" => Some((0, None, 2)),
        _ => None,
    }
}

fn instrument_function(f: &mut Function, p: &Program) {
    for b in &mut f.blocks {
        let old = std::mem::take(&mut b.insts);
        let mut out = Vec::with_capacity(old.len() * 2);
        for inst in old.into_iter().filter(|i| !i.is_access_hook()) {
            let mut after = None;
            match &inst {
                Inst::Load { ty, ptr, .. } => out.push(Inst::LoadHook {
                    ty: ty.clone(),
                    ptr: ptr.clone(),
                }),
                Inst::Store { ty, ptr, .. } => {
                    after = Some(Inst::StoreHook {
                        ty: ty.clone(),
                        ptr: ptr.clone(),
                    })
                }
                Inst::Memcpy { dst, src, len } => {
                    out.push(Inst::LoadRangeHook {
                        ptr: src.clone(),
                        len: len.clone(),
                    });
                    after = Some(Inst::StoreRangeHook {
                        ptr: dst.clone(),
                        len: len.clone(),
                    });
                }
                Inst::Memset { dst, len, .. } => {
                    after = Some(Inst::StoreRangeHook {
                        ptr: dst.clone(),
                        len: len.clone(),
                    })
                }
                Inst::Call { callee, args, .. } => {
                    if let Some((d, s, n)) = range_external(p, callee) {
                        if let (Some(dst), Some(len)) = (args.get(d), args.get(n)) {
                            if let Some(src) = s.and_then(|s| args.get(s)) {
                                out.push(Inst::LoadRangeHook {
                                    ptr: src.clone(),
                                    len: len.clone(),
                                });
                            }
                            after = Some(Inst::StoreRangeHook {
                                ptr: dst.clone(),
                                len: len.clone(),
                            });
                        }
                    }
                }
                _ => {}
            }
            out.push(inst);
            out.extend(after);
        }
        b.insts = out;
    }
}

/// Insert load hooks before every load and store hooks after every store in
/// the functions reachable from `roots`; memcpy and memset (opcodes or calls
/// to the like-named externals) get range hooks. Existing hooks in those
/// functions are replaced, so instrumenting twice equals instrumenting once.
pub fn instrument_lazy_store(p: &Program, roots: &[&str]) -> Program {
    let set = reachable(p, roots);
    let mut out = p.clone();
    for f in out.functions.iter_mut().filter(|f| set.contains(&f.name)) {
        instrument_function(f, p);
    }
    out
}

/// Put a `leakguard` before every `ret` of `driver` that lacks one.
pub fn insert_leak_guard(driver: &Function) -> Function {
    let mut f = driver.clone();
    for b in &mut f.blocks {
        let mut out = Vec::with_capacity(b.insts.len() + 1);
        for inst in std::mem::take(&mut b.insts) {
            if matches!(inst, Inst::Ret { .. }) && !matches!(out.last(), Some(Inst::LeakGuard)) {
                out.push(Inst::LeakGuard);
            }
            out.push(inst);
        }
        b.insts = out;
    }
    f
}
