use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ir::{Callee, Function, GepOffset, Inst, Operand, Program};

/// One step from a parameter to the compared value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStep {
    /// Byte offset added to a pointer.
    Offset(u64),
    /// Dereference of the given width in bytes.
    Load(u64),
}

/// A literal compared against a value derived from parameter `param` of the
/// harvested function. `function` is where the comparison was found (the
/// function itself or a direct callee).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HarvestedConstant {
    pub function: String,
    pub param: usize,
    pub path: Vec<PathStep>,
    pub value: i64,
    /// Width of the comparison in bytes.
    pub width: u64,
}

#[derive(Clone)]
struct Origin {
    param: usize,
    path: Vec<PathStep>,
}

fn offset(o: &Origin, by: u64) -> Origin {
    let mut path = o.path.clone();
    match path.last_mut() {
        Some(PathStep::Offset(x)) => *x += by,
        _ if by == 0 => {}
        _ => path.push(PathStep::Offset(by)),
    }
    Origin { param: o.param, path }
}

struct Harvester<'p> {
    p: &'p Program,
    out: Vec<HarvestedConstant>,
}

impl Harvester<'_> {
    fn scan(&mut self, f: &Function, params: Vec<Option<Origin>>, depth: u32) {
        let layout = self.p.layout();
        let mut origins: HashMap<&str, Origin> = HashMap::new();
        for (prm, o) in f.params.iter().zip(params) {
            if let Some(o) = o {
                origins.insert(&prm.name, o);
            }
        }
        let mut consts: HashMap<&str, i64> = HashMap::new();
        for inst in f.insts() {
            match inst {
                Inst::Const { dst, value, .. } => {
                    consts.insert(dst, *value);
                }
                Inst::Gep { dst, base, ptr, offset: off } => {
                    let Some(o) = ptr.as_local().and_then(|n| origins.get(n)) else { continue };
                    let by = match off {
                        GepOffset::Field(i) => layout.field_offsets(base).ok().and_then(|v| v.get(*i as usize).copied()),
                        GepOffset::Index(idx) => {
                            let k = match idx {
                                Operand::Const(c) => Some(*c),
                                Operand::Local(n) => consts.get(n.as_str()).copied(),
                                Operand::Func(_) => None,
                            };
                            match (k, layout.size_of(base)) {
                                (Some(k), Ok(stride)) if k >= 0 => Some(k as u64 * stride),
                                _ => None,
                            }
                        }
                    };
                    if let Some(by) = by {
                        let o = offset(o, by);
                        origins.insert(dst, o);
                    }
                }
                Inst::Load { dst, ty, ptr } => {
                    let Some(o) = ptr.as_local().and_then(|n| origins.get(n)) else { continue };
                    let Ok(w) = layout.size_of(ty) else { continue };
                    let mut o = o.clone();
                    o.path.push(PathStep::Load(w));
                    origins.insert(dst, o);
                }
                Inst::Cmp { ty, lhs, rhs, .. } => {
                    let origin_of = |op: &Operand| op.as_local().and_then(|n| origins.get(n));
                    let literal = |op: &Operand| match op {
                        Operand::Const(c) => Some(*c),
                        Operand::Local(n) => consts.get(n.as_str()).copied(),
                        Operand::Func(_) => None,
                    };
                    let hit = match (origin_of(lhs), origin_of(rhs)) {
                        (Some(o), None) => literal(rhs).map(|v| (o, v)),
                        (None, Some(o)) => literal(lhs).map(|v| (o, v)),
                        _ => None,
                    };
                    if let (Some((o, value)), Ok(width)) = (hit, layout.size_of(ty)) {
                        let c = HarvestedConstant {
                            function: f.name.clone(),
                            param: o.param,
                            path: o.path.clone(),
                            value,
                            width,
                        };
                        let dup = self
                            .out
                            .iter()
                            .any(|x| x.param == c.param && x.path == c.path && x.value == c.value && x.width == c.width);
                        if !dup {
                            self.out.push(c);
                        }
                    }
                }
                Inst::Call {
                    callee: Callee::Direct(g),
                    args,
                    ..
                } if depth == 0 => {
                    let Some(callee) = self.p.function(g) else { continue };
                    if callee.external {
                        continue;
                    }
                    let passed: Vec<Option<Origin>> = args
                        .iter()
                        .map(|a| a.as_local().and_then(|n| origins.get(n)).cloned())
                        .collect();
                    if passed.iter().any(Option::is_some) {
                        self.scan(callee, passed, depth + 1);
                    }
                }
                _ => {}
            }
        }
    }
}

/// Literals compared against parameter-derived values in `f` and in its
/// direct in-module callees. Deduplicated, in order of first occurrence.
pub fn harvest_comparison_constants(f: &Function, p: &Program) -> Vec<HarvestedConstant> {
    let mut h = Harvester { p, out: Vec::new() };
    let params = (0..f.params.len())
        .map(|param| Some(Origin { param, path: Vec::new() }))
        .collect();
    h.scan(f, params, 0);
    h.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn harvest(src: &str, f: &str) -> Vec<(usize, Vec<PathStep>, i64)> {
        let p = parse_module(src).unwrap();
        harvest_comparison_constants(p.function(f).unwrap(), &p)
            .into_iter()
            .map(|c| (c.param, c.path, c.value))
            .collect()
    }

    #[test]
    fn direct_parameter_compare() {
        let src = "func f(%n: i32) -> void {\nentry:\n  %c = cmp eq i32 %n, 42\n  br %c, yes, no\nyes:\n  ret\nno:\n  ret\n}";
        assert_eq!(harvest(src, "f"), vec![(0, vec![], 42)]);
    }

    #[test]
    fn no_compare_no_constants() {
        assert!(harvest("func f(%n: i32) -> void { entry: ret }", "f").is_empty());
    }

    #[test]
    fn two_literals_are_ignored() {
        let src = "func f(%n: i32) -> void {\nentry:\n  %k = const i32 3\n  %c = cmp eq i32 %k, 42\n  ret\n}";
        assert!(harvest(src, "f").is_empty());
    }

    #[test]
    fn through_gep_load_and_callee() {
        let src = "type H = { i32, i32 }\n\
            func check(%h: ptr<H>, %n: i64) -> void {\nentry:\n  %q = gep H, %h, field 1\n  %v = load i32, %q\n  %c = cmp ne i32 %v, 0xBEEF\n  %k = const i64 9\n  %d = cmp ult i64 %k, %n\n  ret\n}\n\
            func top(%x: i64, %h: ptr<H>) -> void {\nentry:\n  call @check(%h, %x)\n  %c = cmp eq i64 %x, 9\n  %e = cmp eq i64 %x, 5\n  ret\n}";
        assert_eq!(
            harvest(src, "top"),
            vec![
                (1, vec![PathStep::Offset(4), PathStep::Load(4)], 0xBEEF),
                (0, vec![], 9),
                (0, vec![], 5)
            ]
        );
    }

    #[test]
    fn callees_beyond_depth_one_are_not_scanned() {
        let src = "func c(%n: i32) -> void {\nentry:\n  %x = cmp eq i32 %n, 3\n  ret\n}\n\
            func b(%n: i32) -> void {\nentry:\n  call @c(%n)\n  ret\n}\n\
            func a(%n: i32) -> void {\nentry:\n  call @b(%n)\n  ret\n}";
        assert!(harvest(src, "a").is_empty());
        assert_eq!(harvest(src, "b").len(), 1);
    }
}
