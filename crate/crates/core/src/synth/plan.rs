use serde::{Deserialize, Serialize};

use crate::ir::{Function, Program, TypeDesc};

use super::harvest::{HarvestedConstant, PathStep};

/// A value the driver may choose instead of raw input bytes. `offset` and
/// `width` (bytes) locate the site inside the node: always 0 and the scalar
/// size for scalar nodes, a position in the pointee for allocations.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub offset: u64,
    pub width: u64,
    pub value: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub offset: u64,
    pub plan: ArgPlan,
}

/// How the driver builds one argument (or one member of an aggregate).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ArgPlan {
    ScalarFromBuffer {
        size: u64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        candidates: Vec<Candidate>,
    },
    /// Driver-owned block, every byte unassigned until something stores to
    /// it or a load hook materializes it.
    FreshAllocation {
        /// `None` for opaque pointers.
        pointee: Option<TypeDesc>,
        alloc_size: u64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        candidates: Vec<Candidate>,
    },
    RecursiveAggregate { ty: TypeDesc, size: u64, members: Vec<Member> },
    FuncRefTrap,
}

impl ArgPlan {
    pub fn candidates(&self) -> &[Candidate] {
        match self {
            ArgPlan::ScalarFromBuffer { candidates, .. } | ArgPlan::FreshAllocation { candidates, .. } => candidates,
            _ => &[],
        }
    }

    /// Every node of the tree, depth first.
    pub fn walk(&self) -> Vec<&ArgPlan> {
        let mut out = vec![self];
        if let ArgPlan::RecursiveAggregate { members, .. } = self {
            for m in members {
                out.extend(m.plan.walk());
            }
        }
        out
    }
}

/// Plan for one value of type `t`. Types must already be valid in `p`.
pub fn plan_type(t: &TypeDesc, p: &Program, alloc_size: u64) -> ArgPlan {
    let layout = p.layout();
    let t = layout.resolve(t).unwrap_or(t);
    match t {
        TypeDesc::Scalar(w) => ArgPlan::ScalarFromBuffer {
            size: u64::from(*w / 8),
            candidates: Vec::new(),
        },
        TypeDesc::Ptr(None) | TypeDesc::Ptr(Some(_)) => {
            let pointee = match t {
                TypeDesc::Ptr(Some(inner)) => match layout.resolve(inner) {
                    Ok(TypeDesc::Void) | Err(_) => None,
                    Ok(_) => Some((**inner).clone()),
                },
                _ => None,
            };
            let size = pointee.as_ref().and_then(|t| layout.size_of(t).ok()).unwrap_or(0);
            ArgPlan::FreshAllocation {
                pointee,
                alloc_size: size.max(alloc_size),
                candidates: Vec::new(),
            }
        }
        TypeDesc::FuncRef { .. } => ArgPlan::FuncRefTrap,
        TypeDesc::Record(fields) => {
            let offsets = layout.field_offsets(t).unwrap_or_default();
            ArgPlan::RecursiveAggregate {
                ty: t.clone(),
                size: layout.size_of(t).unwrap_or(0),
                members: fields
                    .iter()
                    .zip(offsets)
                    .map(|(f, offset)| Member {
                        offset,
                        plan: plan_type(f, p, alloc_size),
                    })
                    .collect(),
            }
        }
        TypeDesc::Array(elem, n) => {
            let stride = layout.size_of(elem).unwrap_or(0);
            let child = plan_type(elem, p, alloc_size);
            ArgPlan::RecursiveAggregate {
                ty: t.clone(),
                size: stride * n,
                members: (0..*n)
                    .map(|i| Member {
                        offset: i * stride,
                        plan: child.clone(),
                    })
                    .collect(),
            }
        }
        // Void never appears as a parameter; Named is resolved above.
        TypeDesc::Void | TypeDesc::Named(_) => ArgPlan::ScalarFromBuffer {
            size: 0,
            candidates: Vec::new(),
        },
    }
}

/// One plan per parameter of `f`.
pub fn plan_arguments(f: &Function, p: &Program, alloc_size: u64) -> Vec<ArgPlan> {
    f.params.iter().map(|prm| plan_type(&prm.ty, p, alloc_size)).collect()
}

fn truncate(value: i64, width: u64) -> i64 {
    if width >= 8 {
        value
    } else {
        let bits = width * 8;
        let v = (value as u64) & ((1u64 << bits) - 1);
        // Keep the sign so the rendered literal reads naturally.
        ((v << (64 - bits)) as i64) >> (64 - bits)
    }
}

fn push_unique(v: &mut Vec<Candidate>, c: Candidate) -> bool {
    if v.contains(&c) {
        false
    } else {
        v.push(c);
        true
    }
}

/// Scalar leaf of an aggregate at `offset` with exactly `width` bytes.
fn leaf_at(plan: &mut ArgPlan, offset: u64, width: u64) -> Option<&mut Vec<Candidate>> {
    match plan {
        ArgPlan::ScalarFromBuffer { size, candidates } if offset == 0 && *size == width => Some(candidates),
        ArgPlan::RecursiveAggregate { members, .. } => members
            .iter_mut()
            .rev()
            .find(|m| m.offset <= offset)
            .and_then(|m| leaf_at(&mut m.plan, offset - m.offset, width)),
        _ => None,
    }
}

/// Attach harvested constants to the plan nodes they describe. Constants
/// whose path does not end at a scalar the driver builds are dropped.
/// Returns the number attached.
pub fn apply_constants(plans: &mut [ArgPlan], constants: &[HarvestedConstant]) -> usize {
    let mut attached = 0;
    for c in constants {
        let Some(plan) = plans.get_mut(c.param) else { continue };
        let site = match c.path.as_slice() {
            [] => Some((0, c.width)),
            [PathStep::Load(w)] => Some((0, *w)),
            [PathStep::Offset(o), PathStep::Load(w)] => Some((*o, *w)),
            _ => None,
        };
        let Some((offset, width)) = site else { continue };
        let value = truncate(c.value, width);
        let added = match plan {
            ArgPlan::ScalarFromBuffer { size, candidates } if c.path.is_empty() => push_unique(
                candidates,
                Candidate {
                    offset: 0,
                    width: *size,
                    value: truncate(c.value, *size),
                },
            ),
            ArgPlan::FreshAllocation {
                alloc_size, candidates, ..
            } if !c.path.is_empty() && offset + width <= *alloc_size => {
                push_unique(candidates, Candidate { offset, width, value })
            }
            ArgPlan::RecursiveAggregate { .. } if !c.path.is_empty() => match leaf_at(plan, offset, width) {
                Some(cands) => push_unique(
                    cands,
                    Candidate {
                        offset: 0,
                        width,
                        value,
                    },
                ),
                None => false,
            },
            _ => false,
        };
        attached += usize::from(added);
    }
    attached
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn plans(src: &str, f: &str) -> Vec<ArgPlan> {
        let p = parse_module(src).unwrap();
        plan_arguments(p.function(f).unwrap(), &p, 64)
    }

    #[test]
    fn scalars() {
        let v = plans("func f(%a: i32, %b: i64) -> void { entry: ret }", "f");
        assert_eq!(
            v,
            vec![
                ArgPlan::ScalarFromBuffer { size: 4, candidates: vec![] },
                ArgPlan::ScalarFromBuffer { size: 8, candidates: vec![] }
            ]
        );
    }

    #[test]
    fn pointer_to_record_gets_at_least_size() {
        let v = plans("type R = { i32, i64 }\nfunc f(%r: ptr<R>) -> void { entry: ret }", "f");
        let ArgPlan::FreshAllocation { alloc_size, pointee, .. } = &v[0] else { panic!() };
        assert_eq!(*alloc_size, 64);
        assert_eq!(pointee.as_ref(), Some(&TypeDesc::Named("R".into())));
        let v = plans("func f(%r: ptr<[100 x i8]>, %o: ptr) -> void { entry: ret }", "f");
        assert!(matches!(v[0], ArgPlan::FreshAllocation { alloc_size: 100, .. }));
        assert!(matches!(v[1], ArgPlan::FreshAllocation { pointee: None, alloc_size: 64, .. }));
    }

    #[test]
    fn funcref_and_aggregate() {
        let v = plans(
            "func f(%cb: fn(i32) -> i32, %s: { i8, ptr<i32>, [2 x i16] }) -> void { entry: ret }",
            "f",
        );
        assert_eq!(v[0], ArgPlan::FuncRefTrap);
        let ArgPlan::RecursiveAggregate { size, members, .. } = &v[1] else { panic!() };
        assert_eq!(*size, 24);
        let offs: Vec<u64> = members.iter().map(|m| m.offset).collect();
        assert_eq!(offs, vec![0, 8, 16]);
        let ArgPlan::RecursiveAggregate { members: inner, .. } = &members[2].plan else { panic!() };
        assert_eq!(inner.len(), 2);
        assert_eq!(inner[1].offset, 2);
    }

    #[test]
    fn constants_land_on_matching_nodes() {
        let mut v = plans(
            "type H = { i32, i32 }\nfunc f(%x: i32, %h: ptr<H>, %s: H) -> void { entry: ret }",
            "f",
        );
        let hc = |param, path, value, width| HarvestedConstant {
            function: "f".into(),
            param,
            path,
            value,
            width,
        };
        let n = apply_constants(
            &mut v,
            &[
                hc(0, vec![], 42, 4),
                hc(0, vec![], 42, 4),
                hc(1, vec![PathStep::Offset(4), PathStep::Load(4)], -1, 4),
                hc(2, vec![PathStep::Offset(4), PathStep::Load(4)], 7, 4),
                hc(2, vec![PathStep::Offset(2), PathStep::Load(4)], 7, 4),
                hc(1, vec![PathStep::Load(8), PathStep::Load(4)], 1, 4),
            ],
        );
        assert_eq!(n, 3);
        assert_eq!(v[0].candidates(), &[Candidate { offset: 0, width: 4, value: 42 }]);
        assert_eq!(v[1].candidates(), &[Candidate { offset: 4, width: 4, value: -1 }]);
        let ArgPlan::RecursiveAggregate { members, .. } = &v[2] else { panic!() };
        assert_eq!(members[1].plan.candidates()[0].value, 7);
    }
}
