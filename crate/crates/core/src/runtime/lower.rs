//! Lowering of a validated [`Program`] into an index-based form the
//! interpreter can run without name lookups.

use std::collections::HashMap;

use crate::ir::{BinOp, Callee, CmpPred, GepOffset, Inst, Operand, Program, TypeDesc};

use super::RuntimeError;

/// Function addresses live in their own range, far from the heap.
pub const FUNC_BASE: u64 = 0xF000_0000_0000_0000;
/// Value produced for function-reference arguments; calling it invalidates
/// the driver.
pub const TRAP_FUNC: u64 = 0xFFFF_FFFF_DEAD_0000;

pub fn func_addr(index: usize) -> u64 {
    FUNC_BASE + (index as u64) * 16
}

pub fn func_index(addr: u64) -> Option<usize> {
    if addr < FUNC_BASE || addr == TRAP_FUNC || (addr - FUNC_BASE) % 16 != 0 {
        return None;
    }
    Some(((addr - FUNC_BASE) / 16) as usize)
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum V {
    Slot(u32),
    Imm(u64),
}

/// Layout of a type as the lazy materializer sees it.
#[derive(Debug, Clone)]
pub(crate) enum Shape {
    Scalar(u64),
    Pointer { alloc_size: u64 },
    FuncRef,
    Aggregate { size: u64, fields: Vec<(u64, Shape)> },
}

impl Shape {
    pub fn size(&self) -> u64 {
        match self {
            Shape::Scalar(s) => *s,
            Shape::Pointer { .. } | Shape::FuncRef => 8,
            Shape::Aggregate { size, .. } => *size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Ext {
    Memcpy,
    Memset,
    Malloc,
    Calloc,
    Free,
    Other,
}

#[derive(Debug, Clone)]
pub(crate) enum Target {
    Func(usize),
    Indirect(V),
}

#[derive(Debug, Clone)]
pub(crate) enum LInst {
    Const { dst: u32, v: u64 },
    Bin { dst: u32, op: BinOp, mask: u64, a: V, b: V },
    Cmp { dst: u32, pred: CmpPred, bits: u32, a: V, b: V },
    Load { dst: u32, size: u64, ptr: V },
    Store { size: u64, val: V, ptr: V },
    GepStatic { dst: u32, ptr: V, off: u64 },
    GepScaled { dst: u32, ptr: V, idx: V, stride: u64 },
    Call { dst: Option<u32>, target: Target, args: Vec<V> },
    Alloc { dst: u32, size: V },
    Free { ptr: V },
    Memcpy { dst: V, src: V, len: V },
    Memset { dst: V, byte: V, len: V },
    Phi { dst: u32, incoming: Vec<(V, u32)> },
    Br { cond: V, then_b: u32, else_b: u32 },
    Jmp { target: u32 },
    Ret { v: Option<V> },
    Trap,
    LoadHook { shape: u32, ptr: V },
    StoreHook { size: u64, ptr: V },
    LoadRange { ptr: V, len: V },
    StoreRange { ptr: V, len: V },
    Input { dst: u32, size: u64 },
    LazyAlloc { dst: u32, size: u64 },
    FnTrap { dst: u32 },
    LeakGuard,
}

#[derive(Debug, Clone)]
pub(crate) struct LBlock {
    pub id: u32,
    pub insts: Vec<LInst>,
}

#[derive(Debug, Clone)]
pub(crate) struct LFunc {
    pub name: String,
    pub ext: Option<Ext>,
    pub nparams: usize,
    pub nslots: usize,
    pub blocks: Vec<LBlock>,
}

#[derive(Debug, Clone)]
pub(crate) struct Lowered {
    pub funcs: Vec<LFunc>,
    pub by_name: HashMap<String, usize>,
    pub shapes: Vec<Shape>,
    pub block_count: u32,
}

struct Ctx<'a> {
    p: &'a Program,
    alloc_size: u64,
    shapes: Vec<Shape>,
    shape_cache: HashMap<TypeDesc, u32>,
    by_name: &'a HashMap<String, usize>,
}

fn mask_for(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

impl Ctx<'_> {
    fn err(&self, msg: String) -> RuntimeError {
        RuntimeError::Lowering(msg)
    }

    fn size(&self, t: &TypeDesc) -> Result<u64, RuntimeError> {
        self.p.layout().size_of(t).map_err(|e| self.err(e.to_string()))
    }

    fn bits(&self, t: &TypeDesc) -> Result<u32, RuntimeError> {
        match self.p.layout().resolve(t).map_err(|e| self.err(e.to_string()))? {
            TypeDesc::Scalar(w) => Ok(u32::from(*w)),
            TypeDesc::Ptr(_) | TypeDesc::FuncRef { .. } => Ok(64),
            other => Err(self.err(format!("{other} is not a register type"))),
        }
    }

    fn shape(&mut self, t: &TypeDesc) -> Result<Shape, RuntimeError> {
        let layout = self.p.layout();
        let resolved = layout.resolve(t).map_err(|e| self.err(e.to_string()))?.clone();
        Ok(match &resolved {
            TypeDesc::Scalar(w) => Shape::Scalar(u64::from(*w / 8)),
            TypeDesc::Ptr(pointee) => {
                let pointee_size = match pointee.as_deref() {
                    Some(pt) => layout.size_of(pt).unwrap_or(0),
                    None => 0,
                };
                Shape::Pointer {
                    alloc_size: pointee_size.max(self.alloc_size),
                }
            }
            TypeDesc::FuncRef { .. } => Shape::FuncRef,
            TypeDesc::Record(_) | TypeDesc::Array(..) => {
                let size = self.size(&resolved)?;
                let offsets = layout.field_offsets(&resolved).map_err(|e| self.err(e.to_string()))?;
                let mut fields = Vec::with_capacity(offsets.len());
                for (i, off) in offsets.into_iter().enumerate() {
                    let ft = layout
                        .field_type(&resolved, i as u32)
                        .ok_or_else(|| self.err("missing field".into()))?
                        .clone();
                    fields.push((off, self.shape(&ft)?));
                }
                Shape::Aggregate { size, fields }
            }
            TypeDesc::Void | TypeDesc::Named(_) => return Err(self.err(format!("{t} has no shape"))),
        })
    }

    fn shape_id(&mut self, t: &TypeDesc) -> Result<u32, RuntimeError> {
        if let Some(&id) = self.shape_cache.get(t) {
            return Ok(id);
        }
        let s = self.shape(t)?;
        let id = self.shapes.len() as u32;
        self.shapes.push(s);
        self.shape_cache.insert(t.clone(), id);
        Ok(id)
    }
}

pub(crate) fn lower(p: &Program, alloc_size: u64) -> Result<Lowered, RuntimeError> {
    let by_name: HashMap<String, usize> = p
        .functions
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.clone(), i))
        .collect();
    let mut ctx = Ctx {
        p,
        alloc_size,
        shapes: Vec::new(),
        shape_cache: HashMap::new(),
        by_name: &by_name,
    };
    let mut funcs = Vec::with_capacity(p.functions.len());
    let mut next_block = 0u32;

    for f in &p.functions {
        if f.external {
            let ext = match f.name.as_str() {
                "memcpy" | "memmove" => Ext::Memcpy,
                "memset" => Ext::Memset,
                "malloc" => Ext::Malloc,
                "calloc" => Ext::Calloc,
                "free" => Ext::Free,
                _ => Ext::Other,
            };
            funcs.push(LFunc {
                name: f.name.clone(),
                ext: Some(ext),
                nparams: f.params.len(),
                nslots: f.params.len(),
                blocks: Vec::new(),
            });
            continue;
        }

        let mut slots: HashMap<&str, u32> = HashMap::new();
        for prm in &f.params {
            let n = slots.len() as u32;
            slots.insert(&prm.name, n);
        }
        for i in f.insts() {
            if let Some(d) = i.dst() {
                let n = slots.len() as u32;
                slots.entry(d).or_insert(n);
            }
        }
        let labels: HashMap<&str, u32> = f
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.label.as_str(), i as u32))
            .collect();

        let val = |o: &Operand| -> Result<V, RuntimeError> {
            Ok(match o {
                Operand::Local(n) => V::Slot(
                    *slots
                        .get(n.as_str())
                        .ok_or_else(|| RuntimeError::Lowering(format!("undefined %{n}")))?,
                ),
                Operand::Const(c) => V::Imm(*c as u64),
                Operand::Func(n) => V::Imm(func_addr(
                    *by_name
                        .get(n)
                        .ok_or_else(|| RuntimeError::Lowering(format!("unknown function {n}")))?,
                )),
            })
        };
        let slot = |n: &str| slots[n];
        let label = |l: &str| -> Result<u32, RuntimeError> {
            labels
                .get(l)
                .copied()
                .ok_or_else(|| RuntimeError::Lowering(format!("unknown label {l}")))
        };

        let mut blocks = Vec::with_capacity(f.blocks.len());
        for b in &f.blocks {
            let mut insts = Vec::with_capacity(b.insts.len());
            for inst in &b.insts {
                let l = match inst {
                    Inst::Const { dst, ty, value } => LInst::Const {
                        dst: slot(dst),
                        v: (*value as u64) & mask_for(ctx.bits(ty)?),
                    },
                    Inst::Bin { dst, op, ty, lhs, rhs } => LInst::Bin {
                        dst: slot(dst),
                        op: *op,
                        mask: mask_for(ctx.bits(ty)?),
                        a: val(lhs)?,
                        b: val(rhs)?,
                    },
                    Inst::Cmp {
                        dst,
                        pred,
                        ty,
                        lhs,
                        rhs,
                    } => LInst::Cmp {
                        dst: slot(dst),
                        pred: *pred,
                        bits: ctx.bits(ty)?,
                        a: val(lhs)?,
                        b: val(rhs)?,
                    },
                    Inst::Load { dst, ty, ptr } => LInst::Load {
                        dst: slot(dst),
                        size: ctx.size(ty)?,
                        ptr: val(ptr)?,
                    },
                    Inst::Store { ty, value, ptr } => LInst::Store {
                        size: ctx.size(ty)?,
                        val: val(value)?,
                        ptr: val(ptr)?,
                    },
                    Inst::Gep {
                        dst,
                        base,
                        ptr,
                        offset,
                    } => match offset {
                        GepOffset::Field(i) => {
                            let offs = p
                                .layout()
                                .field_offsets(base)
                                .map_err(|e| RuntimeError::Lowering(e.to_string()))?;
                            LInst::GepStatic {
                                dst: slot(dst),
                                ptr: val(ptr)?,
                                off: offs[*i as usize],
                            }
                        }
                        GepOffset::Index(idx) => LInst::GepScaled {
                            dst: slot(dst),
                            ptr: val(ptr)?,
                            idx: val(idx)?,
                            stride: ctx.size(base)?,
                        },
                    },
                    Inst::Call { dst, callee, args } => LInst::Call {
                        dst: dst.as_deref().map(slot),
                        target: match callee {
                            Callee::Direct(n) => Target::Func(
                                *ctx.by_name
                                    .get(n)
                                    .ok_or_else(|| RuntimeError::Lowering(format!("unknown function {n}")))?,
                            ),
                            Callee::Indirect(o) => Target::Indirect(val(o)?),
                        },
                        args: args.iter().map(&val).collect::<Result<_, _>>()?,
                    },
                    Inst::Alloc { dst, size } => LInst::Alloc {
                        dst: slot(dst),
                        size: val(size)?,
                    },
                    Inst::Free { ptr } => LInst::Free { ptr: val(ptr)? },
                    Inst::Memcpy { dst, src, len } => LInst::Memcpy {
                        dst: val(dst)?,
                        src: val(src)?,
                        len: val(len)?,
                    },
                    Inst::Memset { dst, byte, len } => LInst::Memset {
                        dst: val(dst)?,
                        byte: val(byte)?,
                        len: val(len)?,
                    },
                    Inst::Phi { dst, incoming, .. } => LInst::Phi {
                        dst: slot(dst),
                        incoming: incoming
                            .iter()
                            .map(|(o, l)| Ok((val(o)?, label(l)?)))
                            .collect::<Result<_, RuntimeError>>()?,
                    },
                    Inst::Br {
                        cond,
                        then_label,
                        else_label,
                    } => LInst::Br {
                        cond: val(cond)?,
                        then_b: label(then_label)?,
                        else_b: label(else_label)?,
                    },
                    Inst::Jmp { target } => LInst::Jmp { target: label(target)? },
                    Inst::Ret { value } => LInst::Ret {
                        v: value.as_ref().map(&val).transpose()?,
                    },
                    Inst::Trap => LInst::Trap,
                    Inst::LoadHook { ty, ptr } => LInst::LoadHook {
                        shape: ctx.shape_id(ty)?,
                        ptr: val(ptr)?,
                    },
                    Inst::StoreHook { ty, ptr } => LInst::StoreHook {
                        size: ctx.size(ty)?,
                        ptr: val(ptr)?,
                    },
                    Inst::LoadRangeHook { ptr, len } => LInst::LoadRange {
                        ptr: val(ptr)?,
                        len: val(len)?,
                    },
                    Inst::StoreRangeHook { ptr, len } => LInst::StoreRange {
                        ptr: val(ptr)?,
                        len: val(len)?,
                    },
                    Inst::Input { dst, ty } => LInst::Input {
                        dst: slot(dst),
                        size: ctx.size(ty)?,
                    },
                    Inst::LazyAlloc { dst, size } => LInst::LazyAlloc {
                        dst: slot(dst),
                        size: *size,
                    },
                    Inst::FnTrap { dst } => LInst::FnTrap { dst: slot(dst) },
                    Inst::LeakGuard => LInst::LeakGuard,
                };
                insts.push(l);
            }
            blocks.push(LBlock { id: next_block, insts });
            next_block += 1;
        }
        funcs.push(LFunc {
            name: f.name.clone(),
            ext: None,
            nparams: f.params.len(),
            nslots: slots.len(),
            blocks,
        });
    }

    let shapes = ctx.shapes;
    Ok(Lowered {
        funcs,
        by_name,
        shapes,
        block_count: next_block,
    })
}
