use crate::ir::{BinOp, Block, GepOffset, Inst, Operand, TypeDesc};

use super::plan::{ArgPlan, Candidate};

/// Builds the driver body block by block. The current block is open until
/// a terminator is emitted, which also names the block that follows.
pub(crate) struct Emitter {
    blocks: Vec<Block>,
    label: String,
    insts: Vec<Inst>,
    counter: usize,
}

fn scalar_ty(size: u64) -> TypeDesc {
    TypeDesc::Scalar((size * 8) as u8)
}

impl Emitter {
    pub fn new() -> Self {
        Emitter {
            blocks: Vec::new(),
            label: "entry".into(),
            insts: Vec::new(),
            counter: 0,
        }
    }

    pub fn name(&mut self, stem: &str) -> String {
        let n = self.counter;
        self.counter += 1;
        format!("{stem}{n}")
    }

    pub fn emit(&mut self, inst: Inst) {
        self.insts.push(inst);
    }

    fn terminate(&mut self, term: Inst, next: &str) {
        self.insts.push(term);
        self.blocks.push(Block {
            label: std::mem::replace(&mut self.label, next.to_string()),
            insts: std::mem::take(&mut self.insts),
        });
    }

    pub fn finish(mut self, term: Inst) -> Vec<Block> {
        self.terminate(term, "");
        self.blocks
    }

    /// Draw one decision byte and branch on its low bit. Leaves the emitter
    /// in the "take the constant" block and returns the other label.
    fn decision(&mut self) -> (String, String) {
        let d = self.name("d");
        let bit = self.name("bit");
        let keep = self.name("keep");
        let next = self.name("next");
        self.emit(Inst::Input {
            dst: d.clone(),
            ty: TypeDesc::i8(),
        });
        self.emit(Inst::Bin {
            dst: bit.clone(),
            op: BinOp::And,
            ty: TypeDesc::i8(),
            lhs: Operand::Local(d),
            rhs: Operand::Const(1),
        });
        self.terminate(
            Inst::Br {
                cond: Operand::Local(bit),
                then_label: keep.clone(),
                else_label: next.clone(),
            },
            &keep,
        );
        (keep, next)
    }

    fn scalar(&mut self, size: u64, candidates: &[Candidate]) -> Operand {
        let ty = scalar_ty(size);
        let raw = self.name("v");
        if candidates.is_empty() {
            self.emit(Inst::Input { dst: raw.clone(), ty });
            return Operand::Local(raw);
        }
        let join = self.name("join");
        let mut incoming = Vec::new();
        for c in candidates {
            let (keep, next) = self.decision();
            incoming.push((Operand::Const(c.value), keep));
            self.terminate(Inst::Jmp { target: join.clone() }, &next);
        }
        self.emit(Inst::Input {
            dst: raw.clone(),
            ty: ty.clone(),
        });
        incoming.push((Operand::Local(raw), self.label.clone()));
        self.terminate(Inst::Jmp { target: join.clone() }, &join);
        let v = self.name("v");
        self.emit(Inst::Phi {
            dst: v.clone(),
            ty,
            incoming,
        });
        Operand::Local(v)
    }

    fn at(&mut self, base: &Operand, offset: u64) -> Operand {
        if offset == 0 {
            return base.clone();
        }
        let g = self.name("at");
        self.emit(Inst::Gep {
            dst: g.clone(),
            base: TypeDesc::i8(),
            ptr: base.clone(),
            offset: GepOffset::Index(Operand::Const(offset as i64)),
        });
        Operand::Local(g)
    }

    /// Each distinct (offset, width) site gets its own chain; within a chain
    /// the first decision bit that is set picks the constant to store.
    fn seed_sites(&mut self, ptr: &Operand, candidates: &[Candidate]) {
        let mut sites: Vec<(u64, u64)> = Vec::new();
        for c in candidates {
            if !sites.contains(&(c.offset, c.width)) {
                sites.push((c.offset, c.width));
            }
        }
        for (offset, width) in sites {
            let done = self.name("done");
            for c in candidates.iter().filter(|c| (c.offset, c.width) == (offset, width)) {
                let (_, next) = self.decision();
                let target = self.at(ptr, offset);
                self.emit(Inst::Store {
                    ty: scalar_ty(width),
                    value: Operand::Const(c.value),
                    ptr: target,
                });
                self.terminate(Inst::Jmp { target: done.clone() }, &next);
            }
            self.terminate(Inst::Jmp { target: done.clone() }, &done);
        }
    }

    fn fill(&mut self, base: &Operand, offset: u64, plan: &ArgPlan) {
        let ArgPlan::RecursiveAggregate { members, .. } = plan else { return };
        for m in members {
            if let ArgPlan::RecursiveAggregate { .. } = m.plan {
                self.fill(base, offset + m.offset, &m.plan);
                continue;
            }
            let v = self.value(&m.plan);
            let ty = match &m.plan {
                ArgPlan::ScalarFromBuffer { size, .. } => scalar_ty(*size),
                ArgPlan::FreshAllocation { .. } => TypeDesc::opaque_ptr(),
                _ => TypeDesc::FuncRef {
                    params: Vec::new(),
                    ret: Box::new(TypeDesc::Void),
                },
            };
            let target = self.at(base, offset + m.offset);
            self.emit(Inst::Store { ty, value: v, ptr: target });
        }
    }

    /// Emit the construction of one argument and return its operand.
    /// Aggregates are built in a driver-owned block and passed by address.
    pub fn value(&mut self, plan: &ArgPlan) -> Operand {
        match plan {
            ArgPlan::ScalarFromBuffer { size, candidates } => self.scalar(*size, candidates),
            ArgPlan::FreshAllocation {
                alloc_size, candidates, ..
            } => {
                let a = self.name("p");
                self.emit(Inst::LazyAlloc {
                    dst: a.clone(),
                    size: *alloc_size,
                });
                let a = Operand::Local(a);
                self.seed_sites(&a, candidates);
                a
            }
            ArgPlan::FuncRefTrap => {
                let f = self.name("fn");
                self.emit(Inst::FnTrap { dst: f.clone() });
                Operand::Local(f)
            }
            ArgPlan::RecursiveAggregate { size, .. } => {
                let a = self.name("agg");
                self.emit(Inst::LazyAlloc {
                    dst: a.clone(),
                    size: (*size).max(1),
                });
                let a = Operand::Local(a);
                self.fill(&a, 0, plan);
                a
            }
        }
    }
}
