use crate::ir::{BinOp, BlockId, CmpPred};

use super::lower::{func_index, Ext, LInst, Lowered, Shape, Target, TRAP_FUNC, V};
use super::shadow::{Fault, Origin, ShadowHeap};
use super::{
    path_signature, CrashKind, Event, ExecLimits, ExecResult, ExecStatus, FuzzInput, ValueSource, MAX_ALLOC,
    MAX_CALL_DEPTH, PATH_PREFIX,
};

/// Cap on the recorded trace when `record` is on.
const MAX_RECORDED_TRACE: usize = 1 << 20;

struct Frame {
    func: usize,
    slots: Vec<u64>,
    block: u32,
    prev: u32,
    ip: usize,
    ret_dst: Option<u32>,
}

struct State<'m, 'i> {
    m: &'m Lowered,
    heap: ShadowHeap,
    input: FuzzInput<'i>,
    frames: Vec<Frame>,
    steps: u64,
    limit: u64,
    covered: Vec<bool>,
    trace: Vec<BlockId>,
    record: bool,
    violations: u64,
    leaks_before: Option<usize>,
    events: Vec<Event>,
}

fn le(bytes: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf[..bytes.len().min(8)].copy_from_slice(&bytes[..bytes.len().min(8)]);
    u64::from_le_bytes(buf)
}

fn sext(v: u64, bits: u32) -> i64 {
    if bits >= 64 {
        v as i64
    } else {
        let shift = 64 - bits;
        ((v << shift) as i64) >> shift
    }
}

fn compare(pred: CmpPred, a: u64, b: u64, bits: u32) -> bool {
    let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
    let (a, b) = (a & mask, b & mask);
    let (sa, sb) = (sext(a, bits), sext(b, bits));
    match pred {
        CmpPred::Eq => a == b,
        CmpPred::Ne => a != b,
        CmpPred::Slt => sa < sb,
        CmpPred::Sle => sa <= sb,
        CmpPred::Sgt => sa > sb,
        CmpPred::Sge => sa >= sb,
        CmpPred::Ult => a < b,
        CmpPred::Ule => a <= b,
        CmpPred::Ugt => a > b,
        CmpPred::Uge => a >= b,
    }
}

pub(crate) fn run(m: &Lowered, driver: usize, input: &[u8], limits: &ExecLimits) -> ExecResult {
    let mut st = State {
        m,
        heap: ShadowHeap::default(),
        input: FuzzInput::new(input),
        frames: Vec::new(),
        steps: 0,
        limit: limits.step_limit,
        covered: vec![false; m.block_count as usize],
        trace: Vec::new(),
        record: limits.record,
        violations: 0,
        leaks_before: None,
        events: Vec::new(),
    };

    // The driver's (buf, len) parameters see the raw input.
    let f = &m.funcs[driver];
    let mut args = vec![0u64; f.nparams];
    if f.nparams >= 1 {
        let buf = st.heap.allocate(input.len() as u64, Origin::Driver);
        let _ = st.heap.write(buf, input);
        let _ = st.heap.mark_assigned(buf, input.len() as u64);
        args[0] = buf;
    }
    if f.nparams >= 2 {
        args[1] = input.len() as u64;
    }

    let outcome = st.call(driver, &args, None).and_then(|()| st.run_loop());
    let status = match outcome {
        Ok(()) => ExecStatus::Ok,
        Err(kind) => {
            let block = st
                .frames
                .last()
                .map(|fr| m.funcs[fr.func].blocks[fr.block as usize].id)
                .unwrap_or(0);
            ExecStatus::Crash {
                kind,
                block: BlockId(block),
            }
        }
    };
    if status.crash_kind() == Some(CrashKind::StepLimit) {
        // A hang is not fatal: the epilogue still runs.
        if st.leaks_before.is_none() {
            st.leaks_before = Some(st.heap.leak_check().len());
        }
        st.heap.release_all();
    }

    let blocks = st
        .covered
        .iter()
        .enumerate()
        .filter(|(_, c)| **c)
        .map(|(i, _)| BlockId(i as u32))
        .collect();
    let path_hash = path_signature(&st.trace);
    if !st.record {
        st.trace.clear();
    }
    ExecResult {
        status,
        blocks,
        path_hash,
        consumed: st.input.cursor(),
        exhausted: st.input.exhausted(),
        leaks_before_epilogue: st.leaks_before,
        live_after: st.heap.leak_check().len(),
        shadow_violations: st.violations,
        steps: st.steps,
        trace: st.trace,
        events: st.events,
    }
}

impl State<'_, '_> {
    fn val(&self, v: V) -> u64 {
        match v {
            V::Imm(x) => x,
            V::Slot(s) => self.frames.last().unwrap().slots[s as usize],
        }
    }

    fn set(&mut self, slot: u32, v: u64) {
        self.frames.last_mut().unwrap().slots[slot as usize] = v;
    }

    fn enter_block(&mut self, target: u32) {
        let m = self.m;
        let fr = self.frames.last_mut().unwrap();
        fr.prev = fr.block;
        fr.block = target;
        fr.ip = 0;
        let id = m.funcs[fr.func].blocks[target as usize].id;
        self.covered[id as usize] = true;
        let cap = if self.record { MAX_RECORDED_TRACE } else { PATH_PREFIX };
        if self.trace.len() < cap {
            self.trace.push(BlockId(id));
        }
    }

    fn call(&mut self, func: usize, args: &[u64], ret_dst: Option<u32>) -> Result<(), CrashKind> {
        let f = &self.m.funcs[func];
        if let Some(ext) = f.ext {
            let r = self.external(ext, args)?;
            if let Some(d) = ret_dst {
                self.set(d, r);
            }
            return Ok(());
        }
        if self.frames.len() >= MAX_CALL_DEPTH {
            return Err(CrashKind::StepLimit);
        }
        if self.record && !self.frames.is_empty() {
            self.events.push(Event::Call {
                function: f.name.clone(),
                args: args.to_vec(),
            });
        }
        let mut slots = vec![0u64; f.nslots];
        let n = args.len().min(f.nparams);
        slots[..n].copy_from_slice(&args[..n]);
        self.frames.push(Frame {
            func,
            slots,
            block: 0,
            prev: 0,
            ip: 0,
            ret_dst,
        });
        self.enter_block(0);
        Ok(())
    }

    fn external(&mut self, ext: Ext, args: &[u64]) -> Result<u64, CrashKind> {
        let arg = |i: usize| args.get(i).copied().unwrap_or(0);
        match ext {
            Ext::Memcpy => {
                self.copy(arg(0), arg(1), arg(2))?;
                Ok(arg(0))
            }
            Ext::Memset => {
                self.fill(arg(0), arg(1), arg(2))?;
                Ok(arg(0))
            }
            Ext::Malloc => Ok(self.program_alloc(arg(0))),
            Ext::Calloc => {
                let size = arg(0).checked_mul(arg(1)).unwrap_or(u64::MAX);
                let p = self.program_alloc(size);
                if p != 0 {
                    self.heap.mark_assigned(p, size).map_err(CrashKind::from)?;
                }
                Ok(p)
            }
            Ext::Free => {
                self.free(arg(0))?;
                Ok(0)
            }
            Ext::Other => Ok(0),
        }
    }

    fn program_alloc(&mut self, size: u64) -> u64 {
        if size > MAX_ALLOC {
            0
        } else {
            self.heap.allocate(size, Origin::Program)
        }
    }

    fn free(&mut self, ptr: u64) -> Result<(), CrashKind> {
        if ptr == 0 {
            return Ok(());
        }
        self.heap.free(ptr).map_err(CrashKind::from)
    }

    fn check_read(&mut self, addr: u64, len: u64) -> Result<(), Fault> {
        if self.heap.unassigned_count(addr, len)? > 0 {
            self.violations += 1;
        }
        Ok(())
    }

    fn copy(&mut self, dst: u64, src: u64, len: u64) -> Result<(), CrashKind> {
        if len == 0 {
            return Ok(());
        }
        self.check_read(src, len)?;
        let bytes = self.heap.read(src, len)?.to_vec();
        self.heap.write(dst, &bytes)?;
        Ok(())
    }

    fn fill(&mut self, dst: u64, byte: u64, len: u64) -> Result<(), CrashKind> {
        if len == 0 {
            return Ok(());
        }
        self.heap.locate(dst, len)?;
        self.heap.write(dst, &vec![byte as u8; len as usize])?;
        Ok(())
    }

    /// Lazy-store materialization of one object of the given shape.
    fn materialize(&mut self, addr: u64, shape: &Shape) -> Result<(), Fault> {
        match shape {
            Shape::Scalar(size) => {
                let missing = self.heap.unassigned_count(addr, *size)?;
                if missing == 0 {
                    return Ok(());
                }
                let cursor = self.input.cursor();
                let bytes = self.input.read(missing);
                self.heap.fill_unassigned(addr, *size, &bytes)?;
                if self.record {
                    self.events.push(if missing as u64 == *size {
                        Event::Scalar {
                            source: ValueSource::LoadHook,
                            cursor,
                            size: *size,
                            value: le(&bytes),
                        }
                    } else {
                        Event::Bytes { cursor, addr, bytes }
                    });
                }
            }
            Shape::Pointer { alloc_size } => {
                if self.heap.unassigned_count(addr, 8)? == 0 {
                    return Ok(());
                }
                let p = self.heap.allocate(*alloc_size, Origin::Driver);
                self.heap.write(addr, &p.to_le_bytes())?;
                self.heap.mark_assigned(addr, 8)?;
                if self.record {
                    self.events.push(Event::Pointer {
                        base: p,
                        size: *alloc_size,
                    });
                }
            }
            Shape::FuncRef => {
                if self.heap.unassigned_count(addr, 8)? == 0 {
                    return Ok(());
                }
                self.heap.write(addr, &TRAP_FUNC.to_le_bytes())?;
                self.heap.mark_assigned(addr, 8)?;
            }
            Shape::Aggregate { size, fields } => {
                if self.heap.unassigned_count(addr, *size)? == 0 {
                    return Ok(());
                }
                for (off, s) in fields {
                    self.materialize(addr + off, s)?;
                }
                // Padding bytes count as assigned once the members are.
                self.heap.mark_assigned(addr, *size)?;
            }
        }
        Ok(())
    }

    fn run_loop(&mut self) -> Result<(), CrashKind> {
        let m = self.m;
        loop {
            let fr = self.frames.last_mut().unwrap();
            let inst = &m.funcs[fr.func].blocks[fr.block as usize].insts[fr.ip];
            fr.ip += 1;
            self.steps += 1;
            if self.steps > self.limit {
                return Err(CrashKind::StepLimit);
            }
            match inst {
                LInst::Const { dst, v } => self.set(*dst, *v),
                LInst::Bin { dst, op, mask, a, b } => {
                    let (a, b) = (self.val(*a), self.val(*b));
                    let r = match op {
                        BinOp::Add => a.wrapping_add(b),
                        BinOp::Sub => a.wrapping_sub(b),
                        BinOp::Mul => a.wrapping_mul(b),
                        BinOp::And => a & b,
                        BinOp::Or => a | b,
                        BinOp::Xor => a ^ b,
                    };
                    self.set(*dst, r & mask);
                }
                LInst::Cmp { dst, pred, bits, a, b } => {
                    let r = compare(*pred, self.val(*a), self.val(*b), *bits);
                    self.set(*dst, u64::from(r));
                }
                LInst::Load { dst, size, ptr } => {
                    let p = self.val(*ptr);
                    self.check_read(p, *size)?;
                    let v = le(self.heap.read(p, *size)?);
                    self.set(*dst, v);
                }
                LInst::Store { size, val, ptr } => {
                    let (v, p) = (self.val(*val), self.val(*ptr));
                    self.heap.write(p, &v.to_le_bytes()[..*size as usize])?;
                }
                LInst::GepStatic { dst, ptr, off } => {
                    let p = self.val(*ptr);
                    self.set(*dst, p.wrapping_add(*off));
                }
                LInst::GepScaled { dst, ptr, idx, stride } => {
                    let p = self.val(*ptr);
                    let i = self.val(*idx) as i64;
                    self.set(*dst, p.wrapping_add(i.wrapping_mul(*stride as i64) as u64));
                }
                LInst::Call { dst, target, args } => {
                    let argv: Vec<u64> = args.iter().map(|a| self.val(*a)).collect();
                    let func = match target {
                        Target::Func(i) => *i,
                        Target::Indirect(v) => {
                            let addr = self.val(*v);
                            if addr == TRAP_FUNC {
                                return Err(CrashKind::InvalidDriver);
                            }
                            match func_index(addr) {
                                Some(i) if i < m.funcs.len() => i,
                                _ => return Err(CrashKind::InvalidDriver),
                            }
                        }
                    };
                    self.call(func, &argv, *dst)?;
                }
                LInst::Alloc { dst, size } => {
                    let s = self.val(*size);
                    let p = self.program_alloc(s);
                    self.set(*dst, p);
                }
                LInst::Free { ptr } => {
                    let p = self.val(*ptr);
                    self.free(p)?;
                }
                LInst::Memcpy { dst, src, len } => {
                    let (d, s, n) = (self.val(*dst), self.val(*src), self.val(*len));
                    self.copy(d, s, n)?;
                }
                LInst::Memset { dst, byte, len } => {
                    let (d, b, n) = (self.val(*dst), self.val(*byte), self.val(*len));
                    self.fill(d, b, n)?;
                }
                LInst::Phi { dst, incoming } => {
                    let prev = self.frames.last().unwrap().prev;
                    let Some((v, _)) = incoming.iter().find(|(_, l)| *l == prev) else {
                        return Err(CrashKind::Trap);
                    };
                    let v = self.val(*v);
                    self.set(*dst, v);
                }
                LInst::Br { cond, then_b, else_b } => {
                    let t = if self.val(*cond) != 0 { *then_b } else { *else_b };
                    self.enter_block(t);
                }
                LInst::Jmp { target } => self.enter_block(*target),
                LInst::Ret { v } => {
                    let rv = v.map(|v| self.val(v)).unwrap_or(0);
                    let done = self.frames.pop().unwrap();
                    if self.frames.is_empty() {
                        // Keep the driver frame for crash attribution symmetry.
                        self.frames.push(done);
                        return Ok(());
                    }
                    if let Some(d) = done.ret_dst {
                        self.set(d, rv);
                    }
                }
                LInst::Trap => return Err(CrashKind::Trap),
                LInst::LoadHook { shape, ptr } => {
                    let p = self.val(*ptr);
                    let shape = &m.shapes[*shape as usize];
                    self.heap.locate(p, shape.size())?;
                    self.materialize(p, shape)?;
                }
                LInst::StoreHook { size, ptr } => {
                    let p = self.val(*ptr);
                    self.heap.mark_assigned(p, *size)?;
                }
                LInst::LoadRange { ptr, len } => {
                    let (p, n) = (self.val(*ptr), self.val(*len));
                    if n > 0 {
                        let missing = self.heap.unassigned_count(p, n)?;
                        if missing > 0 {
                            let cursor = self.input.cursor();
                            let bytes = self.input.read(missing);
                            self.heap.fill_unassigned(p, n, &bytes)?;
                            if self.record {
                                self.events.push(Event::Bytes { cursor, addr: p, bytes });
                            }
                        }
                    }
                }
                LInst::StoreRange { ptr, len } => {
                    let (p, n) = (self.val(*ptr), self.val(*len));
                    if n > 0 {
                        self.heap.mark_assigned(p, n)?;
                    }
                }
                LInst::Input { dst, size } => {
                    let cursor = self.input.cursor();
                    let bytes = self.input.read(*size as usize);
                    let v = le(&bytes);
                    if self.record {
                        self.events.push(Event::Scalar {
                            source: ValueSource::Driver,
                            cursor,
                            size: *size,
                            value: v,
                        });
                    }
                    self.set(*dst, v);
                }
                LInst::LazyAlloc { dst, size } => {
                    let p = self.heap.allocate(*size, Origin::Driver);
                    if self.record {
                        self.events.push(Event::Pointer { base: p, size: *size });
                    }
                    self.set(*dst, p);
                }
                LInst::FnTrap { dst } => self.set(*dst, TRAP_FUNC),
                LInst::LeakGuard => {
                    self.leaks_before = Some(self.heap.leak_check().len());
                    self.heap.release_all();
                }
            }
        }
    }
}
