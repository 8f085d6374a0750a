use std::collections::HashSet;

use super::lexer::Pos;
use super::parser::{Diagnostic, ParseError};
use super::*;

/// Source positions recorded by the parser, parallel to the program's
/// declarations. Used only to attach locations to diagnostics.
#[derive(Debug, Default)]
pub(crate) struct Spans {
    pub types: Vec<Pos>,
    /// Per function: its position, and per block its position plus one
    /// position per instruction.
    pub functions: Vec<(Pos, Vec<(Pos, Vec<Pos>)>)>,
}

/// Check all structural invariants of a program.
pub fn validate(p: &Program) -> Result<(), ParseError> {
    let diagnostics = check(p, None);
    if diagnostics.is_empty() {
        Ok(())
    } else {
        Err(ParseError { diagnostics })
    }
}

struct Checker<'a> {
    p: &'a Program,
    spans: Option<&'a Spans>,
    out: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn report(&mut self, pos: Option<Pos>, message: String) {
        let (line, col) = pos.map_or((0, 0), |p| (p.line, p.col));
        self.out.push(Diagnostic { line, col, message });
    }

    fn type_pos(&self, i: usize) -> Option<Pos> {
        self.spans.and_then(|s| s.types.get(i).copied())
    }

    fn func_pos(&self, f: usize) -> Option<Pos> {
        self.spans.and_then(|s| s.functions.get(f).map(|x| x.0))
    }

    fn block_pos(&self, f: usize, b: usize) -> Option<Pos> {
        self.spans
            .and_then(|s| s.functions.get(f))
            .and_then(|x| x.1.get(b))
            .map(|x| x.0)
    }

    fn inst_pos(&self, f: usize, b: usize, i: usize) -> Option<Pos> {
        self.spans
            .and_then(|s| s.functions.get(f))
            .and_then(|x| x.1.get(b))
            .and_then(|x| x.1.get(i))
            .copied()
    }

    /// Structural checks on a type expression; returns a message on failure.
    fn check_type(&self, t: &TypeDesc) -> Option<String> {
        match t {
            TypeDesc::Void => None,
            TypeDesc::Scalar(w) => (!SCALAR_WIDTHS.contains(w)).then(|| format!("invalid integer width {w}")),
            TypeDesc::Ptr(inner) => inner.as_deref().and_then(|i| self.check_type(i)),
            TypeDesc::Record(fields) => {
                if fields.is_empty() {
                    return Some("record types need at least one field".into());
                }
                fields.iter().find_map(|f| {
                    if *f == TypeDesc::Void {
                        Some("record field of type void".into())
                    } else {
                        self.check_type(f)
                    }
                })
            }
            TypeDesc::Array(elem, _) => {
                if **elem == TypeDesc::Void {
                    Some("array of void".into())
                } else {
                    self.check_type(elem)
                }
            }
            TypeDesc::FuncRef { params, ret } => params
                .iter()
                .chain(std::iter::once(&**ret))
                .find_map(|t| self.check_type(t)),
            TypeDesc::Named(n) => self
                .p
                .type_def(n)
                .is_none()
                .then(|| format!("unresolved type {n}")),
        }
    }

    fn check_sized(&self, t: &TypeDesc) -> Option<String> {
        if let Some(m) = self.check_type(t) {
            return Some(m);
        }
        self.p.layout().size_of(t).err().map(|e| e.to_string())
    }

    fn run(&mut self) {
        let p = self.p;
        let mut seen = HashSet::new();
        for (i, td) in p.types.iter().enumerate() {
            if !seen.insert(td.name.as_str()) {
                self.report(self.type_pos(i), format!("duplicate type {}", td.name));
            }
            if let Some(m) = self.check_type(&td.ty) {
                self.report(self.type_pos(i), m);
            } else if let Err(e) = p.layout().size_of(&td.ty) {
                self.report(self.type_pos(i), format!("type {}: {e}", td.name));
            }
        }

        let mut names = HashSet::new();
        for (fi, f) in p.functions.iter().enumerate() {
            if !names.insert(f.name.as_str()) {
                self.report(self.func_pos(fi), format!("duplicate function {}", f.name));
            }
            self.function(fi, f);
        }
    }

    fn function(&mut self, fi: usize, f: &Function) {
        let fpos = self.func_pos(fi);
        for param in &f.params {
            if param.ty == TypeDesc::Void {
                self.report(fpos, format!("parameter of {} has type void", f.name));
            } else if let Some(m) = self.check_type(&param.ty) {
                self.report(fpos, m);
            }
        }
        if let Some(m) = self.check_type(&f.ret) {
            self.report(fpos, m);
        }
        if f.external {
            if !f.blocks.is_empty() {
                self.report(fpos, format!("external {} has a body", f.name));
            }
            return;
        }
        if f.memory {
            self.report(fpos, format!("memory attribute on defined function {}", f.name));
        }
        if f.blocks.is_empty() {
            self.report(fpos, format!("function {} has no entry block", f.name));
            return;
        }

        let mut defs: HashSet<&str> = HashSet::new();
        for param in &f.params {
            if param.name.is_empty() {
                self.report(fpos, format!("unnamed parameter in {}", f.name));
            } else if !defs.insert(&param.name) {
                self.report(fpos, format!("duplicate definition of %{}", param.name));
            }
        }
        let mut labels = HashSet::new();
        for (bi, b) in f.blocks.iter().enumerate() {
            if !labels.insert(b.label.as_str()) {
                self.report(self.block_pos(fi, bi), format!("duplicate label {}", b.label));
            }
            for (ii, inst) in b.insts.iter().enumerate() {
                if let Some(d) = inst.dst() {
                    if !defs.insert(d) {
                        self.report(self.inst_pos(fi, bi, ii), format!("duplicate definition of %{d}"));
                    }
                }
            }
        }

        for (bi, b) in f.blocks.iter().enumerate() {
            match b.insts.last() {
                None => {
                    self.report(self.block_pos(fi, bi), format!("block {} is empty", b.label));
                    continue;
                }
                Some(last) if !last.is_terminator() => {
                    let pos = self.inst_pos(fi, bi, b.insts.len() - 1);
                    self.report(pos, format!("block {} does not end in a terminator", b.label));
                }
                _ => {}
            }
            for (ii, inst) in b.insts.iter().enumerate() {
                let pos = self.inst_pos(fi, bi, ii);
                if inst.is_terminator() && ii + 1 != b.insts.len() {
                    self.report(pos, format!("terminator in the middle of block {}", b.label));
                }
                for l in inst.successors() {
                    if !labels.contains(l) {
                        self.report(pos, format!("unresolved label {l}"));
                    }
                }
                for op in inst.operands() {
                    match op {
                        Operand::Local(n) if !defs.contains(n.as_str()) => {
                            self.report(pos, format!("undefined value %{n}"));
                        }
                        Operand::Func(n) if self.p.function(n).is_none() => {
                            self.report(pos, format!("unresolved function {n}"));
                        }
                        _ => {}
                    }
                }
                self.inst(f, inst, pos, &labels);
            }
        }
    }

    fn inst(&mut self, f: &Function, inst: &Inst, pos: Option<Pos>, labels: &HashSet<&str>) {
        let sized = |c: &Self, t: &TypeDesc| c.check_sized(t);
        let scalar = |t: &TypeDesc| -> Option<String> {
            match t {
                TypeDesc::Scalar(w) if SCALAR_WIDTHS.contains(w) => None,
                TypeDesc::Ptr(_) => None,
                other => Some(format!("expected an integer or pointer type, found {other:?}")),
            }
        };
        let msg = match inst {
            Inst::Const { ty, .. } | Inst::Bin { ty, .. } | Inst::Cmp { ty, .. } | Inst::Input { ty, .. } => {
                scalar(ty)
            }
            Inst::Load { ty, .. } | Inst::Store { ty, .. } => match self.p.layout().resolve(ty) {
                Ok(TypeDesc::Scalar(_) | TypeDesc::Ptr(_) | TypeDesc::FuncRef { .. }) => None,
                _ => Some(format!("load/store of non-register type {ty}")),
            },
            Inst::LoadHook { ty, .. } | Inst::StoreHook { ty, .. } => sized(self, ty),
            Inst::Phi { ty, incoming, .. } => {
                if incoming.is_empty() {
                    Some("phi without incoming values".into())
                } else if let Some((_, l)) = incoming.iter().find(|(_, l)| !labels.contains(l.as_str())) {
                    Some(format!("unresolved label {l}"))
                } else {
                    sized(self, ty)
                }
            }
            Inst::Gep { base, offset, .. } => match sized(self, base) {
                Some(m) => Some(m),
                None => match offset {
                    GepOffset::Field(i) => {
                        let layout = self.p.layout();
                        layout
                            .field_type(base, *i)
                            .is_none()
                            .then(|| format!("gep field {i} out of range for {base:?}"))
                    }
                    GepOffset::Index(_) => None,
                },
            },
            Inst::Call { callee: Callee::Direct(name), args, .. } => match self.p.function(name) {
                None => Some(format!("unresolved function {name}")),
                Some(g) if g.params.len() != args.len() => Some(format!(
                    "call to {name} passes {} arguments, expected {}",
                    args.len(),
                    g.params.len()
                )),
                _ => None,
            },
            Inst::Ret { value } => match (&f.ret, value) {
                (TypeDesc::Void, Some(_)) => Some(format!("{} returns void but ret has a value", f.name)),
                (TypeDesc::Void, None) => None,
                (_, None) => Some(format!("{} must return a value", f.name)),
                _ => None,
            },
            _ => None,
        };
        if let Some(m) = msg {
            self.report(pos, m);
        }
    }
}

pub(crate) fn check(p: &Program, spans: Option<&Spans>) -> Vec<Diagnostic> {
    let mut c = Checker {
        p,
        spans,
        out: Vec::new(),
    };
    c.run();
    c.out
}
