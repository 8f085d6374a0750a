use std::fmt;

use super::lexer::{tokenize, Pos, Tok, Token};
use super::validate::{check, Spans};
use super::*;

/// A located error message. Line and column are 1-based; 0 means the
/// location is unknown (programs built in memory rather than parsed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}:{}: {}", self.line, self.col, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.diagnostics.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl ParseError {
    fn at(pos: Pos, message: impl Into<String>) -> Self {
        ParseError {
            diagnostics: vec![Diagnostic {
                line: pos.line,
                col: pos.col,
                message: message.into(),
            }],
        }
    }
}

type PResult<T> = Result<T, ParseError>;

/// Parse and validate a mini-IR module.
pub fn parse_module(text: &str) -> Result<Program, ParseError> {
    let tokens = tokenize(text).map_err(|(pos, msg)| ParseError::at(pos, msg))?;
    let mut p = Parser {
        toks: tokens,
        i: 0,
        spans: Spans::default(),
    };
    let program = p.module()?;
    let diags = check(&program, Some(&p.spans));
    if diags.is_empty() {
        Ok(program)
    } else {
        Err(ParseError { diagnostics: diags })
    }
}

struct Parser {
    toks: Vec<Token>,
    i: usize,
    spans: Spans,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let j = (self.i + n).min(self.toks.len() - 1);
        &self.toks[j].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].pos
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(ParseError::at(self.pos(), msg))
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Local(s) => format!("'%{s}'"),
            Tok::Global(s) => format!("'@{s}'"),
            Tok::Int(v) => format!("'{v}'"),
            Tok::Punct(c) => format!("'{c}'"),
            Tok::Arrow => "'->'".into(),
            Tok::Eof => "end of input".into(),
        }
    }

    fn expect_punct(&mut self, c: char) -> PResult<()> {
        if *self.peek() == Tok::Punct(c) {
            self.next();
            Ok(())
        } else {
            self.err(format!("expected '{c}', found {}", Self::describe(self.peek())))
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Punct(c) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect_arrow(&mut self) -> PResult<()> {
        if *self.peek() == Tok::Arrow {
            self.next();
            Ok(())
        } else {
            self.err(format!("expected '->', found {}", Self::describe(self.peek())))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            t => self.err(format!("expected identifier, found {}", Self::describe(&t))),
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<()> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.next();
                Ok(())
            }
            t => {
                let d = Self::describe(t);
                self.err(format!("expected '{kw}', found {d}"))
            }
        }
    }

    fn local(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Local(s) => {
                self.next();
                Ok(s)
            }
            t => self.err(format!("expected local value, found {}", Self::describe(&t))),
        }
    }

    fn int(&mut self) -> PResult<i64> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.next();
                Ok(v)
            }
            t => self.err(format!("expected integer, found {}", Self::describe(&t))),
        }
    }

    fn uint(&mut self) -> PResult<u64> {
        let pos = self.pos();
        let v = self.int()?;
        if v < 0 {
            return Err(ParseError::at(pos, "expected a non-negative integer"));
        }
        Ok(v as u64)
    }

    fn func_name(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) | Tok::Global(s) => {
                self.next();
                Ok(s)
            }
            t => self.err(format!("expected function name, found {}", Self::describe(&t))),
        }
    }

    fn module(&mut self) -> PResult<Program> {
        let mut prog = Program::default();
        loop {
            let pos = self.pos();
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Ident(kw) if kw == "type" => {
                    self.next();
                    let name = self.ident()?;
                    self.expect_punct('=')?;
                    let ty = self.ty()?;
                    self.spans.types.push(pos);
                    prog.types.push(TypeDef { name, ty });
                }
                Tok::Ident(kw) if kw == "declare" => {
                    self.next();
                    let name = self.func_name()?;
                    self.expect_punct('(')?;
                    let mut params = Vec::new();
                    if !self.eat_punct(')') {
                        loop {
                            let pname = if let Tok::Local(_) = self.peek() {
                                let n = self.local()?;
                                self.expect_punct(':')?;
                                n
                            } else {
                                String::new()
                            };
                            params.push(Param::new(pname, self.ty()?));
                            if self.eat_punct(')') {
                                break;
                            }
                            self.expect_punct(',')?;
                        }
                    }
                    self.expect_arrow()?;
                    let ret = self.ty()?;
                    let memory = matches!(self.peek(), Tok::Ident(s) if s == "memory");
                    if memory {
                        self.next();
                    }
                    self.spans.functions.push((pos, Vec::new()));
                    prog.functions.push(Function::external(name, params, ret, memory));
                }
                Tok::Ident(kw) if kw == "func" => {
                    self.next();
                    let f = self.function(pos)?;
                    prog.functions.push(f);
                }
                t => return self.err(format!("expected 'type', 'declare' or 'func', found {}", Self::describe(&t))),
            }
        }
        Ok(prog)
    }

    fn function(&mut self, pos: Pos) -> PResult<Function> {
        let name = self.func_name()?;
        self.expect_punct('(')?;
        let mut params = Vec::new();
        if !self.eat_punct(')') {
            loop {
                let pname = self.local()?;
                self.expect_punct(':')?;
                params.push(Param::new(pname, self.ty()?));
                if self.eat_punct(')') {
                    break;
                }
                self.expect_punct(',')?;
            }
        }
        self.expect_arrow()?;
        let ret = self.ty()?;
        self.expect_punct('{')?;
        let mut f = Function::new(name, params, ret);
        let mut block_spans = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Punct('}') => {
                    self.next();
                    break;
                }
                Tok::Ident(label) if *self.peek_at(1) == Tok::Punct(':') => {
                    let bpos = self.pos();
                    self.next();
                    self.next();
                    f.blocks.push(Block {
                        label,
                        insts: Vec::new(),
                    });
                    block_spans.push((bpos, Vec::new()));
                }
                Tok::Eof => return self.err(format!("unterminated function '{}'", f.name)),
                _ => {
                    let ipos = self.pos();
                    let Some(block) = f.blocks.last_mut() else {
                        return self.err("instruction outside of a labeled block");
                    };
                    let inst = self.inst()?;
                    block.insts.push(inst);
                    block_spans.last_mut().unwrap().1.push(ipos);
                }
            }
        }
        self.spans.functions.push((pos, block_spans));
        Ok(f)
    }

    fn ty(&mut self) -> PResult<TypeDesc> {
        let pos = self.pos();
        match self.next().tok {
            Tok::Ident(s) => match s.as_str() {
                "void" => Ok(TypeDesc::Void),
                "i8" => Ok(TypeDesc::Scalar(8)),
                "i16" => Ok(TypeDesc::Scalar(16)),
                "i32" => Ok(TypeDesc::Scalar(32)),
                "i64" => Ok(TypeDesc::Scalar(64)),
                "ptr" => {
                    if self.eat_punct('<') {
                        let inner = self.ty()?;
                        self.expect_punct('>')?;
                        Ok(TypeDesc::ptr_to(inner))
                    } else {
                        Ok(TypeDesc::Ptr(None))
                    }
                }
                "fn" => {
                    self.expect_punct('(')?;
                    let mut params = Vec::new();
                    if !self.eat_punct(')') {
                        loop {
                            params.push(self.ty()?);
                            if self.eat_punct(')') {
                                break;
                            }
                            self.expect_punct(',')?;
                        }
                    }
                    self.expect_arrow()?;
                    let ret = self.ty()?;
                    Ok(TypeDesc::FuncRef {
                        params,
                        ret: Box::new(ret),
                    })
                }
                w if w.starts_with('i') && w[1..].chars().all(|c| c.is_ascii_digit()) && w.len() > 1 => {
                    Err(ParseError::at(pos, format!("unsupported integer width '{w}'")))
                }
                _ => Ok(TypeDesc::Named(s)),
            },
            Tok::Punct('{') => {
                let mut fields = Vec::new();
                if !self.eat_punct('}') {
                    loop {
                        fields.push(self.ty()?);
                        if self.eat_punct('}') {
                            break;
                        }
                        self.expect_punct(',')?;
                    }
                }
                Ok(TypeDesc::Record(fields))
            }
            Tok::Punct('[') => {
                let count = self.uint()?;
                self.keyword("x")?;
                let elem = self.ty()?;
                self.expect_punct(']')?;
                Ok(TypeDesc::Array(Box::new(elem), count))
            }
            t => Err(ParseError::at(pos, format!("expected type, found {}", Self::describe(&t)))),
        }
    }

    fn operand(&mut self) -> PResult<Operand> {
        match self.peek().clone() {
            Tok::Local(s) => {
                self.next();
                Ok(Operand::Local(s))
            }
            Tok::Global(s) => {
                self.next();
                Ok(Operand::Func(s))
            }
            Tok::Int(v) => {
                self.next();
                Ok(Operand::Const(v))
            }
            t => self.err(format!("expected operand, found {}", Self::describe(&t))),
        }
    }

    fn two_operands(&mut self) -> PResult<(Operand, Operand)> {
        let a = self.operand()?;
        self.expect_punct(',')?;
        let b = self.operand()?;
        Ok((a, b))
    }

    fn three_operands(&mut self) -> PResult<(Operand, Operand, Operand)> {
        let (a, b) = self.two_operands()?;
        self.expect_punct(',')?;
        let c = self.operand()?;
        Ok((a, b, c))
    }

    fn call_rest(&mut self, dst: Option<String>) -> PResult<Inst> {
        let callee = match self.peek().clone() {
            Tok::Global(s) => {
                self.next();
                Callee::Direct(s)
            }
            Tok::Local(s) => {
                self.next();
                Callee::Indirect(Operand::Local(s))
            }
            t => return self.err(format!("expected call target, found {}", Self::describe(&t))),
        };
        self.expect_punct('(')?;
        let mut args = Vec::new();
        if !self.eat_punct(')') {
            loop {
                args.push(self.operand()?);
                if self.eat_punct(')') {
                    break;
                }
                self.expect_punct(',')?;
            }
        }
        Ok(Inst::Call { dst, callee, args })
    }

    fn inst(&mut self) -> PResult<Inst> {
        if let Tok::Local(dst) = self.peek().clone() {
            self.next();
            self.expect_punct('=')?;
            let opcode_pos = self.pos();
            let op = self.ident()?;
            return match op.as_str() {
                "const" => {
                    let ty = self.ty()?;
                    let value = self.int()?;
                    Ok(Inst::Const { dst, ty, value })
                }
                "cmp" => {
                    let ppos = self.pos();
                    let p = self.ident()?;
                    let pred = CmpPred::from_mnemonic(&p)
                        .ok_or_else(|| ParseError::at(ppos, format!("unknown comparison predicate '{p}'")))?;
                    let ty = self.ty()?;
                    let (lhs, rhs) = self.two_operands()?;
                    Ok(Inst::Cmp {
                        dst,
                        pred,
                        ty,
                        lhs,
                        rhs,
                    })
                }
                "load" => {
                    let ty = self.ty()?;
                    self.expect_punct(',')?;
                    let ptr = self.operand()?;
                    Ok(Inst::Load { dst, ty, ptr })
                }
                "gep" => {
                    let base = self.ty()?;
                    self.expect_punct(',')?;
                    let ptr = self.operand()?;
                    self.expect_punct(',')?;
                    let kpos = self.pos();
                    let offset = match self.ident()?.as_str() {
                        "field" => {
                            let v = self.uint()?;
                            GepOffset::Field(
                                u32::try_from(v).map_err(|_| ParseError::at(kpos, "field index too large"))?,
                            )
                        }
                        "index" => GepOffset::Index(self.operand()?),
                        k => return Err(ParseError::at(kpos, format!("expected 'field' or 'index', found '{k}'"))),
                    };
                    Ok(Inst::Gep {
                        dst,
                        base,
                        ptr,
                        offset,
                    })
                }
                "call" => self.call_rest(Some(dst)),
                "alloc" => Ok(Inst::Alloc {
                    dst,
                    size: self.operand()?,
                }),
                "phi" => {
                    let ty = self.ty()?;
                    let mut incoming = Vec::new();
                    loop {
                        self.expect_punct('[')?;
                        let v = self.operand()?;
                        self.expect_punct(',')?;
                        let l = self.ident()?;
                        self.expect_punct(']')?;
                        incoming.push((v, l));
                        if !self.eat_punct(',') {
                            break;
                        }
                    }
                    Ok(Inst::Phi { dst, ty, incoming })
                }
                "input" => Ok(Inst::Input { dst, ty: self.ty()? }),
                "lazyalloc" => Ok(Inst::LazyAlloc {
                    dst,
                    size: self.uint()?,
                }),
                "fntrap" => Ok(Inst::FnTrap { dst }),
                other => {
                    if let Some(op) = BinOp::from_mnemonic(other) {
                        let ty = self.ty()?;
                        let (lhs, rhs) = self.two_operands()?;
                        Ok(Inst::Bin { dst, op, ty, lhs, rhs })
                    } else {
                        Err(ParseError::at(opcode_pos, format!("unknown value-producing opcode '{other}'")))
                    }
                }
            };
        }
        let opcode_pos = self.pos();
        let op = self.ident()?;
        match op.as_str() {
            "store" => {
                let ty = self.ty()?;
                let (value, ptr) = self.two_operands()?;
                Ok(Inst::Store { ty, value, ptr })
            }
            "call" => self.call_rest(None),
            "free" => Ok(Inst::Free { ptr: self.operand()? }),
            "memcpy" => {
                let (dst, src, len) = self.three_operands()?;
                Ok(Inst::Memcpy { dst, src, len })
            }
            "memset" => {
                let (dst, byte, len) = self.three_operands()?;
                Ok(Inst::Memset { dst, byte, len })
            }
            "br" => {
                let cond = self.operand()?;
                self.expect_punct(',')?;
                let then_label = self.ident()?;
                self.expect_punct(',')?;
                let else_label = self.ident()?;
                Ok(Inst::Br {
                    cond,
                    then_label,
                    else_label,
                })
            }
            "jmp" => Ok(Inst::Jmp { target: self.ident()? }),
            "ret" => {
                let value = match self.peek() {
                    Tok::Local(_) | Tok::Global(_) | Tok::Int(_) => Some(self.operand()?),
                    _ => None,
                };
                Ok(Inst::Ret { value })
            }
            "trap" => Ok(Inst::Trap),
            "hook.load" | "hook.store" => {
                let ty = self.ty()?;
                self.expect_punct(',')?;
                let ptr = self.operand()?;
                Ok(if op == "hook.load" {
                    Inst::LoadHook { ty, ptr }
                } else {
                    Inst::StoreHook { ty, ptr }
                })
            }
            "hook.loadrange" | "hook.storerange" => {
                let (ptr, len) = self.two_operands()?;
                Ok(if op == "hook.loadrange" {
                    Inst::LoadRangeHook { ptr, len }
                } else {
                    Inst::StoreRangeHook { ptr, len }
                })
            }
            "leakguard" => Ok(Inst::LeakGuard),
            other => Err(ParseError::at(opcode_pos, format!("unknown opcode '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_module() {
        let p = parse_module("func f() -> void { entry: ret }").unwrap();
        assert_eq!(p.functions.len(), 1);
        let f = &p.functions[0];
        assert_eq!(f.name, "f");
        assert_eq!(f.blocks.len(), 1);
        assert_eq!(f.blocks[0].insts, vec![Inst::Ret { value: None }]);
    }

    #[test]
    fn unresolved_callee() {
        let err = parse_module("func f() -> void {\nentry:\n  call @g()\n  ret\n}").unwrap_err();
        let d = &err.diagnostics[0];
        assert!(d.message.contains("unresolved function g"), "{d}");
        assert_eq!((d.line, d.col), (3, 3));
    }

    #[test]
    fn syntax_error_has_location() {
        let err = parse_module("func f() -> void {\nentry:\n  %x = add i32 %a\n}").unwrap_err();
        let d = &err.diagnostics[0];
        assert_eq!(d.line, 4);
        assert!(d.message.contains("expected ','"), "{d}");
    }

    #[test]
    fn duplicate_definition() {
        let src = "func f(%a: i32) -> i32 {\nentry:\n  %a = add i32 %a, 1\n  ret %a\n}";
        let err = parse_module(src).unwrap_err();
        assert!(err.diagnostics[0].message.contains("duplicate definition of %a"));
        assert_eq!(err.diagnostics[0].line, 3);
    }

    #[test]
    fn all_forms_parse() {
        let src = r#"
type Pair = { i32, i64 }
declare @memset(ptr, i8, i64) -> void memory
declare puts(%s: ptr<i8>) -> i32
func g(%p: ptr<Pair>, %cb: fn(i32) -> i32, %arr: [4 x i16]) -> i32 {
entry:
  %f = gep Pair, %p, field 1
  %v = load i64, %f
  %c = cmp ult i64 %v, 0x10
  br %c, small, big
small:
  %r = call %cb(7)
  jmp done
big:
  %m = alloc 16
  memset %m, 0, 16
  call @memset(%m, 1, 16)
  %i = input i32
  %l = lazyalloc 64
  %t = fntrap
  hook.load i64, %f
  hook.store i64, %f
  hook.loadrange %m, 16
  hook.storerange %m, 16
  memcpy %l, %m, 16
  free %m
  leakguard
  jmp done
done:
  %x = phi i32 [%r, small], [-1, big]
  %fp = call @puts(0)
  ret %x
}
"#;
        let p = parse_module(src).unwrap();
        assert_eq!(p.functions.len(), 3);
        assert!(p.functions[0].memory);
        assert!(!p.functions[1].memory);
    }
}
