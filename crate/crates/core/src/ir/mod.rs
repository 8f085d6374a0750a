//! The mini-IR: an SSA-style program representation with typed memory
//! operations, calls and comparisons.
//!
//! Programs are built by [`parse_module`] and printed by [`render_module`];
//! the two are inverse on valid programs. Addresses are opaque 64-bit handles
//! handed out by the runtime, pointers are 8 bytes wide.

mod layout;
mod lexer;
mod parser;
mod render;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use layout::{Layout, LayoutError, POINTER_SIZE};
pub use parser::{parse_module, Diagnostic, ParseError};
pub use render::render_module;
pub use validate::validate;

/// Semantic type of an IR value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TypeDesc {
    Void,
    /// Integer of the given bit width (8, 16, 32 or 64).
    Scalar(u8),
    /// Pointer; `None` is an opaque pointee (`ptr` / `void*`).
    Ptr(Option<Box<TypeDesc>>),
    Record(Vec<TypeDesc>),
    Array(Box<TypeDesc>, u64),
    FuncRef {
        params: Vec<TypeDesc>,
        ret: Box<TypeDesc>,
    },
    /// Reference into the program's named type table.
    Named(String),
}

pub const SCALAR_WIDTHS: [u8; 4] = [8, 16, 32, 64];

impl TypeDesc {
    pub fn i8() -> Self {
        TypeDesc::Scalar(8)
    }
    pub fn i16() -> Self {
        TypeDesc::Scalar(16)
    }
    pub fn i32() -> Self {
        TypeDesc::Scalar(32)
    }
    pub fn i64() -> Self {
        TypeDesc::Scalar(64)
    }
    pub fn ptr_to(t: TypeDesc) -> Self {
        TypeDesc::Ptr(Some(Box::new(t)))
    }
    pub fn opaque_ptr() -> Self {
        TypeDesc::Ptr(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
}

impl BinOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Some(match s {
            "add" => BinOp::Add,
            "sub" => BinOp::Sub,
            "mul" => BinOp::Mul,
            "and" => BinOp::And,
            "or" => BinOp::Or,
            "xor" => BinOp::Xor,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpPred {
    Eq,
    Ne,
    Slt,
    Sle,
    Sgt,
    Sge,
    Ult,
    Ule,
    Ugt,
    Uge,
}

impl CmpPred {
    pub const ALL: [CmpPred; 10] = [
        CmpPred::Eq,
        CmpPred::Ne,
        CmpPred::Slt,
        CmpPred::Sle,
        CmpPred::Sgt,
        CmpPred::Sge,
        CmpPred::Ult,
        CmpPred::Ule,
        CmpPred::Ugt,
        CmpPred::Uge,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            CmpPred::Eq => "eq",
            CmpPred::Ne => "ne",
            CmpPred::Slt => "slt",
            CmpPred::Sle => "sle",
            CmpPred::Sgt => "sgt",
            CmpPred::Sge => "sge",
            CmpPred::Ult => "ult",
            CmpPred::Ule => "ule",
            CmpPred::Ugt => "ugt",
            CmpPred::Uge => "uge",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        CmpPred::ALL.into_iter().find(|p| p.mnemonic() == s)
    }
}

/// An instruction operand: an SSA local, an integer literal, or the address
/// of a function.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Local(String),
    Const(i64),
    Func(String),
}

impl Operand {
    pub fn local(name: impl Into<String>) -> Self {
        Operand::Local(name.into())
    }

    pub fn as_local(&self) -> Option<&str> {
        match self {
            Operand::Local(n) => Some(n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Callee {
    Direct(String),
    Indirect(Operand),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GepOffset {
    /// Field of a record, or element of an array, at a static index.
    Field(u32),
    /// Pointer arithmetic: `index * size(base type)`.
    Index(Operand),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Inst {
    Const {
        dst: String,
        ty: TypeDesc,
        value: i64,
    },
    Bin {
        dst: String,
        op: BinOp,
        ty: TypeDesc,
        lhs: Operand,
        rhs: Operand,
    },
    /// Produces an `i8` holding 0 or 1.
    Cmp {
        dst: String,
        pred: CmpPred,
        ty: TypeDesc,
        lhs: Operand,
        rhs: Operand,
    },
    Load {
        dst: String,
        ty: TypeDesc,
        ptr: Operand,
    },
    Store {
        ty: TypeDesc,
        value: Operand,
        ptr: Operand,
    },
    Gep {
        dst: String,
        base: TypeDesc,
        ptr: Operand,
        offset: GepOffset,
    },
    Call {
        dst: Option<String>,
        callee: Callee,
        args: Vec<Operand>,
    },
    Alloc {
        dst: String,
        size: Operand,
    },
    Free {
        ptr: Operand,
    },
    Memcpy {
        dst: Operand,
        src: Operand,
        len: Operand,
    },
    Memset {
        dst: Operand,
        byte: Operand,
        len: Operand,
    },
    Phi {
        dst: String,
        ty: TypeDesc,
        incoming: Vec<(Operand, String)>,
    },
    Br {
        cond: Operand,
        then_label: String,
        else_label: String,
    },
    Jmp {
        target: String,
    },
    Ret {
        value: Option<Operand>,
    },
    Trap,

    // Runtime hooks inserted by the synthesizer.
    /// Materialize the accessed extent if any byte of it is unassigned.
    LoadHook {
        ty: TypeDesc,
        ptr: Operand,
    },
    /// Mark the accessed extent assigned.
    StoreHook {
        ty: TypeDesc,
        ptr: Operand,
    },
    /// Byte-range form of `LoadHook`, used around memcpy/memset.
    LoadRangeHook {
        ptr: Operand,
        len: Operand,
    },
    StoreRangeHook {
        ptr: Operand,
        len: Operand,
    },
    /// Read a little-endian scalar from the fuzz input.
    Input {
        dst: String,
        ty: TypeDesc,
    },
    /// Allocate `size` bytes owned by the driver, all unassigned.
    LazyAlloc {
        dst: String,
        size: u64,
    },
    /// A function reference whose invocation invalidates the driver.
    FnTrap {
        dst: String,
    },
    /// Release every live allocation recorded in the ledger.
    LeakGuard,
}

impl Inst {
    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            Inst::Br { .. } | Inst::Jmp { .. } | Inst::Ret { .. } | Inst::Trap
        )
    }

    pub fn is_access_hook(&self) -> bool {
        matches!(
            self,
            Inst::LoadHook { .. }
                | Inst::StoreHook { .. }
                | Inst::LoadRangeHook { .. }
                | Inst::StoreRangeHook { .. }
        )
    }

    /// The SSA value this instruction defines, if any.
    pub fn dst(&self) -> Option<&str> {
        match self {
            Inst::Const { dst, .. }
            | Inst::Bin { dst, .. }
            | Inst::Cmp { dst, .. }
            | Inst::Load { dst, .. }
            | Inst::Gep { dst, .. }
            | Inst::Alloc { dst, .. }
            | Inst::Phi { dst, .. }
            | Inst::Input { dst, .. }
            | Inst::LazyAlloc { dst, .. }
            | Inst::FnTrap { dst } => Some(dst),
            Inst::Call { dst, .. } => dst.as_deref(),
            _ => None,
        }
    }

    /// All operands read by this instruction, in textual order.
    pub fn operands(&self) -> Vec<&Operand> {
        match self {
            Inst::Const { .. }
            | Inst::Jmp { .. }
            | Inst::Trap
            | Inst::Input { .. }
            | Inst::LazyAlloc { .. }
            | Inst::FnTrap { .. }
            | Inst::LeakGuard => vec![],
            Inst::Bin { lhs, rhs, .. } | Inst::Cmp { lhs, rhs, .. } => vec![lhs, rhs],
            Inst::Load { ptr, .. }
            | Inst::Free { ptr }
            | Inst::LoadHook { ptr, .. }
            | Inst::StoreHook { ptr, .. } => vec![ptr],
            Inst::Store { value, ptr, .. } => vec![value, ptr],
            Inst::Gep { ptr, offset, .. } => match offset {
                GepOffset::Field(_) => vec![ptr],
                GepOffset::Index(i) => vec![ptr, i],
            },
            Inst::Call { callee, args, .. } => {
                let mut v = Vec::with_capacity(args.len() + 1);
                if let Callee::Indirect(op) = callee {
                    v.push(op);
                }
                v.extend(args.iter());
                v
            }
            Inst::Alloc { size, .. } => vec![size],
            Inst::Memcpy { dst, src, len } => vec![dst, src, len],
            Inst::Memset { dst, byte, len } => vec![dst, byte, len],
            Inst::Phi { incoming, .. } => incoming.iter().map(|(o, _)| o).collect(),
            Inst::Br { cond, .. } => vec![cond],
            Inst::Ret { value } => value.iter().collect(),
            Inst::LoadRangeHook { ptr, len } | Inst::StoreRangeHook { ptr, len } => vec![ptr, len],
        }
    }

    pub fn successors(&self) -> Vec<&str> {
        match self {
            Inst::Br {
                then_label,
                else_label,
                ..
            } => vec![then_label, else_label],
            Inst::Jmp { target } => vec![target],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub label: String,
    pub insts: Vec<Inst>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub ty: TypeDesc,
}

impl Param {
    pub fn new(name: impl Into<String>, ty: TypeDesc) -> Self {
        Param {
            name: name.into(),
            ty,
        }
    }
}

/// A function definition, or an external declaration when `external` is set
/// (externals have no blocks).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: TypeDesc,
    pub blocks: Vec<Block>,
    pub external: bool,
    /// Set on externals declared with the `memory` attribute.
    pub memory: bool,
}

impl Function {
    pub fn new(name: impl Into<String>, params: Vec<Param>, ret: TypeDesc) -> Self {
        Function {
            name: name.into(),
            params,
            ret,
            blocks: Vec::new(),
            external: false,
            memory: false,
        }
    }

    pub fn external(name: impl Into<String>, params: Vec<Param>, ret: TypeDesc, memory: bool) -> Self {
        Function {
            external: true,
            memory,
            ..Function::new(name, params, ret)
        }
    }

    pub fn block(&self, label: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn insts(&self) -> impl Iterator<Item = &Inst> {
        self.blocks.iter().flat_map(|b| b.insts.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TypeDef {
    pub name: String,
    pub ty: TypeDesc,
}

/// A module: named types plus functions and external declarations, both in
/// declaration order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Program {
    pub types: Vec<TypeDef>,
    pub functions: Vec<Function>,
}

/// Global basic-block identifier: blocks are numbered in function
/// declaration order, then block order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId(pub u32);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_mut(&mut self, name: &str) -> Option<&mut Function> {
        self.functions.iter_mut().find(|f| f.name == name)
    }

    pub fn type_def(&self, name: &str) -> Option<&TypeDesc> {
        self.types.iter().find(|t| t.name == name).map(|t| &t.ty)
    }

    pub fn layout(&self) -> Layout<'_> {
        Layout::new(self)
    }

    /// Global id of `label` in `function`.
    pub fn block_id(&self, function: &str, label: &str) -> Option<BlockId> {
        let mut next = 0u32;
        for f in &self.functions {
            if f.name == function {
                let idx = f.blocks.iter().position(|b| b.label == label)?;
                return Some(BlockId(next + idx as u32));
            }
            next += f.blocks.len() as u32;
        }
        None
    }

    /// Inverse of [`Program::block_id`].
    pub fn block_name(&self, id: BlockId) -> Option<(&str, &str)> {
        let mut next = 0u32;
        for f in &self.functions {
            let n = f.blocks.len() as u32;
            if id.0 < next + n {
                let b = &f.blocks[(id.0 - next) as usize];
                return Some((&f.name, &b.label));
            }
            next += n;
        }
        None
    }

    pub fn block_count(&self) -> usize {
        self.functions.iter().map(|f| f.blocks.len()).sum()
    }

    /// Stable identity of the program, derived from its canonical text.
    pub fn identity(&self) -> String {
        format!("{:016x}", crate::hash::fnv1a64(render_module(self).as_bytes()))
    }

    /// Concatenate several modules into one, rejecting duplicate definitions.
    /// External declarations with the same name are merged; a definition
    /// replaces a matching external.
    pub fn link(modules: Vec<Program>) -> Result<Program, LinkError> {
        let mut out = Program::default();
        for m in modules {
            for t in m.types {
                match out.type_def(&t.name) {
                    Some(existing) if *existing == t.ty => {}
                    Some(_) => return Err(LinkError::ConflictingType(t.name)),
                    None => out.types.push(t),
                }
            }
            for f in m.functions {
                match out.functions.iter().position(|g| g.name == f.name) {
                    None => out.functions.push(f),
                    Some(i) => {
                        let existing = &out.functions[i];
                        match (existing.external, f.external) {
                            (true, true) => {
                                if existing.params != f.params || existing.ret != f.ret {
                                    return Err(LinkError::ConflictingDecl(f.name));
                                }
                                let memory = existing.memory || f.memory;
                                out.functions[i].memory = memory;
                            }
                            (true, false) => out.functions[i] = f,
                            (false, true) => {}
                            (false, false) => return Err(LinkError::DuplicateFunction(f.name)),
                        }
                    }
                }
            }
        }
        validate(&out).map_err(LinkError::Invalid)?;
        Ok(out)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error("function {0} defined in more than one module")]
    DuplicateFunction(String),
    #[error("conflicting declarations of external {0}")]
    ConflictingDecl(String),
    #[error("conflicting definitions of type {0}")]
    ConflictingType(String),
    #[error("linked module is invalid: {0}")]
    Invalid(ParseError),
}
