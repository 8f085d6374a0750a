use super::{Program, TypeDesc};

pub const POINTER_SIZE: u64 = 8;
const MAX_ALIGN: u64 = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayoutError {
    #[error("type {0} has no size")]
    Unsized(String),
    #[error("unknown type {0}")]
    UnknownType(String),
    #[error("type {0} is recursive without pointer indirection")]
    Recursive(String),
}

/// Sizes, alignments and field offsets of types in one program.
///
/// Alignment is natural alignment capped at 8: scalars align to their width,
/// pointers and function references to 8, arrays to their element and records
/// to their most-aligned field. Records are padded to their alignment.
#[derive(Clone, Copy)]
pub struct Layout<'p> {
    program: &'p Program,
}

impl<'p> Layout<'p> {
    pub fn new(program: &'p Program) -> Self {
        Layout { program }
    }

    /// Follow named references until a structural type is reached.
    pub fn resolve<'a>(&'a self, t: &'a TypeDesc) -> Result<&'a TypeDesc, LayoutError>
    where
        'p: 'a,
    {
        let mut cur = t;
        let mut hops = 0;
        while let TypeDesc::Named(n) = cur {
            cur = self
                .program
                .type_def(n)
                .ok_or_else(|| LayoutError::UnknownType(n.clone()))?;
            hops += 1;
            if hops > self.program.types.len() {
                return Err(LayoutError::Recursive(n.clone()));
            }
        }
        Ok(cur)
    }

    pub fn size_of(&self, t: &TypeDesc) -> Result<u64, LayoutError> {
        self.size_align(t, 0).map(|(s, _)| s)
    }

    pub fn align_of(&self, t: &TypeDesc) -> Result<u64, LayoutError> {
        self.size_align(t, 0).map(|(_, a)| a)
    }

    /// Byte offsets of each field of a record (or each element of an array).
    pub fn field_offsets(&self, t: &TypeDesc) -> Result<Vec<u64>, LayoutError> {
        match self.resolve(t)? {
            TypeDesc::Record(fields) => {
                let mut offsets = Vec::with_capacity(fields.len());
                let mut off = 0u64;
                for f in fields {
                    let (size, align) = self.size_align(f, 0)?;
                    off = off.next_multiple_of(align);
                    offsets.push(off);
                    off += size;
                }
                Ok(offsets)
            }
            TypeDesc::Array(elem, count) => {
                let stride = self.size_of(elem)?;
                Ok((0..*count).map(|i| i * stride).collect())
            }
            other => Err(LayoutError::Unsized(format!("{other:?} has no fields"))),
        }
    }

    /// Type of field `index` of a record or array.
    pub fn field_type<'a>(&'a self, t: &'a TypeDesc, index: u32) -> Option<&'a TypeDesc>
    where
        'p: 'a,
    {
        match self.resolve(t).ok()? {
            TypeDesc::Record(fields) => fields.get(index as usize),
            TypeDesc::Array(elem, count) if u64::from(index) < *count => Some(elem),
            _ => None,
        }
    }

    fn size_align(&self, t: &TypeDesc, depth: usize) -> Result<(u64, u64), LayoutError> {
        if depth > self.program.types.len() + 64 {
            return Err(LayoutError::Recursive(format!("{t:?}")));
        }
        match t {
            TypeDesc::Void => Err(LayoutError::Unsized("void".into())),
            TypeDesc::Scalar(w) => {
                let s = u64::from(*w / 8);
                Ok((s, s.min(MAX_ALIGN)))
            }
            TypeDesc::Ptr(_) | TypeDesc::FuncRef { .. } => Ok((POINTER_SIZE, POINTER_SIZE)),
            TypeDesc::Array(elem, count) => {
                let (s, a) = self.size_align(elem, depth + 1)?;
                Ok((s * count, a))
            }
            TypeDesc::Record(fields) => {
                let mut off = 0u64;
                let mut max_align = 1u64;
                for f in fields {
                    let (s, a) = self.size_align(f, depth + 1)?;
                    off = off.next_multiple_of(a);
                    off += s;
                    max_align = max_align.max(a);
                }
                Ok((off.next_multiple_of(max_align), max_align))
            }
            TypeDesc::Named(n) => {
                let def = self
                    .program
                    .type_def(n)
                    .ok_or_else(|| LayoutError::UnknownType(n.clone()))?;
                self.size_align(def, depth + 1)
            }
        }
    }
}
