//! Entry-function location: per-function vulnerability priorities and top-N
//! selection.
//!
//! A function's priority counts its pointer dereferences (`load`/`store`) and
//! its memory-function calls, plus the priority of every in-module function
//! it calls, once per call site. Recursive call graphs are handled on the SCC
//! condensation: all members of a strongly connected component share one
//! priority, the sum of their direct weights plus the priorities of callees
//! outside the component.

use serde::{Deserialize, Serialize};

use crate::ir::{Callee, Inst, Program};

/// Prefix of synthesized driver functions; never offered as entries.
pub const DRIVER_PREFIX: &str = "__driver_";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatementWeight {
    Deref(u64),
    MemFunc(u64),
    ProjectCall(String),
    Zero,
}

/// Classify one instruction for priority counting.
pub fn statement_weight(inst: &Inst, p: &Program) -> StatementWeight {
    match inst {
        Inst::Load { .. } | Inst::Store { .. } => StatementWeight::Deref(1),
        Inst::Memcpy { .. } | Inst::Memset { .. } | Inst::Alloc { .. } | Inst::Free { .. } => {
            StatementWeight::MemFunc(1)
        }
        Inst::Call {
            callee: Callee::Direct(name),
            ..
        } => match p.function(name) {
            Some(g) if g.external && g.memory => StatementWeight::MemFunc(1),
            Some(g) if !g.external => StatementWeight::ProjectCall(name.clone()),
            _ => StatementWeight::Zero,
        },
        _ => StatementWeight::Zero,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectWeights {
    pub deref: u64,
    pub memfunc: u64,
}

impl DirectWeights {
    pub fn total(&self) -> u64 {
        self.deref.saturating_add(self.memfunc)
    }
}

/// Function name to priority, in declaration order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PriorityMap {
    entries: Vec<PriorityEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorityEntry {
    pub function: String,
    pub priority: u64,
    pub direct: DirectWeights,
    pub external: bool,
}

impl PriorityMap {
    pub fn get(&self, name: &str) -> Option<u64> {
        self.entries.iter().find(|e| e.function == name).map(|e| e.priority)
    }

    pub fn entry(&self, name: &str) -> Option<&PriorityEntry> {
        self.entries.iter().find(|e| e.function == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PriorityEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Direct call graph: one edge per call instruction.
#[derive(Debug, Clone)]
pub struct CallGraph {
    pub nodes: Vec<String>,
    /// `edges[caller]` lists callee indices, one entry per call site.
    pub edges: Vec<Vec<usize>>,
}

impl CallGraph {
    pub fn build(p: &Program) -> Self {
        let nodes: Vec<String> = p.functions.iter().map(|f| f.name.clone()).collect();
        let index = |n: &str| nodes.iter().position(|m| m == n);
        let edges = p
            .functions
            .iter()
            .map(|f| {
                f.insts()
                    .filter_map(|i| match i {
                        Inst::Call {
                            callee: Callee::Direct(g),
                            ..
                        } => index(g),
                        _ => None,
                    })
                    .collect()
            })
            .collect();
        CallGraph { nodes, edges }
    }

    pub fn call_sites(&self, caller: usize, callee: usize) -> usize {
        self.edges[caller].iter().filter(|&&c| c == callee).count()
    }

    /// Strongly connected components in reverse topological order (every
    /// component comes after all components it calls into).
    pub fn sccs(&self) -> Vec<Vec<usize>> {
        tarjan(&self.edges)
    }
}

/// Iterative Tarjan.
fn tarjan(edges: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = edges.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut next = 0usize;

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        // (node, next edge position)
        let mut work = vec![(root, 0usize)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut ei)) = work.last_mut() {
            if let Some(&w) = edges[v].get(*ei) {
                *ei += 1;
                if index[w] == usize::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            work.pop();
            if let Some(&(parent, _)) = work.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().unwrap();
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                out.push(comp);
            }
        }
    }
    out
}

/// Compute the priority of every function (definitions and externals).
pub fn function_priorities(p: &Program) -> PriorityMap {
    let graph = CallGraph::build(p);
    let n = p.functions.len();

    let direct: Vec<DirectWeights> = p
        .functions
        .iter()
        .map(|f| {
            let mut w = DirectWeights::default();
            for i in f.insts() {
                match statement_weight(i, p) {
                    StatementWeight::Deref(k) => w.deref += k,
                    StatementWeight::MemFunc(k) => w.memfunc += k,
                    _ => {}
                }
            }
            w
        })
        .collect();

    let mut priority = vec![0u64; n];
    let mut component = vec![usize::MAX; n];
    for (ci, comp) in graph.sccs().into_iter().enumerate() {
        for &m in &comp {
            component[m] = ci;
        }
        let mut total = 0u64;
        for &m in &comp {
            let f = &p.functions[m];
            if f.external {
                // Callers already count memory externals as MemFunc; the
                // external's own entry reports 1 for memory, else 0.
                total = total.saturating_add(u64::from(f.memory));
                continue;
            }
            total = total.saturating_add(direct[m].total());
            for &callee in &graph.edges[m] {
                if component[callee] != ci && !p.functions[callee].external {
                    total = total.saturating_add(priority[callee]);
                }
            }
        }
        for &m in &comp {
            priority[m] = total;
        }
    }

    PriorityMap {
        entries: p
            .functions
            .iter()
            .enumerate()
            .map(|(i, f)| PriorityEntry {
                function: f.name.clone(),
                priority: priority[i],
                direct: direct[i],
                external: f.external,
            })
            .collect(),
    }
}

/// One row of the entry ranking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub function: String,
    pub priority: u64,
    pub direct_weights: DirectWeights,
}

/// The `max` highest-priority defined functions, descending, ties broken by
/// ascending name. Externals and synthesized drivers are never candidates.
pub fn rank_entries(p: &Program, max: usize) -> Vec<RankedEntry> {
    let map = function_priorities(p);
    let mut rows: Vec<RankedEntry> = map
        .iter()
        .filter(|e| !e.external && !e.function.starts_with(DRIVER_PREFIX))
        .map(|e| RankedEntry {
            function: e.function.clone(),
            priority: e.priority,
            direct_weights: e.direct,
        })
        .collect();
    rows.sort_by(|a, b| b.priority.cmp(&a.priority).then_with(|| a.function.cmp(&b.function)));
    rows.truncate(max);
    rows
}

pub fn locate_entries(p: &Program, max: usize) -> Vec<(String, u64)> {
    rank_entries(p, max)
        .into_iter()
        .map(|r| (r.function, r.priority))
        .collect()
}
