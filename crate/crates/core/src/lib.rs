//! Fuzz-driver synthesis over a small SSA IR.
//!
//! The pipeline: [`locator`] ranks functions by how much memory they touch,
//! [`synth`] builds a driver for the chosen entry with lazily materialized
//! pointer arguments, [`runtime`] interprets the instrumented program against
//! a shadow heap, and [`fuzz`] runs a coverage-guided campaign over it.

pub mod fuzz;
pub mod hash;
pub mod ir;
pub mod locator;
pub mod runtime;
pub mod synth;
