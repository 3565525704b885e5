//! Taint-guided performance modeling for PTL programs.
//!
//! The crate implements a pipeline that turns a small imperative program plus
//! a handful of measured runtimes into calibrated performance models:
//!
//! 1. [`parser`] / [`validate`] — parse `.ptl` source and check it against a
//!    [`libdb::LibraryDB`] of known library routines.
//! 2. [`taint`] — run the program under dynamic taint analysis: parameter
//!    labels flow through data and control, loop exits and branches act as
//!    sinks, and the trace records per-loop dependency sets and trip counts.
//! 3. [`volume`] — fold the trace into per-function loop-nest trees, compose
//!    symbolic compute volumes (sequencing sums, nesting multiplies), classify
//!    additive vs multiplicative parameter dependencies, and check the volume
//!    upper bound against observed execution counts.
//! 4. [`model`] — fit performance-model-normal-form hypotheses to measured
//!    data, constrained by the discovered dependency structure (or
//!    unconstrained, for comparison).
//! 5. [`experiment`] / [`validity`] — shrink experiment designs using the
//!    dependency structure, classify functions for instrumentation, and vet
//!    finished experiments for noise, contention, and behavior changes.
//! 6. [`synth`] — generate seeded synthetic programs with known ground truth
//!    and matching noisy measurements, for end-to-end exercise.

pub mod ast;
pub mod experiment;
pub mod label;
pub mod lexer;
pub mod libdb;
pub mod measure;
pub mod model;
pub mod parser;
pub mod pretty;
pub mod synth;
pub mod taint;
pub mod volume;
pub mod validate;
pub mod validity;

pub use ast::Program;
pub use label::LabelSet;
pub use libdb::LibraryDB;
pub use parser::parse;
pub use validate::{validate, ValidationReport};
