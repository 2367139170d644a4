//! Constraint-driven test synthesis for database-backed web applications.
//!
//! Servlets are modeled as *path transducers*: single-path transition rules
//! over a relational database and a set of session variables, written as
//! Boolean combinations of guard terms and single-assignment updates. Given
//! an initial-state constraint and a target constraint, the synthesizer works
//! backwards through symbolic preimages and produces an HTTP call sequence —
//! concrete URLs and parameter values found by a native finite-scope model
//! finder — that drives the application into the target database state. A
//! variant of the search discovers workflow attacks: call sequences whose
//! final request is not linked from the page that precedes it.
//!
//! The crate is organized around the pipeline:
//!
//! - [`model`]: sorts, values, schemas, database instances, states, scopes.
//! - [`expr`]: relational algebra, terms, constraint formulas, transducers.
//! - [`eval`]: concrete evaluation over states.
//! - [`transform`]: priming, substitution, frame closure, writes-sets.
//! - [`parser`] / [`printer`]: the `.spec` text format and its round-trippable
//!   pretty-printer.
//! - [`solver`]: the finite-scope model finder (solve, enumerate, value
//!   domains, `get_modified`).
//! - [`image`]: symbolic preimages plus enumerative image oracles.
//! - [`synth`]: the backtracking call-sequence generator and the workflow
//!   attack detector.
//! - [`exec`]: a concrete forward interpreter used to replay and validate
//!   synthesized sequences.
//! - [`report`] / [`cli`]: machine-readable reports and the command-line
//!   front end.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod eval;
pub mod expr;
pub mod model;
pub mod parser;
pub mod printer;
pub mod transform;

pub use eval::{eval_formula, eval_relalg, eval_term, Bindings, Environment, StatePair};
pub use expr::{Formula, RelAlgExpr, SymbolUse, Term, Transducer};
pub use model::{
    check_instance, enumerate_states, DatabaseInstance, Schema, Scope, Sort, SortId, SortKind,
    State, Table, Tuple, Value, Violation,
};
pub use parser::{parse_formula, parse_spec, ParseError, SpecFile};
pub use printer::{print_expr, print_formula, print_spec, print_term};
pub use transform::{decompose, frame_close, prime, substitute, writes_set, Substitution};
