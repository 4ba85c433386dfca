//! Verilog-A export of hybrid models, with a parser and a reference
//! interpreter for the emitted subset.

mod ast;
mod export;
mod interp;
mod parse;
mod verify;

pub use ast::*;
pub use export::*;
pub use interp::{compile, simulate_compiled, simulate_subset, Compiled, MAX_ITERATIONS, TOLERANCE};
pub use parse::{parse_subset, validate};
pub use verify::*;
