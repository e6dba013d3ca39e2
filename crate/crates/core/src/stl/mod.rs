//! Signal Temporal Logic: syntax, text grammar, normal form and semantics.

mod ast;
mod parse;
mod semantics;
mod trace;

pub use ast::{Formula, Interval, TemporalOp};
pub use parse::{parse, parse_unchecked, AnyRegion, ParseError, Parsed, RegionTable};
pub use semantics::{
    bool_signal, eval_bool, eval_robustness, normalize_pnf, predicate_margin, robustness_signal, PredicateEnv,
    Rect,
};
pub use trace::{State, Trace, TraceError};
