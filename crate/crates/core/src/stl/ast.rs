use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Closed interval of discrete time steps `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub lo: usize,
    pub hi: usize,
}

impl Interval {
    /// Panics if `hi < lo`; use the parser for untrusted input.
    pub fn new(lo: usize, hi: usize) -> Self {
        assert!(lo <= hi, "interval [{lo},{hi}] is not well-ordered");
        Self { lo, hi }
    }

    pub fn width(&self) -> usize {
        self.hi - self.lo
    }

    /// Absolute window `[t+lo, min(t+hi, horizon)]`, or `None` when it is empty.
    pub fn clip(&self, t: usize, horizon: usize) -> Option<(usize, usize)> {
        let start = t + self.lo;
        if start > horizon {
            return None;
        }
        Some((start, (t + self.hi).min(horizon)))
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.lo, self.hi)
    }
}

/// Temporal operator kind, shared by the decomposer and the heuristic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemporalOp {
    Eventually,
    Always,
    Until,
}

impl fmt::Display for TemporalOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemporalOp::Eventually => "F",
            TemporalOp::Always => "G",
            TemporalOp::Until => "U",
        })
    }
}

/// STL abstract syntax over named region predicates.
///
/// `And`/`Or` always hold at least two children when built through
/// [`Formula::and`] and [`Formula::or`], which also flatten nested
/// conjunctions/disjunctions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formula {
    True,
    False,
    Pred { region: String, negated: bool },
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Until { lhs: Box<Formula>, rhs: Box<Formula>, interval: Interval },
    Eventually { child: Box<Formula>, interval: Interval },
    Always { child: Box<Formula>, interval: Interval },
}

impl Formula {
    pub fn pred(region: impl Into<String>) -> Self {
        Formula::Pred { region: region.into(), negated: false }
    }

    pub fn not_pred(region: impl Into<String>) -> Self {
        Formula::Pred { region: region.into(), negated: true }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    /// Flattening conjunction; a single child is returned unchanged.
    pub fn and(children: impl IntoIterator<Item = Formula>) -> Self {
        let mut flat = Vec::new();
        for c in children {
            match c {
                Formula::And(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => Formula::True,
            1 => flat.pop().unwrap(),
            _ => Formula::And(flat),
        }
    }

    /// Flattening disjunction; a single child is returned unchanged.
    pub fn or(children: impl IntoIterator<Item = Formula>) -> Self {
        let mut flat = Vec::new();
        for c in children {
            match c {
                Formula::Or(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => Formula::False,
            1 => flat.pop().unwrap(),
            _ => Formula::Or(flat),
        }
    }

    pub fn eventually(interval: Interval, child: Formula) -> Self {
        Formula::Eventually { child: Box::new(child), interval }
    }

    pub fn always(interval: Interval, child: Formula) -> Self {
        Formula::Always { child: Box::new(child), interval }
    }

    pub fn until(lhs: Formula, interval: Interval, rhs: Formula) -> Self {
        Formula::Until { lhs: Box::new(lhs), rhs: Box::new(rhs), interval }
    }

    /// True when negation only appears on predicates.
    pub fn is_pnf(&self) -> bool {
        match self {
            Formula::True | Formula::False | Formula::Pred { .. } => true,
            Formula::Not(_) => false,
            Formula::And(cs) | Formula::Or(cs) => cs.iter().all(Formula::is_pnf),
            Formula::Until { lhs, rhs, .. } => lhs.is_pnf() && rhs.is_pnf(),
            Formula::Eventually { child, .. } | Formula::Always { child, .. } => child.is_pnf(),
        }
    }

    pub fn contains_or(&self) -> bool {
        match self {
            Formula::Or(_) => true,
            Formula::True | Formula::False | Formula::Pred { .. } => false,
            Formula::Not(c) => c.contains_or(),
            Formula::And(cs) => cs.iter().any(Formula::contains_or),
            Formula::Until { lhs, rhs, .. } => lhs.contains_or() || rhs.contains_or(),
            Formula::Eventually { child, .. } | Formula::Always { child, .. } => child.contains_or(),
        }
    }

    /// Maximum number of nested temporal operators on any root-to-leaf path.
    pub fn temporal_depth(&self) -> usize {
        match self {
            Formula::True | Formula::False | Formula::Pred { .. } => 0,
            Formula::Not(c) => c.temporal_depth(),
            Formula::And(cs) | Formula::Or(cs) => {
                cs.iter().map(Formula::temporal_depth).max().unwrap_or(0)
            }
            Formula::Until { lhs, rhs, .. } => 1 + lhs.temporal_depth().max(rhs.temporal_depth()),
            Formula::Eventually { child, .. } | Formula::Always { child, .. } => {
                1 + child.temporal_depth()
            }
        }
    }

    /// Every region name referenced anywhere in the formula.
    pub fn regions(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_preds(&mut |name, _| {
            out.insert(name.to_string());
        });
        out
    }

    /// Calls `f(region, negated)` for every predicate leaf, left to right.
    pub fn visit_preds(&self, f: &mut impl FnMut(&str, bool)) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Pred { region, negated } => f(region, *negated),
            Formula::Not(c) => c.visit_preds(f),
            Formula::And(cs) | Formula::Or(cs) => cs.iter().for_each(|c| c.visit_preds(f)),
            Formula::Until { lhs, rhs, .. } => {
                lhs.visit_preds(f);
                rhs.visit_preds(f);
            }
            Formula::Eventually { child, .. } | Formula::Always { child, .. } => child.visit_preds(f),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Or(_) => 1,
            Formula::And(_) => 2,
            Formula::Until { .. } => 3,
            Formula::Not(_)
            | Formula::Eventually { .. }
            | Formula::Always { .. }
            | Formula::Pred { negated: true, .. } => 4,
            Formula::True | Formula::False | Formula::Pred { negated: false, .. } => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            f.write_str("(")?;
            self.fmt_prec(f, 0)?;
            return f.write_str(")");
        }
        match self {
            Formula::True => f.write_str("true"),
            Formula::False => f.write_str("false"),
            Formula::Pred { region, negated: false } => f.write_str(region),
            Formula::Pred { region, negated: true } => write!(f, "not {region}"),
            Formula::Not(c) => {
                f.write_str("not ")?;
                c.fmt_prec(f, 4)
            }
            Formula::And(cs) | Formula::Or(cs) => {
                let (sep, child_min) =
                    if matches!(self, Formula::And(_)) { (" and ", 3) } else { (" or ", 2) };
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    // Nested same-kind nodes get parentheses so structure survives a reparse.
                    let m = if std::mem::discriminant(c) == std::mem::discriminant(self) {
                        child_min + 1
                    } else {
                        child_min
                    };
                    c.fmt_prec(f, m)?;
                }
                Ok(())
            }
            Formula::Until { lhs, rhs, interval } => {
                lhs.fmt_prec(f, 4)?;
                write!(f, " U{interval} ")?;
                rhs.fmt_prec(f, 3)
            }
            Formula::Eventually { child, interval } => {
                write!(f, "F{interval} ")?;
                child.fmt_prec(f, 4)
            }
            Formula::Always { child, interval } => {
                write!(f, "G{interval} ")?;
                child.fmt_prec(f, 4)
            }
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}
