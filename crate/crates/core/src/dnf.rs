//! Disjunction elimination by strengthening rewrites and sub-task extraction.
//!
//! `F(φ1∨φ2) ⇒ Fφ1 ∨ Fφ2`, `G(φ1∨φ2) ⇒ Gφ1 ∨ Gφ2` and
//! `(φ1∨φ2) U (ψ1∨ψ2) ⇒ ⋁ φi U ψj`, together with distribution of `∧` over `∨`.
//! Every produced branch implies the input formula; the converse does not hold
//! in general.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stl::{bool_signal, Formula, Interval, PredicateEnv, TemporalOp, Trace};

pub const DEFAULT_BRANCH_CAP: usize = 256;
pub const MAX_TEMPORAL_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DnfError {
    #[error("formula is not in positive normal form")]
    NotPnf,
    #[error("DNF expansion exceeds the branch cap of {cap}")]
    TooManyBranches { cap: usize },
    #[error("temporal nesting depth {depth} exceeds the supported maximum of {MAX_TEMPORAL_DEPTH}")]
    TooDeep { depth: usize },
    #[error("{op} sub-task over {interval} references no region")]
    NoRegion { op: TemporalOp, interval: Interval },
}

/// One temporal sub-formula of a branch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTask {
    pub op: TemporalOp,
    /// Interval relative to the parent's satisfaction time (or to `t = 0`).
    pub interval: Interval,
    /// Regions to reach (`F`, right side of `U`) or stay in (`G`).
    pub targets: Vec<String>,
    /// Regions to stay out of.
    pub avoid: Vec<String>,
    /// Positive left operands of `U`, which must hold until the target is reached.
    pub hold: Vec<String>,
    /// Index of the enclosing temporal sub-task, if nested.
    pub parent: Option<usize>,
}

impl SubTask {
    pub fn region_refs(&self) -> impl Iterator<Item = &String> {
        self.targets.iter().chain(&self.avoid).chain(&self.hold)
    }
}

/// A disjunction-free branch `φ_k` and its parsed sub-tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub formula: Formula,
    pub subtasks: Vec<SubTask>,
    /// Every region the branch references.
    pub regions: BTreeSet<String>,
    /// Regions referenced at least once without negation.
    pub positive_regions: BTreeSet<String>,
}

impl Branch {
    pub fn new(formula: Formula) -> Result<Self, DnfError> {
        let subtasks = extract_subtasks(&formula)?;
        let regions = formula.regions();
        let mut positive_regions = BTreeSet::new();
        formula.visit_preds(&mut |name, negated| {
            if !negated {
                positive_regions.insert(name.to_string());
            }
        });
        Ok(Self { formula, subtasks, regions, positive_regions })
    }

    pub fn count(&self, op: TemporalOp) -> usize {
        self.subtasks.iter().filter(|s| s.op == op).count()
    }
}

/// Disjunction-free formulas whose disjunction strengthens `f`, with the
/// default branch cap.
pub fn to_dnf(f: &Formula) -> Result<Vec<Branch>, DnfError> {
    to_dnf_capped(f, DEFAULT_BRANCH_CAP)
}

pub fn to_dnf_capped(f: &Formula, cap: usize) -> Result<Vec<Branch>, DnfError> {
    if !f.is_pnf() {
        return Err(DnfError::NotPnf);
    }
    let disjuncts = expand(f, cap)?;
    let mut seen = HashSet::new();
    disjuncts
        .into_iter()
        .filter(|d| seen.insert(d.clone()))
        .map(Branch::new)
        .collect()
}

fn check_cap(n: usize, cap: usize) -> Result<(), DnfError> {
    if n > cap { Err(DnfError::TooManyBranches { cap }) } else { Ok(()) }
}

fn expand(f: &Formula, cap: usize) -> Result<Vec<Formula>, DnfError> {
    Ok(match f {
        Formula::True | Formula::False | Formula::Pred { .. } => vec![f.clone()],
        Formula::Not(_) => return Err(DnfError::NotPnf),
        Formula::Or(cs) => {
            let mut out = Vec::new();
            for c in cs {
                out.extend(expand(c, cap)?);
                check_cap(out.len(), cap)?;
            }
            out
        }
        Formula::And(cs) => {
            let mut acc: Vec<Vec<Formula>> = vec![Vec::new()];
            for c in cs {
                let options = expand(c, cap)?;
                check_cap(acc.len().saturating_mul(options.len()), cap)?;
                acc = acc
                    .iter()
                    .flat_map(|prefix| {
                        options.iter().map(move |o| {
                            let mut v = prefix.clone();
                            v.push(o.clone());
                            v
                        })
                    })
                    .collect();
            }
            acc.into_iter().map(Formula::and).collect()
        }
        Formula::Eventually { child, interval } => {
            expand(child, cap)?.into_iter().map(|c| Formula::eventually(*interval, c)).collect()
        }
        Formula::Always { child, interval } => {
            expand(child, cap)?.into_iter().map(|c| Formula::always(*interval, c)).collect()
        }
        Formula::Until { lhs, rhs, interval } => {
            let ls = expand(lhs, cap)?;
            let rs = expand(rhs, cap)?;
            check_cap(ls.len().saturating_mul(rs.len()), cap)?;
            ls.iter()
                .flat_map(|l| rs.iter().map(move |r| Formula::until(l.clone(), *interval, r.clone())))
                .collect()
        }
    })
}

/// Sub-tasks of a disjunction-free formula, one per temporal node in
/// left-to-right pre-order.
pub fn extract_subtasks(f: &Formula) -> Result<Vec<SubTask>, DnfError> {
    let depth = f.temporal_depth();
    if depth > MAX_TEMPORAL_DEPTH {
        return Err(DnfError::TooDeep { depth });
    }
    let mut out = Vec::new();
    walk(f, None, &mut out)?;
    Ok(out)
}

fn walk(f: &Formula, parent: Option<usize>, out: &mut Vec<SubTask>) -> Result<(), DnfError> {
    match f {
        Formula::True | Formula::False | Formula::Pred { .. } => Ok(()),
        Formula::Not(c) => walk(c, parent, out),
        Formula::And(cs) | Formula::Or(cs) => cs.iter().try_for_each(|c| walk(c, parent, out)),
        Formula::Eventually { child, interval } | Formula::Always { child, interval } => {
            let op = if matches!(f, Formula::Eventually { .. }) { TemporalOp::Eventually } else { TemporalOp::Always };
            let mut task = SubTask {
                op,
                interval: *interval,
                targets: Vec::new(),
                avoid: Vec::new(),
                hold: Vec::new(),
                parent,
            };
            local_preds(child, &mut task.targets, &mut task.avoid);
            push_task(task, out, &[child])
        }
        Formula::Until { lhs, rhs, interval } => {
            let mut task = SubTask {
                op: TemporalOp::Until,
                interval: *interval,
                targets: Vec::new(),
                avoid: Vec::new(),
                hold: Vec::new(),
                parent,
            };
            local_preds(lhs, &mut task.hold, &mut task.avoid);
            local_preds(rhs, &mut task.targets, &mut task.avoid);
            push_task(task, out, &[lhs, rhs])
        }
    }
}

fn push_task(task: SubTask, out: &mut Vec<SubTask>, children: &[&Formula]) -> Result<(), DnfError> {
    if task.region_refs().next().is_none() && children.iter().all(|c| c.temporal_depth() == 0) {
        return Err(DnfError::NoRegion { op: task.op, interval: task.interval });
    }
    let idx = out.len();
    out.push(task);
    children.iter().try_for_each(|c| walk(c, Some(idx), out))
}

/// Predicates reachable from `f` without crossing a temporal operator.
fn local_preds(f: &Formula, positive: &mut Vec<String>, negative: &mut Vec<String>) {
    match f {
        Formula::Pred { region, negated } => {
            let list = if *negated { negative } else { positive };
            if !list.contains(region) {
                list.push(region.clone());
            }
        }
        Formula::And(cs) | Formula::Or(cs) => cs.iter().for_each(|c| local_preds(c, positive, negative)),
        Formula::Not(c) => local_preds(c, negative, positive),
        _ => {}
    }
}

/// Outcome of the sampled implication check `∃k: x ⊨ φ_k ⟹ x ⊨ φ`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StrengtheningReport {
    pub traces_checked: usize,
    /// Traces satisfying some branch.
    pub branch_satisfied: usize,
    /// Traces satisfying the original formula but no branch.
    pub strict: usize,
    /// Indices of traces satisfying a branch but not the original formula.
    pub counterexamples: Vec<usize>,
}

pub fn check_strengthening(
    f: &Formula,
    branches: &[Branch],
    traces: &[Trace],
    env: &impl PredicateEnv,
) -> StrengtheningReport {
    let mut report = StrengtheningReport { traces_checked: traces.len(), ..Default::default() };
    for (i, tr) in traces.iter().enumerate() {
        let original = bool_signal(f, tr, env)[0];
        let any_branch = branches.iter().any(|b| bool_signal(&b.formula, tr, env)[0]);
        if any_branch {
            report.branch_satisfied += 1;
            if !original {
                report.counterexamples.push(i);
            }
        } else if original {
            report.strict += 1;
        }
    }
    report
}
