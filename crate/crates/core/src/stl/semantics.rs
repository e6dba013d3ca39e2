//! Boolean and quantitative (space-robustness) semantics over discrete traces.
//!
//! Temporal windows are clipped to the trace: `[t+a, min(t+b, T)]`. An empty
//! window makes `F` and `U` false (robustness `-inf`) and `G` vacuously true
//! (`+inf`). For `φ1 U[a,b] φ2` the left operand must hold on `[t+a, t']`,
//! both ends included, in both semantics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::ast::{Formula, Interval};
use super::trace::Trace;

/// Axis-aligned rectangle in world coordinates (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        predicate_margin(self, p) >= 0.0
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }
}

/// Signed margin of `p` with respect to `rect`: the smallest of the four
/// face distances, positive inside and negative outside.
pub fn predicate_margin(rect: &Rect, p: [f64; 2]) -> f64 {
    (p[0] - rect.min[0])
        .min(rect.max[0] - p[0])
        .min(p[1] - rect.min[1])
        .min(rect.max[1] - p[1])
}

/// Source of predicate margins `μ_R(p)` for named regions.
///
/// Unknown names yield `-inf`, so they are never satisfied.
pub trait PredicateEnv {
    fn margin(&self, region: &str, p: [f64; 2]) -> f64;
}

impl PredicateEnv for HashMap<String, Rect> {
    fn margin(&self, region: &str, p: [f64; 2]) -> f64 {
        self.get(region).map_or(f64::NEG_INFINITY, |r| predicate_margin(r, p))
    }
}

impl PredicateEnv for BTreeMap<String, Rect> {
    fn margin(&self, region: &str, p: [f64; 2]) -> f64 {
        self.get(region).map_or(f64::NEG_INFINITY, |r| predicate_margin(r, p))
    }
}

impl<E: PredicateEnv + ?Sized> PredicateEnv for &E {
    fn margin(&self, region: &str, p: [f64; 2]) -> f64 {
        (**self).margin(region, p)
    }
}

/// Robustness `ρ(f, tr, t)`.
pub fn eval_robustness(f: &Formula, tr: &Trace, t: usize, env: &impl PredicateEnv) -> f64 {
    assert!(t <= tr.horizon(), "step {t} past horizon {}", tr.horizon());
    robustness_signal(f, tr, env)[t]
}

/// Satisfaction `(tr, t) ⊨ f`.
pub fn eval_bool(f: &Formula, tr: &Trace, t: usize, env: &impl PredicateEnv) -> bool {
    assert!(t <= tr.horizon(), "step {t} past horizon {}", tr.horizon());
    bool_signal(f, tr, env)[t]
}

/// Robustness at every step of the trace.
pub fn robustness_signal(f: &Formula, tr: &Trace, env: &impl PredicateEnv) -> Vec<f64> {
    let n = tr.len();
    let horizon = tr.horizon();
    match f {
        Formula::True => vec![f64::INFINITY; n],
        Formula::False => vec![f64::NEG_INFINITY; n],
        Formula::Pred { region, negated } => tr
            .states()
            .iter()
            .map(|s| {
                let m = env.margin(region, s.pos);
                if *negated { -m } else { m }
            })
            .collect(),
        Formula::Not(c) => robustness_signal(c, tr, env).into_iter().map(|r| -r).collect(),
        Formula::And(cs) => fold_signals(cs, tr, env, f64::INFINITY, f64::min),
        Formula::Or(cs) => fold_signals(cs, tr, env, f64::NEG_INFINITY, f64::max),
        Formula::Eventually { child, interval } => {
            let c = robustness_signal(child, tr, env);
            window(&c, *interval, horizon, f64::NEG_INFINITY, f64::max)
        }
        Formula::Always { child, interval } => {
            let c = robustness_signal(child, tr, env);
            window(&c, *interval, horizon, f64::INFINITY, f64::min)
        }
        Formula::Until { lhs, rhs, interval } => {
            let l = robustness_signal(lhs, tr, env);
            let r = robustness_signal(rhs, tr, env);
            (0..n)
                .map(|t| match interval.clip(t, horizon) {
                    None => f64::NEG_INFINITY,
                    Some((s, e)) => {
                        let mut best = f64::NEG_INFINITY;
                        let mut hold = f64::INFINITY;
                        for tp in s..=e {
                            hold = hold.min(l[tp]);
                            best = best.max(r[tp].min(hold));
                        }
                        best
                    }
                })
                .collect()
        }
    }
}

/// Satisfaction at every step of the trace.
pub fn bool_signal(f: &Formula, tr: &Trace, env: &impl PredicateEnv) -> Vec<bool> {
    let n = tr.len();
    let horizon = tr.horizon();
    match f {
        Formula::True => vec![true; n],
        Formula::False => vec![false; n],
        Formula::Pred { region, negated } => tr
            .states()
            .iter()
            .map(|s| (env.margin(region, s.pos) >= 0.0) != *negated)
            .collect(),
        Formula::Not(c) => bool_signal(c, tr, env).into_iter().map(|b| !b).collect(),
        Formula::And(cs) => {
            let mut acc = vec![true; n];
            for c in cs {
                for (a, b) in acc.iter_mut().zip(bool_signal(c, tr, env)) {
                    *a &= b;
                }
            }
            acc
        }
        Formula::Or(cs) => {
            let mut acc = vec![false; n];
            for c in cs {
                for (a, b) in acc.iter_mut().zip(bool_signal(c, tr, env)) {
                    *a |= b;
                }
            }
            acc
        }
        Formula::Eventually { child, interval } => {
            let c = bool_signal(child, tr, env);
            (0..n)
                .map(|t| interval.clip(t, horizon).is_some_and(|(s, e)| c[s..=e].iter().any(|&b| b)))
                .collect()
        }
        Formula::Always { child, interval } => {
            let c = bool_signal(child, tr, env);
            (0..n)
                .map(|t| interval.clip(t, horizon).is_none_or(|(s, e)| c[s..=e].iter().all(|&b| b)))
                .collect()
        }
        Formula::Until { lhs, rhs, interval } => {
            let l = bool_signal(lhs, tr, env);
            let r = bool_signal(rhs, tr, env);
            (0..n)
                .map(|t| {
                    interval.clip(t, horizon).is_some_and(|(s, e)| {
                        (s..=e).any(|tp| r[tp] && l[s..=tp].iter().all(|&b| b))
                    })
                })
                .collect()
        }
    }
}

fn fold_signals(
    cs: &[Formula],
    tr: &Trace,
    env: &impl PredicateEnv,
    init: f64,
    op: fn(f64, f64) -> f64,
) -> Vec<f64> {
    let mut acc = vec![init; tr.len()];
    for c in cs {
        for (a, b) in acc.iter_mut().zip(robustness_signal(c, tr, env)) {
            *a = op(*a, b);
        }
    }
    acc
}

fn window(sig: &[f64], interval: Interval, horizon: usize, empty: f64, op: fn(f64, f64) -> f64) -> Vec<f64> {
    (0..sig.len())
        .map(|t| match interval.clip(t, horizon) {
            None => empty,
            Some((s, e)) => sig[s..=e].iter().copied().fold(empty, op),
        })
        .collect()
}

/// Pushes negations down to predicates.
///
/// `¬(φ1 U[a,b] φ2)` has no dual operator in this grammar, so it is unrolled
/// over the integer window into `⋀_{k=a..b} (G[k,k] ¬φ2 ∨ F[a,k] ¬φ1)`, which is
/// equivalent under the clipping convention in both semantics.
pub fn normalize_pnf(f: &Formula) -> Formula {
    nnf(f, false)
}

fn nnf(f: &Formula, neg: bool) -> Formula {
    match f {
        Formula::True => if neg { Formula::False } else { Formula::True },
        Formula::False => if neg { Formula::True } else { Formula::False },
        Formula::Pred { region, negated } => Formula::Pred { region: region.clone(), negated: *negated != neg },
        Formula::Not(c) => nnf(c, !neg),
        Formula::And(cs) => {
            let kids = cs.iter().map(|c| nnf(c, neg));
            if neg { Formula::or(kids) } else { Formula::and(kids) }
        }
        Formula::Or(cs) => {
            let kids = cs.iter().map(|c| nnf(c, neg));
            if neg { Formula::and(kids) } else { Formula::or(kids) }
        }
        Formula::Eventually { child, interval } => {
            let c = nnf(child, neg);
            if neg { Formula::always(*interval, c) } else { Formula::eventually(*interval, c) }
        }
        Formula::Always { child, interval } => {
            let c = nnf(child, neg);
            if neg { Formula::eventually(*interval, c) } else { Formula::always(*interval, c) }
        }
        Formula::Until { lhs, rhs, interval } => {
            if !neg {
                return Formula::until(nnf(lhs, false), *interval, nnf(rhs, false));
            }
            let not_l = nnf(lhs, true);
            let not_r = nnf(rhs, true);
            Formula::and((interval.lo..=interval.hi).map(|k| {
                Formula::or([
                    Formula::always(Interval::new(k, k), not_r.clone()),
                    Formula::eventually(Interval::new(interval.lo, k), not_l.clone()),
                ])
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::parse::parse_unchecked;

    const CELL: f64 = 12.0;

    fn env() -> HashMap<String, Rect> {
        let mut m = HashMap::new();
        m.insert("A".into(), Rect::new([0.0, 0.0], [CELL, CELL]));
        m.insert("B".into(), Rect::new([CELL, 0.0], [2.0 * CELL, CELL]));
        m
    }

    fn trace(xs: &[f64]) -> Trace {
        Trace::from_positions(&xs.iter().map(|&x| [x, 6.0]).collect::<Vec<_>>(), 1.0).unwrap()
    }

    #[test]
    fn margin_examples() {
        let cell = Rect::new([0.0, 0.0], [CELL, CELL]);
        assert_eq!(predicate_margin(&cell, [6.0, 6.0]), 6.0);
        assert_eq!(predicate_margin(&cell, [12.0, 6.0]), 0.0);
        assert_eq!(predicate_margin(&cell, [24.0, 6.0]), -12.0);
    }

    #[test]
    fn true_holds_everywhere() {
        let tr = trace(&[30.0, 40.0]);
        assert!(eval_bool(&Formula::True, &tr, 0, &env()));
        assert!(eval_bool(&Formula::True, &tr, 1, &env()));
    }

    #[test]
    fn eventually_and_always_on_entering_trace() {
        // Outside A at steps 0 and 1, inside at step 2.
        let tr = trace(&[30.0, 20.0, 6.0]);
        let f = parse_unchecked("F[0,2] A").unwrap();
        let g = parse_unchecked("G[0,2] A").unwrap();
        assert!(eval_bool(&f, &tr, 0, &env()));
        assert!(!eval_bool(&g, &tr, 0, &env()));
        assert_eq!(eval_robustness(&f, &tr, 0, &env()), 6.0);
        assert_eq!(eval_robustness(&g, &tr, 0, &env()), -18.0);
    }

    #[test]
    fn base_case_predicate_robustness() {
        let tr = Trace::from_positions(&[[3.0, 6.0]], 1.0).unwrap();
        assert_eq!(eval_robustness(&Formula::pred("A"), &tr, 0, &env()), 3.0);
        assert_eq!(eval_robustness(&Formula::not_pred("A"), &tr, 0, &env()), -3.0);
    }

    #[test]
    fn empty_windows_use_sentinels() {
        let tr = trace(&[6.0, 6.0]);
        let e = &env();
        assert_eq!(eval_robustness(&parse_unchecked("F[3,4] A").unwrap(), &tr, 0, e), f64::NEG_INFINITY);
        assert_eq!(eval_robustness(&parse_unchecked("G[3,4] B").unwrap(), &tr, 0, e), f64::INFINITY);
        assert_eq!(eval_robustness(&parse_unchecked("A U[3,4] A").unwrap(), &tr, 0, e), f64::NEG_INFINITY);
        assert!(eval_bool(&parse_unchecked("G[3,4] B").unwrap(), &tr, 0, e));
        assert!(!eval_bool(&parse_unchecked("F[3,4] A").unwrap(), &tr, 0, e));
    }

    #[test]
    fn until_left_operand_starts_at_window_start() {
        // B holds at step 0 only; A from step 1 on. `B U[1,2] A` does not need B before step 1.
        let tr = trace(&[18.0, 6.0, 6.0]);
        let f = parse_unchecked("B U[1,2] A").unwrap();
        assert!(!eval_bool(&f, &tr, 0, &env()));
        let f = parse_unchecked("A U[1,2] A").unwrap();
        assert!(eval_bool(&f, &tr, 0, &env()));
        assert!(eval_robustness(&f, &tr, 0, &env()) > 0.0);
    }

    #[test]
    fn pnf_examples() {
        let f = Formula::not(Formula::and([Formula::pred("A"), Formula::pred("B")]));
        assert_eq!(normalize_pnf(&f), Formula::or([Formula::not_pred("A"), Formula::not_pred("B")]));
        let f = Formula::not(Formula::eventually(Interval::new(1, 3), Formula::pred("A")));
        assert_eq!(normalize_pnf(&f), Formula::always(Interval::new(1, 3), Formula::not_pred("A")));
        let f = Formula::not(Formula::not(Formula::pred("A")));
        assert_eq!(normalize_pnf(&f), Formula::pred("A"));
        assert_eq!(normalize_pnf(&Formula::not(Formula::True)), Formula::False);
    }

    #[test]
    fn negated_until_unrolls_to_pnf() {
        let f = Formula::not(parse_unchecked("A U[1,2] B").unwrap());
        let g = normalize_pnf(&f);
        assert!(g.is_pnf());
        for xs in [[6.0, 18.0, 18.0, 6.0], [18.0, 6.0, 18.0, 18.0], [6.0, 6.0, 6.0, 6.0], [30.0, 18.0, 6.0, 18.0]] {
            let tr = trace(&xs);
            for t in 0..4 {
                assert_eq!(eval_bool(&f, &tr, t, &env()), eval_bool(&g, &tr, t, &env()));
                assert_eq!(eval_robustness(&f, &tr, t, &env()), eval_robustness(&g, &tr, t, &env()));
            }
        }
    }
}
