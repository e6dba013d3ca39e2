//! Shared fixtures: an independent STL evaluator and random formulas/traces.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use stlplan::stl::{Formula, Interval, Rect, Trace};

pub const REGIONS: [&str; 3] = ["A", "B", "C"];

/// Three overlapping rectangles inside `[0, 10]²`.
pub fn rect_env() -> BTreeMap<String, Rect> {
    BTreeMap::from([
        ("A".to_string(), Rect::new([0.0, 0.0], [5.0, 5.0])),
        ("B".to_string(), Rect::new([3.0, 2.0], [8.0, 9.0])),
        ("C".to_string(), Rect::new([6.0, 0.0], [10.0, 4.0])),
    ])
}

fn inside(env: &BTreeMap<String, Rect>, region: &str, p: [f64; 2]) -> bool {
    env.get(region).is_some_and(|r| p[0] >= r.min[0] && p[0] <= r.max[0] && p[1] >= r.min[1] && p[1] <= r.max[1])
}

/// Direct recursive reading of the finite-trace semantics. Windows are cut
/// at the last sample; an empty window makes `F` and `U` false and `G` true.
pub fn holds(f: &Formula, tr: &Trace, t: usize, env: &BTreeMap<String, Rect>) -> bool {
    let last = tr.horizon();
    let window = |iv: &Interval| -> Vec<usize> {
        let lo = t + iv.lo;
        let hi = (t + iv.hi).min(last);
        (lo..=hi).collect()
    };
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Pred { region, negated } => inside(env, region, tr.position(t)) != *negated,
        Formula::Not(c) => !holds(c, tr, t, env),
        Formula::And(cs) => cs.iter().all(|c| holds(c, tr, t, env)),
        Formula::Or(cs) => cs.iter().any(|c| holds(c, tr, t, env)),
        Formula::Eventually { child, interval } => window(interval).into_iter().any(|s| holds(child, tr, s, env)),
        Formula::Always { child, interval } => window(interval).into_iter().all(|s| holds(child, tr, s, env)),
        Formula::Until { lhs, rhs, interval } => {
            let w = window(interval);
            w.iter().enumerate().any(|(k, &s)| holds(rhs, tr, s, env) && w[..=k].iter().all(|&u| holds(lhs, tr, u, env)))
        }
    }
}

fn interval(rng: &mut impl Rng) -> Interval {
    let lo = rng.gen_range(0..=4);
    Interval::new(lo, lo + rng.gen_range(0..=6))
}

fn atom(rng: &mut impl Rng) -> Formula {
    let r = *REGIONS.choose(rng).unwrap();
    match rng.gen_range(0..10) {
        0 => Formula::True,
        1..=3 => Formula::not_pred(r),
        _ => Formula::pred(r),
    }
}

/// Random formula with at most `depth` nested temporal operators.
pub fn random_formula(rng: &mut impl Rng, depth: usize) -> Formula {
    let choice = if depth == 0 { rng.gen_range(0..4) } else { rng.gen_range(0..10) };
    match choice {
        0 | 1 => atom(rng),
        2 => Formula::not(random_formula(rng, depth)),
        3 => {
            let n = rng.gen_range(2..=3);
            let cs: Vec<Formula> = (0..n).map(|_| if depth == 0 { atom(rng) } else { random_formula(rng, depth) }).collect();
            if rng.gen_bool(0.5) { Formula::and(cs) } else { Formula::or(cs) }
        }
        4 | 5 => Formula::eventually(interval(rng), random_formula(rng, depth - 1)),
        6 | 7 => Formula::always(interval(rng), random_formula(rng, depth - 1)),
        8 => Formula::until(random_formula(rng, depth - 1), interval(rng), random_formula(rng, depth - 1)),
        _ => {
            let cs = vec![random_formula(rng, depth - 1), random_formula(rng, depth - 1)];
            if rng.gen_bool(0.5) { Formula::and(cs) } else { Formula::or(cs) }
        }
    }
}

/// Random walk in `[−1, 11]²` with `len` samples, so points cross region
/// boundaries often.
pub fn random_trace(rng: &mut impl Rng, len: usize) -> Trace {
    let mut p: [f64; 2] = [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)];
    let mut pts = Vec::with_capacity(len);
    for _ in 0..len {
        pts.push(p);
        p = [(p[0] + rng.gen_range(-3.0..3.0)).clamp(-1.0, 11.0), (p[1] + rng.gen_range(-3.0..3.0)).clamp(-1.0, 11.0)];
    }
    Trace::from_positions(&pts, 1.0).unwrap()
}
