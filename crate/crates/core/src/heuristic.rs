//! Branch scoring `S = α·C_op + β·C_map − γ·C_slack` and argmin selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dnf::Branch;
use crate::maze::{region_distance, MazeMap, ReachabilityField};
use crate::stl::TemporalOp;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    pub w_f: f64,
    pub w_g: f64,
    pub w_u: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self { w_f: 10.0, w_g: 20.0, w_u: 30.0, alpha: 0.2, beta: 0.2, gamma: 0.1 }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<(), SelectError> {
        let ordered = self.w_f < self.w_g && self.w_g < self.w_u;
        let positive = self.alpha > 0.0 && self.beta > 0.0 && self.gamma > 0.0;
        if ordered && positive { Ok(()) } else { Err(SelectError::BadConfig(*self)) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchScore {
    pub c_op: f64,
    #[serde(with = "crate::float_serde")]
    pub c_map: f64,
    pub c_slack: f64,
    #[serde(with = "crate::float_serde")]
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("no branches to select from")]
    Empty,
    #[error("no feasible branch: every branch references an unreachable region")]
    NoFeasibleBranch,
    #[error("invalid heuristic configuration {0:?}")]
    BadConfig(HeuristicConfig),
}

pub fn op_complexity(b: &Branch, cfg: &HeuristicConfig) -> f64 {
    cfg.w_f * b.count(TemporalOp::Eventually) as f64
        + cfg.w_g * b.count(TemporalOp::Always) as f64
        + cfg.w_u * b.count(TemporalOp::Until) as f64
}

/// Sum of BFS distances (cells) from the field's source to each positively
/// referenced region. Regions missing from the map count as unreachable.
pub fn map_cost(b: &Branch, map: &MazeMap, field: &ReachabilityField) -> f64 {
    b.positive_regions
        .iter()
        .map(|name| map.region(name).map_or(f64::INFINITY, |r| region_distance(field, r)))
        .sum()
}

/// Interval widths plus positive gaps `a_{i+1} − b_i` between consecutive
/// sub-tasks in AST order.
pub fn slack_gaps(b: &Branch) -> Vec<f64> {
    let mut out: Vec<f64> = b.subtasks.iter().map(|s| s.interval.width() as f64).collect();
    for pair in b.subtasks.windows(2) {
        let gap = pair[1].interval.lo as i64 - pair[0].interval.hi as i64;
        if gap > 0 {
            out.push(gap as f64);
        }
    }
    out
}

pub fn slack_reward(b: &Branch) -> f64 {
    slack_gaps(b).into_iter().map(f64::sqrt).sum()
}

pub fn score_branch(b: &Branch, map: &MazeMap, field: &ReachabilityField, cfg: &HeuristicConfig) -> BranchScore {
    let c_op = op_complexity(b, cfg);
    let c_map = map_cost(b, map, field);
    let c_slack = slack_reward(b);
    BranchScore { c_op, c_map, c_slack, total: cfg.alpha * c_op + cfg.beta * c_map - cfg.gamma * c_slack }
}

/// `argmin_k S(φ_k)`, ties to the lowest index, plus the full score table.
pub fn select_branch(
    branches: &[Branch],
    map: &MazeMap,
    field: &ReachabilityField,
    cfg: &HeuristicConfig,
) -> Result<(usize, Vec<BranchScore>), SelectError> {
    if branches.is_empty() {
        return Err(SelectError::Empty);
    }
    let scores: Vec<BranchScore> = branches.iter().map(|b| score_branch(b, map, field, cfg)).collect();
    let mut best: Option<usize> = None;
    for (k, s) in scores.iter().enumerate() {
        if s.total.is_finite() && best.is_none_or(|j| s.total < scores[j].total) {
            best = Some(k);
        }
    }
    best.map(|k| (k, scores)).ok_or(SelectError::NoFeasibleBranch)
}

/// Uniform seeded choice, the unguided baseline.
pub fn random_select(n_branches: usize, seed: u64) -> Result<usize, SelectError> {
    if n_branches == 0 {
        return Err(SelectError::Empty);
    }
    Ok(ChaCha8Rng::seed_from_u64(seed).gen_range(0..n_branches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnf::to_dnf;
    use crate::maze::{compute_reachability, Cell};
    use crate::stl::parse_unchecked;

    fn branch(s: &str) -> Branch {
        Branch::new(parse_unchecked(s).unwrap()).unwrap()
    }

    fn map5() -> MazeMap {
        // Start at (0,0); A is 3 cells away, B is 5 cells away.
        let mut m = MazeMap::open(5, 5, 12.0, Cell::new(0, 0)).unwrap();
        m.insert_region("A", vec![Cell::new(1, 2)]).unwrap();
        m.insert_region("B", vec![Cell::new(2, 3)]).unwrap();
        m.insert_region("Start", vec![Cell::new(0, 0)]).unwrap();
        m
    }

    #[test]
    fn op_complexity_examples() {
        let cfg = HeuristicConfig::default();
        assert_eq!(op_complexity(&branch("F[0,5] A and F[0,5] B and G[0,9] not C"), &cfg), 40.0);
        assert_eq!(op_complexity(&branch("A"), &cfg), 0.0);
        assert_eq!(op_complexity(&branch("A U[0,3] B"), &cfg), 30.0);
    }

    #[test]
    fn map_cost_examples() {
        let m = map5();
        let f = compute_reachability(&m, m.start());
        assert_eq!(map_cost(&branch("F[0,9] A and F[0,9] B"), &m, &f), 8.0);
        assert_eq!(map_cost(&branch("F[0,9] Start"), &m, &f), 0.0);
        assert_eq!(map_cost(&branch("F[0,9] A and G[0,9] not Nowhere"), &m, &f), 3.0);
        assert_eq!(map_cost(&branch("F[0,9] Nowhere"), &m, &f), f64::INFINITY);
    }

    #[test]
    fn slack_examples() {
        assert_eq!(slack_reward(&branch("F[0,9] A")), 3.0);
        assert_eq!(slack_reward(&branch("F[0,4] A and F[8,12] B")), 6.0);
        assert_eq!(slack_reward(&branch("F[5,5] A")), 0.0);
    }

    #[test]
    fn selection() {
        let m = map5();
        let f = compute_reachability(&m, m.start());
        let cfg = HeuristicConfig::default();
        let (k, scores) = select_branch(&[branch("F[0,9] A")], &m, &f, &cfg).unwrap();
        assert_eq!((k, scores.len()), (0, 1));

        let with_u = branch("F[0,9] A and A U[0,9] B");
        let without = branch("F[0,9] A and F[0,9] B");
        assert_eq!(select_branch(&[with_u.clone(), without.clone()], &m, &f, &cfg).unwrap().0, 1);

        let bs = to_dnf(&parse_unchecked("F[0,9](Nowhere or B)").unwrap()).unwrap();
        assert_eq!(select_branch(&bs, &m, &f, &cfg).unwrap().0, 1);

        let none = [branch("F[0,9] Nowhere")];
        assert_eq!(select_branch(&none, &m, &f, &cfg), Err(SelectError::NoFeasibleBranch));
        assert_eq!(select_branch(&[], &m, &f, &cfg), Err(SelectError::Empty));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = map5();
        let f = compute_reachability(&m, m.start());
        let b = branch("F[0,9] A");
        let (k, _) = select_branch(&[b.clone(), b], &m, &f, &HeuristicConfig::default()).unwrap();
        assert_eq!(k, 0);
    }

    #[test]
    fn random_select_is_seeded() {
        assert_eq!(random_select(5, 9).unwrap(), random_select(5, 9).unwrap());
        assert_eq!(random_select(1, 123).unwrap(), 0);
        assert_eq!(random_select(0, 1), Err(SelectError::Empty));
    }

    #[test]
    fn config_validation() {
        assert!(HeuristicConfig::default().validate().is_ok());
        let bad = HeuristicConfig { w_g: 5.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
