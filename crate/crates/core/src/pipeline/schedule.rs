use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dnf::Branch;
use crate::maze::{compute_reachability, Cell, MazeMap};
use crate::stl::TemporalOp;
use crate::time_predictor::StepEstimator;

/// A region the trajectory must be inside at `time`, and stay inside until
/// `hold_until`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub subtask: usize,
    pub op: TemporalOp,
    pub region: String,
    pub cell: Cell,
    pub point: [f64; 2],
    /// Absolute window `[a, b]`, capped at the horizon.
    pub window: (usize, usize),
    pub predicted: u32,
    pub time: usize,
    pub hold_until: usize,
    /// The prediction overshot the window and was pulled back.
    pub clipped: bool,
    /// Regions the approach path must stay inside (positive left operands
    /// of `U`).
    pub corridor: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub keypoints: Vec<Keypoint>,
    /// Regions to keep out of for the whole horizon.
    pub avoid: Vec<String>,
    /// Scheduled time per sub-task (window start for sub-tasks without a
    /// target).
    pub subtask_times: Vec<usize>,
    pub horizon: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum ScheduleError {
    #[error("sub-task {subtask}: earliest time {earliest} is past its deadline {deadline}")]
    Infeasible { subtask: usize, earliest: usize, deadline: usize },
    #[error("sub-task {subtask}: region `{region}` is unreachable")]
    Unreachable { subtask: usize, region: String },
    #[error("sub-task {subtask}: window starts at {start}, past the horizon {horizon}")]
    PastHorizon { subtask: usize, start: usize, horizon: usize },
    #[error("sub-task {subtask}: region `{region}` is not on the map")]
    UnknownRegion { subtask: usize, region: String },
}

/// Grounds a branch's sub-tasks in time.
///
/// Top-level sub-tasks are visited by deadline, nested ones right after
/// their parent with windows relative to the parent's time. Each target gets
/// `t_i = clip(t_{i−1} + est(p_{i−1}, p_i), a_i, b_i)`; `G` targets must be
/// reached by `a_i` and are held until `b_i`.
pub fn schedule_subtasks(
    b: &Branch,
    est: &dyn StepEstimator,
    map: &MazeMap,
    x0: [f64; 2],
    horizon: usize,
) -> Result<Schedule, ScheduleError> {
    let n = b.subtasks.len();
    let mut children = vec![Vec::new(); n];
    let mut roots = Vec::new();
    for (i, s) in b.subtasks.iter().enumerate() {
        match s.parent {
            Some(p) => children[p].push(i),
            None => roots.push(i),
        }
    }
    let mut st = Walk {
        b,
        est,
        map,
        horizon,
        children,
        point: x0,
        time: 0,
        out: Schedule {
            keypoints: Vec::new(),
            avoid: Vec::new(),
            subtask_times: vec![0; n],
            horizon,
            warnings: Vec::new(),
        },
    };
    st.visit_all(roots, 0)?;
    Ok(st.out)
}

struct Walk<'a> {
    b: &'a Branch,
    est: &'a dyn StepEstimator,
    map: &'a MazeMap,
    horizon: usize,
    children: Vec<Vec<usize>>,
    point: [f64; 2],
    time: usize,
    out: Schedule,
}

impl Walk<'_> {
    fn visit_all(&mut self, mut ids: Vec<usize>, base: usize) -> Result<(), ScheduleError> {
        ids.sort_by_key(|&i| {
            let iv = self.b.subtasks[i].interval;
            (iv.hi, iv.lo, i)
        });
        ids.into_iter().try_for_each(|i| self.visit(i, base))
    }

    fn visit(&mut self, i: usize, base: usize) -> Result<(), ScheduleError> {
        let s = &self.b.subtasks[i];
        let lo = base + s.interval.lo;
        if lo > self.horizon {
            return Err(ScheduleError::PastHorizon { subtask: i, start: lo, horizon: self.horizon });
        }
        let hi = (base + s.interval.hi).min(self.horizon);
        for a in &s.avoid {
            if !self.out.avoid.contains(a) {
                self.out.avoid.push(a.clone());
            }
        }
        let mut child_base = lo;
        self.out.subtask_times[i] = lo;
        if let Some(region) = s.targets.first() {
            let cell = self.nearest_cell(i, region)?;
            let point = self.map.cell_center(cell);
            let predicted = self
                .est
                .estimate(self.map, self.point, point)
                .ok_or_else(|| ScheduleError::Unreachable { subtask: i, region: region.clone() })?;
            let deadline = if s.op == TemporalOp::Always { lo } else { hi };
            if self.time > deadline {
                return Err(ScheduleError::Infeasible { subtask: i, earliest: self.time, deadline });
            }
            let earliest = self.time + predicted as usize;
            let clipped = earliest > deadline;
            if clipped {
                self.out
                    .warnings
                    .push(format!("sub-task {i}: predicted arrival {earliest} clipped to deadline {deadline}"));
            }
            let time = earliest.clamp(lo, deadline);
            let hold_until = if s.op == TemporalOp::Always { hi } else { time };
            let corridor = if s.op == TemporalOp::Until { s.hold.clone() } else { Vec::new() };
            self.out.keypoints.push(Keypoint {
                subtask: i,
                op: s.op,
                region: region.clone(),
                cell,
                point,
                window: (lo, hi),
                predicted,
                time,
                hold_until,
                clipped,
                corridor,
            });
            self.out.subtask_times[i] = time;
            self.point = point;
            self.time = hold_until;
            if s.op != TemporalOp::Always {
                child_base = time;
            }
        }
        let kids = self.children[i].clone();
        self.visit_all(kids, child_base)
    }

    /// Region cell closest (by BFS) to the current point; the first cell if
    /// none is reachable.
    fn nearest_cell(&self, i: usize, region: &str) -> Result<Cell, ScheduleError> {
        let r = self
            .map
            .region(region)
            .ok_or_else(|| ScheduleError::UnknownRegion { subtask: i, region: region.to_string() })?;
        let from = self.map.world_to_grid(self.point).cell();
        let field = from.map(|c| compute_reachability(self.map, c));
        let best = r
            .cells
            .iter()
            .filter_map(|&c| field.as_ref().and_then(|f| f.distance(c)).map(|d| (d, c)))
            .min();
        Ok(best.map_or(r.cells[0], |(_, c)| c))
    }
}
