//! Decompose-then-synthesize planning: normal form, DNF branches, heuristic
//! selection, temporal grounding, nominal synthesis and closed-loop checking.

mod bench;
mod dataset;
mod oracle;
pub mod plot;
mod schedule;
mod suite;

use web_time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bench::{
    aggregate, env_label, load_record, run_benchmark, run_suite, save_run, verify_record, write_metrics_csv, BenchConfig,
    InstanceRecord, MetricsRow, RunDir, Verification,
};
pub use dataset::{
    audit_dataset, generator_examples, load_dataset, reach_example, save_dataset, synthesize_offline_dataset,
    DatasetConfig, DatasetMeta, OfflineDataset, TrajRecord,
};
pub use oracle::{
    astar, oracle_plan, path_length, reach_trajectory, segment_clear, smooth_path, trace_collision_free,
    trace_from_positions, OracleConfig, OracleError,
};
pub use schedule::{schedule_subtasks, Keypoint, Schedule, ScheduleError};
pub use suite::{build_suite, make_instance, SuiteInstance, SuiteSpec, TaskSuite, TaskTemplate};

use crate::dnf::{to_dnf_capped, Branch, DnfError, DEFAULT_BRANCH_CAP};
use crate::dynamics::{evaluate_rollout, track, DynamicsConfig, DynamicsError, DynamicsKind, ExecutedRollout};
use crate::generator::{encode_context, Generator};
use crate::heuristic::{random_select, select_branch, BranchScore, HeuristicConfig, SelectError};
use crate::maze::{compute_reachability, MazeMap};
use crate::stl::{eval_robustness, normalize_pnf, parse, Formula, ParseError, State, Trace};
use crate::time_predictor::{BfsStepOracle, StepEstimator, TimePredictor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    #[default]
    Heuristic,
    Random,
}

impl std::str::FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "heuristic" => Ok(Self::Heuristic),
            "random" => Ok(Self::Random),
            _ => Err(format!("unknown selector `{s}` (expected heuristic or random)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Planning horizon T in steps.
    pub horizon: usize,
    pub selector: Selector,
    pub heuristic: HeuristicConfig,
    pub branch_cap: usize,
    pub oracle: OracleConfig,
    pub dynamics: DynamicsConfig,
    /// Replace a generator rollout that misses its own branch or collides
    /// with the reference planner's trajectory.
    pub generator_fallback: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            selector: Selector::Heuristic,
            heuristic: HeuristicConfig::default(),
            branch_cap: DEFAULT_BRANCH_CAP,
            oracle: OracleConfig::default(),
            dynamics: DynamicsConfig::new(DynamicsKind::Di),
            generator_fallback: true,
        }
    }
}

impl PlannerConfig {
    /// Planning steps needed to cross one cell at nominal speed.
    pub fn steps_per_cell(&self, cell_size: f64) -> f64 {
        cell_size / (self.oracle.nominal_speed * self.oracle.step_s)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let o = &self.oracle;
        let ok = self.horizon > 0
            && self.branch_cap > 0
            && o.nominal_speed > 0.0
            && o.max_speed >= o.nominal_speed
            && o.step_s > 0.0
            && o.clearance >= 0.0;
        if !ok {
            return Err(PlanError::Config("horizon, branch cap, speeds and step must be positive".into()));
        }
        self.heuristic.validate()?;
        self.dynamics.model.validate()?;
        Ok(())
    }
}

/// A map, an initial position and a specification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningInstance {
    pub name: String,
    pub map: MazeMap,
    pub x0: [f64; 2],
    pub formula: String,
    pub seed: u64,
}

impl PlanningInstance {
    pub fn parse_formula(&self) -> Result<Formula, PlanError> {
        Ok(parse(&self.formula, &self.map)?.formula)
    }

    pub fn validate(&self) -> Result<Formula, PlanError> {
        if !self.map.is_collision_free(self.x0) {
            return Err(PlanError::BadStart(self.x0));
        }
        self.parse_formula()
    }
}

/// Trained components; a missing one is replaced by its exact oracle.
#[derive(Clone, Copy, Debug, Default)]
pub struct Models<'a> {
    pub time: Option<&'a TimePredictor>,
    pub generator: Option<&'a Generator>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NominalSource {
    Generator,
    Oracle,
    /// The generator rollout failed verification and was replaced.
    OracleFallback,
}

/// Wall time per stage in seconds. `total_planning_s` covers everything up
/// to the nominal trajectory; execution is reported separately.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub decompose_s: f64,
    pub heuristic_selection_s: f64,
    pub schedule_s: f64,
    pub synthesis_s: f64,
    pub total_planning_s: f64,
    pub execution_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub instance: String,
    pub selector: Selector,
    pub dynamics: DynamicsKind,
    pub n_branches: usize,
    pub selected: usize,
    /// Empty for the random selector.
    pub scores: Vec<BranchScore>,
    pub branch: String,
    pub schedule: Option<Schedule>,
    pub nominal: Option<Trace>,
    pub nominal_source: Option<NominalSource>,
    pub executed: Option<ExecutedRollout>,
    pub success: bool,
    #[serde(with = "crate::float_serde")]
    pub rho: f64,
    pub collision: bool,
    pub failure: Option<String>,
    pub timing: Timing,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("initial position ({}, {}) is not collision-free", .0[0], .0[1])]
    BadStart([f64; 2]),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Dnf(#[from] DnfError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid planner config: {0}")]
    Config(String),
}

/// Runs the full pipeline on one instance.
///
/// Configuration problems and "no feasible branch" are errors; a schedule or
/// synthesis failure yields a `RunResult` with `success = false`.
pub fn plan(inst: &PlanningInstance, models: Models<'_>, cfg: &PlannerConfig) -> Result<RunResult, PlanError> {
    cfg.validate()?;
    let phi = inst.validate()?;
    let map = &inst.map;

    let t_start = Instant::now();
    let pnf = normalize_pnf(&phi);
    let branches = to_dnf_capped(&pnf, cfg.branch_cap)?;
    let decompose_s = t_start.elapsed().as_secs_f64();

    let t_sel = Instant::now();
    let (selected, scores) = match cfg.selector {
        Selector::Heuristic => {
            let field = compute_reachability(map, map.world_to_grid(inst.x0).cell().expect("x0 checked free"));
            select_branch(&branches, map, &field, &cfg.heuristic)?
        }
        Selector::Random => (random_select(branches.len(), inst.seed)?, Vec::new()),
    };
    let heuristic_selection_s = t_sel.elapsed().as_secs_f64();
    let branch = &branches[selected];

    let mut result = RunResult {
        instance: inst.name.clone(),
        selector: cfg.selector,
        dynamics: cfg.dynamics.model.kind,
        n_branches: branches.len(),
        selected,
        scores,
        branch: branch.formula.to_string(),
        schedule: None,
        nominal: None,
        nominal_source: None,
        executed: None,
        success: false,
        rho: f64::NEG_INFINITY,
        collision: false,
        failure: None,
        timing: Timing { decompose_s, heuristic_selection_s, ..Timing::default() },
    };

    let t_sch = Instant::now();
    let bfs = BfsStepOracle { steps_per_cell: cfg.steps_per_cell(map.cell_size()) };
    let est: &dyn StepEstimator = match models.time {
        Some(tp) => tp,
        None => &bfs,
    };
    let schedule = schedule_subtasks(branch, est, map, inst.x0, cfg.horizon);
    result.timing.schedule_s = t_sch.elapsed().as_secs_f64();
    let schedule = match schedule {
        Ok(s) => s,
        Err(e) => {
            result.failure = Some(format!("schedule: {e}"));
            result.timing.total_planning_s = t_start.elapsed().as_secs_f64();
            return Ok(result);
        }
    };

    let t_syn = Instant::now();
    let nominal = synthesize(inst, branch, &schedule, models.generator, cfg);
    result.timing.synthesis_s = t_syn.elapsed().as_secs_f64();
    result.timing.total_planning_s = t_start.elapsed().as_secs_f64();
    result.schedule = Some(schedule);
    let (nominal, source) = match nominal {
        Ok(n) => n,
        Err(e) => {
            result.failure = Some(e);
            return Ok(result);
        }
    };

    let t_exec = Instant::now();
    let executed = track(&nominal, &cfg.dynamics.model, &cfg.dynamics.gains, Some(map))?;
    let eval = evaluate_rollout(&executed, &phi, map);
    result.timing.execution_s = t_exec.elapsed().as_secs_f64();
    result.success = eval.success;
    result.rho = eval.rho;
    result.collision = eval.collision;
    if !eval.success {
        result.failure = Some(if eval.collision { "execution collided".into() } else { "specification violated".into() });
    }
    result.nominal = Some(nominal);
    result.nominal_source = Some(source);
    result.executed = Some(executed);
    Ok(result)
}

fn synthesize(
    inst: &PlanningInstance,
    branch: &Branch,
    schedule: &Schedule,
    generator: Option<&Generator>,
    cfg: &PlannerConfig,
) -> Result<(Trace, NominalSource), String> {
    let map = &inst.map;
    let oracle = || oracle_plan(map, schedule, inst.x0, &cfg.oracle).map_err(|e| format!("oracle: {e}"));
    let Some(g) = generator else {
        return oracle().map(|t| (t, NominalSource::Oracle));
    };
    let ctx = encode_context(map, branch, &schedule.subtask_times, cfg.oracle.step_s);
    let x0 = State { pos: inst.x0, aux: [0.0, 0.0] };
    let rolled = g.rollout(x0, &ctx, cfg.horizon).map_err(|e| format!("generator: {e}"));
    let verified = rolled.as_ref().is_ok_and(|tr| {
        eval_robustness(&branch.formula, tr, 0, map) > 0.0 && trace_collision_free(map, tr)
    });
    match rolled {
        Ok(tr) if verified || !cfg.generator_fallback => Ok((tr, NominalSource::Generator)),
        Err(e) if !cfg.generator_fallback => Err(e),
        _ => oracle().map(|t| (t, NominalSource::OracleFallback)),
    }
}
