//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! Every call takes and returns JSON strings so the page needs no glue
//! beyond what wasm-bindgen generates.

use serde::Serialize;
use stlplan::dnf::to_dnf;
use stlplan::dynamics::DynamicsKind;
use stlplan::heuristic::{select_branch, BranchScore};
use stlplan::maze::{compute_reachability, generate_maze, MazeMap};
use stlplan::pipeline::{self, make_instance, plot, Models, PlannerConfig, PlanningInstance, Selector, SuiteSpec, TaskTemplate};
use stlplan::stl::{normalize_pnf, parse};
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct MapView {
    map: String,
    svg: String,
    formula: Option<String>,
}

#[derive(Serialize)]
struct ScoreRow {
    branch: String,
    score: BranchScore,
}

#[derive(Serialize)]
struct ScoreView {
    pnf: String,
    branches: Vec<ScoreRow>,
    selected: Option<usize>,
    error: Option<String>,
}

#[derive(Serialize)]
struct PlanView {
    branch: String,
    selected: usize,
    n_branches: usize,
    success: bool,
    /// `None` when the run never produced a trajectory.
    rho: Option<f64>,
    nominal_source: String,
    failure: Option<String>,
    planning_ms: f64,
    svg: String,
}

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn load_map(json: &str) -> Result<MazeMap, JsError> {
    MazeMap::from_json(json).map_err(err)
}

fn to_json(v: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(err)
}

/// Random maze with `regions` labelled cells.
#[wasm_bindgen]
pub fn random_maze(size: usize, seed: u64, regions: usize) -> Result<String, JsError> {
    let map = generate_maze(size, seed, 0.2, regions).map_err(err)?;
    let svg = plot::render_svg(&map, Some(map.cell_center(map.start())), &[], &format!("{size}x{size} seed {seed}"));
    to_json(&MapView { map: map.to_json(), svg, formula: None })
}

/// Benchmark instance for `template` (`reach`, `until`, `disjunctive`, ...).
#[wasm_bindgen]
pub fn task_instance(size: usize, template: &str, seed: u64) -> Result<String, JsError> {
    let template: TaskTemplate = template.parse().map_err(err)?;
    let inst = make_instance(&SuiteSpec::default(), size, template, seed, 0).map_err(err)?;
    let svg = plot::render_svg(&inst.map, Some(inst.x0), &[], &inst.formula);
    to_json(&MapView { map: inst.map.to_json(), svg, formula: Some(inst.formula) })
}

/// DNF branches of `formula` with their heuristic scores on `map`.
/// Parse errors come back in the `error` field rather than as exceptions.
#[wasm_bindgen]
pub fn score_branches(map_json: &str, formula: &str) -> Result<String, JsError> {
    let map = load_map(map_json)?;
    let view = match parse(formula, &map) {
        Err(e) => ScoreView { pnf: String::new(), branches: Vec::new(), selected: None, error: Some(e.to_string()) },
        Ok(p) => {
            let pnf = normalize_pnf(&p.formula);
            match to_dnf(&pnf) {
                Err(e) => ScoreView { pnf: pnf.to_string(), branches: Vec::new(), selected: None, error: Some(e.to_string()) },
                Ok(branches) => {
                    let field = compute_reachability(&map, map.start());
                    let cfg = PlannerConfig::default();
                    let (selected, scores, error) = match select_branch(&branches, &map, &field, &cfg.heuristic) {
                        Ok((k, s)) => (Some(k), s, None),
                        Err(e) => {
                            let s = branches.iter().map(|b| stlplan::heuristic::score_branch(b, &map, &field, &cfg.heuristic)).collect();
                            (None, s, Some(e.to_string()))
                        }
                    };
                    let rows = branches
                        .iter()
                        .zip(scores)
                        .map(|(b, score)| ScoreRow { branch: b.formula.to_string(), score })
                        .collect();
                    ScoreView { pnf: pnf.to_string(), branches: rows, selected, error }
                }
            }
        }
    };
    to_json(&view)
}

/// Plans `formula` from the map's start cell with the reference trajectory
/// planner and simulates the closed loop under `dynamics` (`di` or `uni`).
#[wasm_bindgen]
pub fn plan_formula(map_json: &str, formula: &str, dynamics: &str, selector: &str, seed: u64) -> Result<String, JsError> {
    let map = load_map(map_json)?;
    let kind: DynamicsKind = dynamics.parse().map_err(err)?;
    let selector: Selector = selector.parse().map_err(err)?;
    let mut cfg = PlannerConfig { selector, ..PlannerConfig::default() };
    cfg.dynamics.model.kind = kind;
    let inst = PlanningInstance { name: "demo".into(), x0: map.cell_center(map.start()), map, formula: formula.to_string(), seed };
    let r = pipeline::plan(&inst, Models::default(), &cfg).map_err(err)?;
    let view = PlanView {
        branch: r.branch.clone(),
        selected: r.selected,
        n_branches: r.n_branches,
        success: r.success,
        rho: r.rho.is_finite().then_some(r.rho),
        nominal_source: r.nominal_source.map(|s| format!("{s:?}")).unwrap_or_default(),
        failure: r.failure.clone(),
        planning_ms: 1e3 * r.timing.total_planning_s,
        svg: plot::render_run(&inst, &r),
    };
    to_json(&view)
}
