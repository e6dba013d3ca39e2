//! Seeded task suites over generated mazes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::astar;
use super::PlanningInstance;
use crate::maze::{compute_reachability, generate_maze, Cell, MapError, MazeMap, START_REGION};

const MAX_ATTEMPTS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTemplate {
    /// `F[0,10] Start` from inside `Start`.
    Trivial,
    /// `F[0,b] A`
    Reach,
    /// `F[0,b1] (A and F[0,b2] B)`
    ReachThenReach,
    /// `F[0,b] A and G[0,T] not H`, with `H` on a shortest path.
    AvoidReach,
    /// `B U[0,b] A`, with `B` a corridor from the start into `A`.
    Until,
    /// `F[0,b] (A or B or C)` with exactly one target walled off.
    Disjunctive,
}

impl TaskTemplate {
    pub const ALL: [TaskTemplate; 6] = [
        TaskTemplate::Trivial,
        TaskTemplate::Reach,
        TaskTemplate::ReachThenReach,
        TaskTemplate::AvoidReach,
        TaskTemplate::Until,
        TaskTemplate::Disjunctive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Trivial => "trivial",
            Self::Reach => "reach",
            Self::ReachThenReach => "reach_then_reach",
            Self::AvoidReach => "avoid_reach",
            Self::Until => "until",
            Self::Disjunctive => "disjunctive",
        }
    }
}

impl std::str::FromStr for TaskTemplate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| format!("unknown task template `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSpec {
    pub sizes: Vec<usize>,
    pub templates: Vec<TaskTemplate>,
    pub base_seed: u64,
    pub seeds: usize,
    pub instances_per_seed: usize,
    pub density: f64,
    pub horizon: usize,
    /// Planning steps per cell at nominal speed, used to size windows.
    pub steps_per_cell: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            sizes: vec![5, 7, 9],
            templates: TaskTemplate::ALL[1..].to_vec(),
            base_seed: 0,
            seeds: 20,
            instances_per_seed: 10,
            density: 0.2,
            horizon: 50,
            steps_per_cell: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteInstance {
    pub size: usize,
    pub template: TaskTemplate,
    pub instance: PlanningInstance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    pub spec: SuiteSpec,
    pub instances: Vec<SuiteInstance>,
}

/// Generates every (size, template, seed, index) instance. The same spec
/// always yields the same suite.
pub fn build_suite(spec: &SuiteSpec) -> Result<TaskSuite, MapError> {
    let mut instances = Vec::new();
    for &size in &spec.sizes {
        for &template in &spec.templates {
            for s in 0..spec.seeds as u64 {
                let seed = spec.base_seed + s;
                for k in 0..spec.instances_per_seed {
                    instances.push(SuiteInstance { size, template, instance: make_instance(spec, size, template, seed, k)? });
                }
            }
        }
    }
    Ok(TaskSuite { spec: spec.clone(), instances })
}

fn mix(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

pub fn make_instance(
    spec: &SuiteSpec,
    size: usize,
    template: TaskTemplate,
    seed: u64,
    k: usize,
) -> Result<PlanningInstance, MapError> {
    let inst_seed = mix(&[size as u64, template as u64, seed, k as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(inst_seed);
    for _ in 0..MAX_ATTEMPTS {
        let mut map = generate_maze(size, rng.gen(), spec.density, 0)?;
        if let Some(formula) = place(&mut map, spec, template, &mut rng)? {
            return Ok(PlanningInstance {
                name: format!("{}x{}-{}-s{}-{}", size, size, template.name(), seed, k),
                x0: map.cell_center(map.start()),
                map,
                formula,
                seed: inst_seed,
            });
        }
    }
    Err(MapError::RetriesExhausted(MAX_ATTEMPTS))
}

/// Window end for a path of `d` cells plus random slack, or `None` past the
/// horizon.
fn deadline(spec: &SuiteSpec, d: u32, rng: &mut ChaCha8Rng) -> Option<usize> {
    let b = (spec.steps_per_cell * d as f64).ceil() as usize + rng.gen_range(4..=10);
    (b <= spec.horizon).then_some(b)
}

fn max_cells(spec: &SuiteSpec) -> u32 {
    ((spec.horizon.saturating_sub(10)) as f64 / spec.steps_per_cell).floor() as u32
}

/// Free cells other than the start whose BFS distance from `from` is within
/// `[lo, hi]`.
fn cells_within(map: &MazeMap, from: Cell, lo: u32, hi: u32) -> Vec<(Cell, u32)> {
    let field = compute_reachability(map, from);
    map.free_cells()
        .into_iter()
        .filter(|&c| c != map.start())
        .filter_map(|c| field.distance(c).filter(|d| (lo..=hi).contains(d)).map(|d| (c, d)))
        .collect()
}

fn place(
    map: &mut MazeMap,
    spec: &SuiteSpec,
    template: TaskTemplate,
    rng: &mut ChaCha8Rng,
) -> Result<Option<String>, MapError> {
    let start = map.start();
    let dmax = max_cells(spec);
    let formula = match template {
        TaskTemplate::Trivial => Some(format!("F[0,10] {START_REGION}")),
        TaskTemplate::Reach => {
            let Some(&(a, d)) = cells_within(map, start, 2, dmax).choose(rng) else { return Ok(None) };
            let Some(b) = deadline(spec, d, rng) else { return Ok(None) };
            map.insert_region("A", vec![a])?;
            Some(format!("F[0,{b}] A"))
        }
        TaskTemplate::ReachThenReach => {
            let Some(&(a, d1)) = cells_within(map, start, 1, dmax.saturating_sub(1)).choose(rng) else {
                return Ok(None);
            };
            let second: Vec<(Cell, u32)> =
                cells_within(map, a, 1, dmax - d1).into_iter().filter(|&(c, _)| c != a).collect();
            let Some(&(bc, d2)) = second.choose(rng) else { return Ok(None) };
            let (Some(b1), Some(b2)) = (deadline(spec, d1, rng), deadline(spec, d2, rng)) else { return Ok(None) };
            if b1 + b2 > spec.horizon {
                return Ok(None);
            }
            map.insert_region("A", vec![a])?;
            map.insert_region("B", vec![bc])?;
            Some(format!("F[0,{b1}] (A and F[0,{b2}] B)"))
        }
        TaskTemplate::AvoidReach => {
            let Some(&(a, _)) = cells_within(map, start, 3, dmax).choose(rng) else { return Ok(None) };
            let path = astar(map, start, a, |_| true).expect("target drawn from reachable cells");
            let inner = &path[1..path.len() - 1];
            let Some(&h) = inner.choose(rng) else { return Ok(None) };
            let d = match astar(map, start, a, |c| c != h) {
                Some(p) => p.len() as u32 - 1,
                None => return Ok(None),
            };
            let Some(b) = deadline(spec, d, rng) else { return Ok(None) };
            map.insert_region("A", vec![a])?;
            map.insert_region("H", vec![h])?;
            Some(format!("F[0,{b}] A and G[0,{}] not H", spec.horizon))
        }
        TaskTemplate::Until => {
            let Some(&(a, d)) = cells_within(map, start, 2, dmax).choose(rng) else { return Ok(None) };
            let Some(b) = deadline(spec, d, rng) else { return Ok(None) };
            let path = astar(map, start, a, |_| true).expect("target drawn from reachable cells");
            map.insert_region("A", vec![a])?;
            map.insert_region("B", path)?;
            Some(format!("B U[0,{b}] A"))
        }
        TaskTemplate::Disjunctive => {
            let mut pool = cells_within(map, start, 2, dmax);
            if pool.len() < 3 {
                return Ok(None);
            }
            pool.shuffle(rng);
            let targets: Vec<(Cell, u32)> = pool[..3].to_vec();
            let blocked = rng.gen_range(0..3);
            let bc = targets[blocked].0;
            let walls: Vec<Cell> = map.free_neighbors(bc).collect();
            if walls.iter().any(|w| *w == start || targets.iter().any(|t| t.0 == *w)) {
                return Ok(None);
            }
            for &w in &walls {
                map.set_occupied(w, true);
            }
            let field = compute_reachability(map, start);
            let mut dmax_open = 0;
            for (i, &(c, _)) in targets.iter().enumerate() {
                if i == blocked {
                    continue;
                }
                match field.distance(c) {
                    Some(d) if d <= dmax => dmax_open = dmax_open.max(d),
                    _ => return Ok(None),
                }
            }
            let Some(b) = deadline(spec, dmax_open, rng) else { return Ok(None) };
            for (name, &(c, _)) in ["A", "B", "C"].iter().zip(&targets) {
                map.insert_region(*name, vec![c])?;
            }
            Some(format!("F[0,{b}] (A or B or C)"))
        }
    };
    Ok(formula)
}
