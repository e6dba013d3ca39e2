//! Offline training data: reach trajectories and step-count labels on
//! generated mazes, plus task-conditioned generator examples.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{reach_trajectory, trace_collision_free, OracleConfig};
use super::schedule::schedule_subtasks;
use super::{oracle_plan, PlannerConfig};
use crate::dnf::to_dnf;
use crate::generator::{encode_context, GenExample};
use crate::maze::{compute_reachability, generate_maze, Cell, MapError, MazeMap};
use crate::stl::{parse, Trace};
use crate::time_predictor::{bfs_label, BfsStepOracle, TimeDataset, TimeSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub size: usize,
    pub density: f64,
    /// Step-count samples per maze, in addition to one per trajectory.
    pub time_samples_per_maze: usize,
    /// Fraction of samples with `p_s = p_g`.
    pub identity_fraction: f64,
    /// Max offset of sampled points from their cell centre, in cells.
    pub jitter: f64,
    pub oracle: OracleConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            size: 7,
            density: 0.2,
            time_samples_per_maze: 64,
            identity_fraction: 0.1,
            jitter: 0.3,
            oracle: OracleConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn steps_per_cell(&self) -> f64 {
        crate::maze::DEFAULT_CELL_SIZE / (self.oracle.nominal_speed * self.oracle.step_s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajRecord {
    pub maze: usize,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub trajectory: Trace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config: DatasetConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub meta: DatasetMeta,
    pub mazes: Vec<MazeMap>,
    pub time: Vec<TimeSample>,
    pub trajectories: Vec<TrajRecord>,
}

impl OfflineDataset {
    pub fn time_dataset(&self) -> TimeDataset {
        TimeDataset { mazes: self.mazes.clone(), samples: self.time.clone() }
    }
}

fn jittered(map: &MazeMap, c: Cell, jitter: f64, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let p = map.cell_center(c);
    if jitter <= 0.0 {
        return p;
    }
    let j = jitter.min(0.49) * map.cell_size();
    [p[0] + rng.gen_range(-j..=j), p[1] + rng.gen_range(-j..=j)]
}

/// Per maze: `n_traj` start/goal pairs of free cells joined by a smoothed,
/// nominal-speed A* trajectory, and BFS step labels for those pairs plus
/// extra jittered pairs.
pub fn synthesize_offline_dataset(
    n_mazes: usize,
    n_traj: usize,
    seed: u64,
    cfg: &DatasetConfig,
) -> Result<OfflineDataset, MapError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spc = cfg.steps_per_cell();
    let mut mazes = Vec::with_capacity(n_mazes);
    let mut time = Vec::new();
    let mut trajectories = Vec::new();
    for m in 0..n_mazes {
        let map = generate_maze(cfg.size, rng.gen(), cfg.density, 0)?;
        let free = map.free_cells();
        let pick = |rng: &mut ChaCha8Rng| -> (Cell, Cell) {
            let s = *free.choose(rng).expect("maze has free cells");
            let g = if rng.gen_bool(cfg.identity_fraction.clamp(0.0, 1.0)) { s } else { *free.choose(rng).unwrap() };
            (s, g)
        };
        for _ in 0..n_traj {
            let (s, g) = pick(&mut rng);
            let (p_s, p_g) = (map.cell_center(s), map.cell_center(g));
            let trajectory = reach_trajectory(&map, p_s, p_g, &cfg.oracle).expect("generated mazes are connected");
            let dt = bfs_label(&map, p_s, p_g, spc).expect("connected");
            time.push(TimeSample { maze: m, p_s, p_g, dt });
            trajectories.push(TrajRecord { maze: m, start: p_s, goal: p_g, trajectory });
        }
        for _ in 0..cfg.time_samples_per_maze {
            let (s, g) = pick(&mut rng);
            let p_s = jittered(&map, s, cfg.jitter, &mut rng);
            let p_g = if s == g { p_s } else { jittered(&map, g, cfg.jitter, &mut rng) };
            let dt = bfs_label(&map, p_s, p_g, spc).expect("connected");
            time.push(TimeSample { maze: m, p_s, p_g, dt });
        }
        mazes.push(map);
    }
    Ok(OfflineDataset { meta: DatasetMeta { config: cfg.clone(), seed }, mazes, time, trajectories })
}

/// Whether every trajectory starts and ends at its endpoints and stays in
/// free space.
pub fn audit_dataset(ds: &OfflineDataset) -> Result<(), String> {
    for (k, r) in ds.trajectories.iter().enumerate() {
        let map = &ds.mazes[r.maze];
        let tr = &r.trajectory;
        if tr.position(0) != r.start || tr.position(tr.horizon()) != r.goal {
            return Err(format!("trajectory {k}: endpoints do not match"));
        }
        if !trace_collision_free(map, tr) {
            return Err(format!("trajectory {k}: collides"));
        }
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<Vec<T>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Writes `dataset.json`, `mazes.json`, `time.jsonl` and `traj.jsonl`.
pub fn save_dataset(ds: &OfflineDataset, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&ds.meta)?)?;
    std::fs::write(dir.join("mazes.json"), serde_json::to_string(&ds.mazes)?)?;
    write_jsonl(&dir.join("time.jsonl"), &ds.time)?;
    write_jsonl(&dir.join("traj.jsonl"), &ds.trajectories)
}

pub fn load_dataset(dir: &Path) -> std::io::Result<OfflineDataset> {
    let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("dataset.json"))?)?;
    let mazes: Vec<MazeMap> = serde_json::from_str(&std::fs::read_to_string(dir.join("mazes.json"))?)?;
    let time: Vec<TimeSample> = read_jsonl(&dir.join("time.jsonl"))?;
    let trajectories: Vec<TrajRecord> = read_jsonl(&dir.join("traj.jsonl"))?;
    let bad = time.iter().map(|s| s.maze).chain(trajectories.iter().map(|r| r.maze)).any(|m| m >= mazes.len());
    if bad {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "sample refers to a missing maze"));
    }
    Ok(OfflineDataset { meta, mazes, time, trajectories })
}

/// One `F[0,b] Goal` example on `map` from `start`: the reference plan for
/// the scheduled task, with the context the planner would build for it.
pub fn reach_example(map: &MazeMap, start: Cell, goal: Cell, slack: usize, cfg: &PlannerConfig) -> Option<GenExample> {
    let mut map = map.clone();
    map.insert_region("Goal", vec![goal]).ok()?;
    let spc = cfg.steps_per_cell(map.cell_size());
    let d = compute_reachability(&map, start).distance(goal)?;
    let b = ((spc * d as f64).ceil() as usize + slack).min(cfg.horizon);
    let phi = parse(&format!("F[0,{b}] Goal"), &map).ok()?.formula;
    let branch = to_dnf(&phi).ok()?.remove(0);
    let x0 = map.cell_center(start);
    let schedule = schedule_subtasks(&branch, &BfsStepOracle { steps_per_cell: spc }, &map, x0, cfg.horizon).ok()?;
    let trajectory = oracle_plan(&map, &schedule, x0, &cfg.oracle).ok()?;
    let context = encode_context(&map, &branch, &schedule.subtask_times, cfg.oracle.step_s);
    Some(GenExample { context, trajectory })
}

/// `n` reach examples over `maps` with start/goal cells and window slack
/// drawn from `seed`. Goals further than the horizon allows are skipped.
pub fn generator_examples(maps: &[MazeMap], n: usize, seed: u64, cfg: &PlannerConfig) -> Vec<GenExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < 20 * n.max(1) && !maps.is_empty() {
        attempts += 1;
        let map = &maps[rng.gen_range(0..maps.len())];
        let free = map.free_cells();
        let start = *free.choose(&mut rng).unwrap();
        let goal = *free.choose(&mut rng).unwrap();
        let slack = rng.gen_range(2..=10);
        let spc = cfg.steps_per_cell(map.cell_size());
        let fits = compute_reachability(map, start)
            .distance(goal)
            .is_some_and(|d| (spc * d as f64).ceil() as usize + slack <= cfg.horizon);
        if fits {
            out.extend(reach_example(map, start, goal, slack, cfg));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig { size: 5, time_samples_per_maze: 8, ..DatasetConfig::default() }
    }

    #[test]
    fn dataset_is_collision_free_and_deterministic() {
        let a = synthesize_offline_dataset(4, 6, 3, &small()).unwrap();
        audit_dataset(&a).unwrap();
        assert_eq!(a.trajectories.len(), 24);
        assert_eq!(a.time.len(), 4 * (6 + 8));
        assert_eq!(a, synthesize_offline_dataset(4, 6, 3, &small()).unwrap());
        assert_ne!(a, synthesize_offline_dataset(4, 6, 4, &small()).unwrap());
    }

    #[test]
    fn identity_pairs_have_zero_labels() {
        let cfg = DatasetConfig { identity_fraction: 1.0, ..small() };
        let ds = synthesize_offline_dataset(2, 3, 1, &cfg).unwrap();
        assert!(ds.time.iter().all(|s| s.dt == 0.0));
        assert!(ds.trajectories.iter().all(|r| r.trajectory.len() == 1));
    }

    #[test]
    fn save_load_round_trip() {
        let ds = synthesize_offline_dataset(2, 3, 9, &small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn generator_examples_span_the_horizon() {
        let ds = synthesize_offline_dataset(2, 0, 5, &small()).unwrap();
        let cfg = PlannerConfig::default();
        let ex = generator_examples(&ds.mazes, 6, 2, &cfg);
        assert_eq!(ex.len(), 6);
        for e in &ex {
            assert_eq!(e.trajectory.horizon(), cfg.horizon);
        }
    }
}
