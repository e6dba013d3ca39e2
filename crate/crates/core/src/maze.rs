//! Binary occupancy maps with named regions, coordinate mapping, collision
//! checks and BFS reachability.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stl::{predicate_margin, PredicateEnv, Rect, RegionTable};

pub const DEFAULT_CELL_SIZE: f64 = 12.0;
pub const START_REGION: &str = "Start";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Result of mapping a world position onto the grid. Indices may be negative
/// or past the map edge; `in_bounds` tells which.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridIndex {
    pub row: i64,
    pub col: i64,
    pub in_bounds: bool,
}

impl GridIndex {
    pub fn cell(&self) -> Option<Cell> {
        self.in_bounds.then(|| Cell::new(self.row as usize, self.col as usize))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("map must be at least 2x2, got {height}x{width}")]
    TooSmall { height: usize, width: usize },
    #[error("grid has {got} cells, expected {expected}")]
    GridSize { expected: usize, got: usize },
    #[error("cell size must be positive, got {0}")]
    BadCellSize(f64),
    #[error("map has no free cell")]
    NoFreeCell,
    #[error("start cell ({}, {}) is out of bounds or occupied", .0.row, .0.col)]
    BadStart(Cell),
    #[error("region `{0}` has no cells")]
    EmptyRegion(String),
    #[error("region `{name}` cell ({}, {}) is out of bounds or occupied", .cell.row, .cell.col)]
    BadRegionCell { name: String, cell: Cell },
    #[error("no connected layout found after {0} attempts")]
    RetriesExhausted(usize),
    #[error("unsupported maze size {0}; expected 5, 7 or 9")]
    UnsupportedSize(usize),
    #[error("need {needed} free cells for regions but only {free} are available")]
    NotEnoughCells { needed: usize, free: usize },
    #[error("invalid map file: {0}")]
    Json(String),
}

/// A named semantic region: a set of free cells. Predicate margins are
/// taken on the bounding rectangle of each 4-connected component, maximised
/// over components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub cells: Vec<Cell>,
    pub rects: Vec<Rect>,
}

impl Region {
    pub fn margin(&self, p: [f64; 2]) -> f64 {
        self.rects.iter().map(|r| predicate_margin(r, p)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.margin(p) >= 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MazeMap {
    height: usize,
    width: usize,
    occupied: Vec<bool>,
    cell_size: f64,
    start: Cell,
    regions: BTreeMap<String, Region>,
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    height: usize,
    width: usize,
    cell_size: f64,
    /// Row-major, 1 = obstacle.
    grid: Vec<u8>,
    start: [usize; 2],
    regions: BTreeMap<String, Vec<[usize; 2]>>,
}

impl MazeMap {
    pub fn new(
        height: usize,
        width: usize,
        occupied: Vec<bool>,
        cell_size: f64,
        start: Cell,
        regions: BTreeMap<String, Vec<Cell>>,
    ) -> Result<Self, MapError> {
        if height < 2 || width < 2 {
            return Err(MapError::TooSmall { height, width });
        }
        if occupied.len() != height * width {
            return Err(MapError::GridSize { expected: height * width, got: occupied.len() });
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(MapError::BadCellSize(cell_size));
        }
        if occupied.iter().all(|&o| o) {
            return Err(MapError::NoFreeCell);
        }
        let mut map = Self { height, width, occupied, cell_size, start, regions: BTreeMap::new() };
        if !map.is_free_cell(start) {
            return Err(MapError::BadStart(start));
        }
        for (name, cells) in regions {
            map.insert_region(name, cells)?;
        }
        Ok(map)
    }

    /// An obstacle-free map.
    pub fn open(height: usize, width: usize, cell_size: f64, start: Cell) -> Result<Self, MapError> {
        Self::new(height, width, vec![false; height * width], cell_size, start, BTreeMap::new())
    }

    pub fn insert_region(&mut self, name: impl Into<String>, mut cells: Vec<Cell>) -> Result<(), MapError> {
        let name = name.into();
        if cells.is_empty() {
            return Err(MapError::EmptyRegion(name));
        }
        if let Some(&cell) = cells.iter().find(|&&c| !self.is_free_cell(c)) {
            return Err(MapError::BadRegionCell { name, cell });
        }
        cells.sort();
        cells.dedup();
        let rects = self.component_rects(&cells);
        self.regions.insert(name, Region { cells, rects });
        Ok(())
    }

    fn component_rects(&self, cells: &[Cell]) -> Vec<Rect> {
        let mut seen = vec![false; cells.len()];
        let mut rects = Vec::new();
        for i in 0..cells.len() {
            if seen[i] {
                continue;
            }
            seen[i] = true;
            let mut stack = vec![i];
            let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
            while let Some(k) = stack.pop() {
                let c = cells[k];
                r0 = r0.min(c.row);
                r1 = r1.max(c.row);
                c0 = c0.min(c.col);
                c1 = c1.max(c.col);
                for (j, other) in cells.iter().enumerate() {
                    if !seen[j] && c.row.abs_diff(other.row) + c.col.abs_diff(other.col) == 1 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            let s = self.cell_size;
            rects.push(Rect::new([c0 as f64 * s, r0 as f64 * s], [(c1 + 1) as f64 * s, (r1 + 1) as f64 * s]));
        }
        rects
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn regions(&self) -> &BTreeMap<String, Region> {
        &self.regions
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.get(name)
    }

    pub fn in_bounds(&self, row: i64, col: i64) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    pub fn is_occupied(&self, cell: Cell) -> bool {
        self.occupied[cell.row * self.width + cell.col]
    }

    pub fn is_free_cell(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width && !self.is_occupied(cell)
    }

    pub fn set_occupied(&mut self, cell: Cell, occupied: bool) {
        self.occupied[cell.row * self.width + cell.col] = occupied;
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        self.cells().filter(|&c| !self.is_occupied(c)).collect()
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| Cell::new(r, c)))
    }

    /// `j = floor(x / cell_size)`, `i = floor(y / cell_size)`.
    pub fn world_to_grid(&self, p: [f64; 2]) -> GridIndex {
        let col = (p[0] / self.cell_size).floor() as i64;
        let row = (p[1] / self.cell_size).floor() as i64;
        GridIndex { row, col, in_bounds: self.in_bounds(row, col) }
    }

    pub fn cell_center(&self, cell: Cell) -> [f64; 2] {
        [(cell.col as f64 + 0.5) * self.cell_size, (cell.row as f64 + 0.5) * self.cell_size]
    }

    /// Points outside the map count as occupied.
    pub fn is_collision_free(&self, p: [f64; 2]) -> bool {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return false;
        }
        self.world_to_grid(p).cell().is_some_and(|c| !self.is_occupied(c))
    }

    pub fn neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        const STEPS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        STEPS.iter().filter_map(move |&(dr, dc)| {
            let (r, c) = (cell.row as i64 + dr, cell.col as i64 + dc);
            self.in_bounds(r, c).then(|| Cell::new(r as usize, c as usize))
        })
    }

    pub fn free_neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        self.neighbors(cell).filter(move |&c| !self.is_occupied(c))
    }

    /// Names of regions with no free path from the start cell.
    pub fn unreachable_regions(&self) -> Vec<String> {
        let field = compute_reachability(self, self.start);
        self.regions
            .iter()
            .filter(|(_, r)| r.cells.iter().all(|&c| field.distance(c).is_none()))
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// `#` obstacle, `.` free, first letter of a region name on region cells.
    pub fn render_ascii(&self) -> String {
        let mut grid: Vec<Vec<char>> = (0..self.height)
            .map(|r| (0..self.width).map(|c| if self.is_occupied(Cell::new(r, c)) { '#' } else { '.' }).collect())
            .collect();
        for (name, region) in &self.regions {
            let ch = name.chars().next().unwrap_or('?');
            for c in &region.cells {
                grid[c.row][c.col] = ch;
            }
        }
        let mut out = String::new();
        for row in grid {
            let _ = writeln!(out, "{}", row.into_iter().collect::<String>());
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("map serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let file: MapFile = serde_json::from_str(text).map_err(|e| MapError::Json(e.to_string()))?;
        Self::from_file(file)
    }

    fn to_file(&self) -> MapFile {
        MapFile {
            height: self.height,
            width: self.width,
            cell_size: self.cell_size,
            grid: self.occupied.iter().map(|&o| o as u8).collect(),
            start: [self.start.row, self.start.col],
            regions: self
                .regions
                .iter()
                .map(|(n, r)| (n.clone(), r.cells.iter().map(|c| [c.row, c.col]).collect()))
                .collect(),
        }
    }

    fn from_file(file: MapFile) -> Result<Self, MapError> {
        if let Some(bad) = file.grid.iter().find(|&&v| v > 1) {
            return Err(MapError::Json(format!("grid values must be 0 or 1, found {bad}")));
        }
        Self::new(
            file.height,
            file.width,
            file.grid.iter().map(|&v| v == 1).collect(),
            file.cell_size,
            Cell::new(file.start[0], file.start[1]),
            file.regions
                .into_iter()
                .map(|(n, cells)| (n, cells.into_iter().map(|[r, c]| Cell::new(r, c)).collect()))
                .collect(),
        )
    }
}

impl Serialize for MazeMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for MazeMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = MapFile::deserialize(d)?;
        Self::from_file(file).map_err(serde::de::Error::custom)
    }
}

impl PredicateEnv for MazeMap {
    fn margin(&self, region: &str, p: [f64; 2]) -> f64 {
        self.regions.get(region).map_or(f64::NEG_INFINITY, |r| r.margin(p))
    }
}

impl RegionTable for MazeMap {
    fn has_region(&self, name: &str) -> bool {
        self.regions.contains_key(name)
    }
}

/// 4-connected BFS distances (in cells) from a source cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityField {
    width: usize,
    source: Cell,
    dist: Vec<Option<u32>>,
}

impl ReachabilityField {
    pub fn distance(&self, cell: Cell) -> Option<u32> {
        self.dist.get(cell.row * self.width + cell.col).copied().flatten()
    }

    pub fn source(&self) -> Cell {
        self.source
    }
}

pub fn compute_reachability(m: &MazeMap, source: Cell) -> ReachabilityField {
    let mut dist = vec![None; m.height * m.width];
    if m.is_free_cell(source) {
        let mut queue = VecDeque::new();
        dist[source.row * m.width + source.col] = Some(0u32);
        queue.push_back(source);
        while let Some(cell) = queue.pop_front() {
            let d = dist[cell.row * m.width + cell.col].unwrap();
            for n in m.free_neighbors(cell) {
                let slot = &mut dist[n.row * m.width + n.col];
                if slot.is_none() {
                    *slot = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
    }
    ReachabilityField { width: m.width, source, dist }
}

/// Minimum BFS distance in cells over the region's cells; `inf` if unreachable.
pub fn region_distance(field: &ReachabilityField, region: &Region) -> f64 {
    region
        .cells
        .iter()
        .filter_map(|&c| field.distance(c))
        .min()
        .map_or(f64::INFINITY, f64::from)
}

/// [`region_distance`] in meters.
pub fn region_cost(field: &ReachabilityField, region: &Region, cell_size: f64) -> f64 {
    region_distance(field, region) * cell_size
}

const MAX_LAYOUT_ATTEMPTS: usize = 1000;

/// Random `size × size` maze: obstacles drawn independently with probability
/// `density`, resampled until all free cells are 4-connected. Regions `A`,
/// `B`, ... occupy distinct free cells other than the start; a `Start` region
/// covers the start cell.
pub fn generate_maze(size: usize, seed: u64, density: f64, n_regions: usize) -> Result<MazeMap, MapError> {
    if ![5, 7, 9].contains(&size) {
        return Err(MapError::UnsupportedSize(size));
    }
    generate_grid(size, size, seed, density, n_regions, DEFAULT_CELL_SIZE)
}

pub fn generate_grid(
    height: usize,
    width: usize,
    seed: u64,
    density: f64,
    n_regions: usize,
    cell_size: f64,
) -> Result<MazeMap, MapError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density = density.clamp(0.0, 1.0);
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let start = Cell::new(rng.gen_range(0..height), rng.gen_range(0..width));
        let occupied: Vec<bool> = (0..height * width)
            .map(|i| i != start.row * width + start.col && rng.gen_bool(density))
            .collect();
        let mut map = MazeMap::new(height, width, occupied, cell_size, start, BTreeMap::new())?;
        let field = compute_reachability(&map, start);
        let free = map.free_cells();
        if free.iter().any(|&c| field.distance(c).is_none()) {
            continue;
        }
        let mut candidates: Vec<Cell> = free.into_iter().filter(|&c| c != start).collect();
        if candidates.len() < n_regions {
            continue;
        }
        candidates.shuffle(&mut rng);
        for (k, cell) in candidates.into_iter().take(n_regions).enumerate() {
            map.insert_region(region_name(k), vec![cell])?;
        }
        map.insert_region(START_REGION, vec![start])?;
        return Ok(map);
    }
    Err(MapError::RetriesExhausted(MAX_LAYOUT_ATTEMPTS))
}

/// `A`, `B`, ..., `Z`, `R26`, `R27`, ...
pub fn region_name(k: usize) -> String {
    if k < 26 { ((b'A' + k as u8) as char).to_string() } else { format!("R{k}") }
}
