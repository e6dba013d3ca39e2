//! Learned step-count regressor `(map, p_s, p_g) -> Δt̂ ≥ 0`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::maze::{compute_reachability, MazeMap};
use crate::nn::{clip_grad_norm, Graph, Init, OptimizerConfig, ParamId, ParamSet, Tensor, TrainError, TrainReport, Var};

pub const KIND: &str = "time_predictor";

/// Offsets and distances enter the regressor in units of this many cells.
const OFFSET_UNIT_CELLS: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimePredictorConfig {
    pub channels: usize,
    pub hidden: usize,
    pub frequencies: usize,
    /// Prediction is `out_scale · softplus(z)`.
    pub out_scale: f64,
}

impl Default for TimePredictorConfig {
    fn default() -> Self {
        Self { channels: 8, hidden: 64, frequencies: 4, out_scale: 10.0 }
    }
}

impl TimePredictorConfig {
    pub fn feature_dim(&self) -> usize {
        3 * self.channels + 3 + 8 * self.frequencies
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("{which} point ({}, {}) is out of bounds or inside an obstacle", .p[0], .p[1])]
    Blocked { which: &'static str, p: [f64; 2] },
}

#[derive(Clone, Copy, Debug)]
pub struct TimeQuery<'a> {
    pub map: &'a MazeMap,
    pub p_s: [f64; 2],
    pub p_g: [f64; 2],
}

impl<'a> TimeQuery<'a> {
    pub fn new(map: &'a MazeMap, p_s: [f64; 2], p_g: [f64; 2]) -> Result<Self, QueryError> {
        if !map.is_collision_free(p_s) {
            return Err(QueryError::Blocked { which: "start", p: p_s });
        }
        if !map.is_collision_free(p_g) {
            return Err(QueryError::Blocked { which: "goal", p: p_g });
        }
        Ok(Self { map, p_s, p_g })
    }

    pub fn cell_size(&self) -> f64 {
        self.map.cell_size()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrlConfig {
    pub margin: f64,
    pub lambda: f64,
    /// Cap on ranking pairs per minibatch, taken as an evenly strided subset
    /// of all pairs. `None` uses every pair.
    pub pairs_per_batch: Option<usize>,
}

impl Default for TrlConfig {
    fn default() -> Self {
        Self { margin: 1.0, lambda: 0.5, pairs_per_batch: None }
    }
}

/// Mean hinge ranking loss over all pairs `i < j` and its gradient with
/// respect to `pred`. Tied labels contribute zero; the kink has zero
/// subgradient.
pub fn trl_loss(pred: &[f64], labels: &[f64], cfg: &TrlConfig) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), labels.len());
    let pairs = ranking_pairs(labels, cfg.pairs_per_batch);
    let total = pairs.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (i, j, s) in pairs {
        if s == 0.0 {
            continue;
        }
        let h = cfg.margin - s * (pred[i] - pred[j]);
        if h > 0.0 {
            loss += h;
            grad[i] -= s / total;
            grad[j] += s / total;
        }
    }
    (loss / total, grad)
}

/// `(i, j, sign(y_i − y_j))` for pairs `i < j`, optionally strided down to
/// `cap` entries.
fn ranking_pairs(labels: &[f64], cap: Option<usize>) -> Vec<(usize, usize, f64)> {
    let n = labels.len();
    let mut all = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = labels[i] - labels[j];
            let s = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
            all.push((i, j, s));
        }
    }
    match cap {
        Some(k) if k > 0 && all.len() > k => {
            let stride = all.len() as f64 / k as f64;
            (0..k).map(|t| all[(t as f64 * stride) as usize]).collect()
        }
        _ => all,
    }
}

/// Fraction of label-distinct pairs whose predictions are strictly ordered
/// the same way.
pub fn pairwise_accuracy(pred: &[f64], labels: &[f64]) -> f64 {
    let (mut ok, mut n) = (0usize, 0usize);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            let d = labels[i] - labels[j];
            if d != 0.0 {
                n += 1;
                if (pred[i] - pred[j]) * d > 0.0 {
                    ok += 1;
                }
            }
        }
    }
    if n == 0 { 1.0 } else { ok as f64 / n as f64 }
}

/// Round half up, floored at zero.
pub fn round_steps(x: f64) -> u32 {
    if x.is_nan() || x <= 0.0 {
        0
    } else {
        (x + 0.5).floor().min(u32::MAX as f64) as u32
    }
}

/// Ground-truth label: BFS cell distance between the containing cells times
/// `steps_per_cell`. `None` if either point is blocked or unreachable.
pub fn bfs_label(map: &MazeMap, p_s: [f64; 2], p_g: [f64; 2], steps_per_cell: f64) -> Option<f64> {
    let s = map.world_to_grid(p_s).cell()?;
    let g = map.world_to_grid(p_g).cell()?;
    let d = compute_reachability(map, s).distance(g)?;
    Some(d as f64 * steps_per_cell)
}

/// Step-count estimate used by the scheduler.
pub trait StepEstimator: Sync {
    /// `None` when the goal is judged unreachable.
    fn estimate(&self, map: &MazeMap, p_s: [f64; 2], p_g: [f64; 2]) -> Option<u32>;
}

/// Exact BFS-based estimator, the label oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BfsStepOracle {
    pub steps_per_cell: f64,
}

impl StepEstimator for BfsStepOracle {
    fn estimate(&self, map: &MazeMap, p_s: [f64; 2], p_g: [f64; 2]) -> Option<u32> {
        bfs_label(map, p_s, p_g, self.steps_per_cell).map(round_steps)
    }
}

#[derive(Clone, Copy, Debug)]
struct Ids {
    conv1_w: ParamId,
    conv1_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

impl Ids {
    fn lookup(p: &ParamSet) -> Option<Self> {
        Some(Self {
            conv1_w: p.id("conv1.w")?,
            conv1_b: p.id("conv1.b")?,
            conv2_w: p.id("conv2.w")?,
            conv2_b: p.id("conv2.b")?,
            fc1_w: p.id("fc1.w")?,
            fc1_b: p.id("fc1.b")?,
            fc2_w: p.id("fc2.w")?,
            fc2_b: p.id("fc2.b")?,
            out_w: p.id("out.w")?,
            out_b: p.id("out.b")?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TimePredictor {
    pub config: TimePredictorConfig,
    pub params: ParamSet,
    pub seed: u64,
    ids: Ids,
}

/// One prepared query: map plus start/goal points.
struct Item<'a> {
    map: &'a MazeMap,
    p_s: [f64; 2],
    p_g: [f64; 2],
}

impl TimePredictor {
    pub fn new(config: TimePredictorConfig, seed: u64) -> Self {
        let c = config.channels;
        let h = config.hidden;
        let mut b = ParamSet::builder(seed);
        b.add("conv1.w", 9 * 2, c, Init::Xavier(1.0));
        b.add("conv1.b", 1, c, Init::Zeros);
        b.add("conv2.w", 9 * c, c, Init::Xavier(1.0));
        b.add("conv2.b", 1, c, Init::Zeros);
        b.add("fc1.w", config.feature_dim(), h, Init::Xavier(1.0));
        b.add("fc1.b", 1, h, Init::Zeros);
        b.add("fc2.w", h, h, Init::Xavier(1.0));
        b.add("fc2.b", 1, h, Init::Zeros);
        b.add("out.w", h, 1, Init::Xavier(1.0));
        b.add("out.b", 1, 1, Init::Zeros);
        let params = b.finish();
        let ids = Ids::lookup(&params).expect("all blocks registered");
        Self { config, params, seed, ids }
    }

    pub fn from_params(config: TimePredictorConfig, params: ParamSet, seed: u64) -> Result<Self, CheckpointError> {
        let fresh = Self::new(config, seed);
        if !fresh.params.same_layout(&params) {
            return Err(CheckpointError::Layout);
        }
        Ok(Self { params, ..fresh })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(KIND, &self.params, &self.config, self.seed)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let (config, params) = ck.open::<TimePredictorConfig>(KIND)?;
        Self::from_params(config, params, ck.seed)
    }

    /// Feature vector fed to the regressor.
    pub fn featurize(&self, q: &TimeQuery) -> Vec<f64> {
        let mut g = Graph::new();
        let items = [Item { map: q.map, p_s: q.p_s, p_g: q.p_g }];
        let f = self.features(&mut g, &self.params, &items);
        g.value(f).data.clone()
    }

    pub fn predict_steps(&self, q: &TimeQuery) -> f64 {
        self.predict_batch(std::slice::from_ref(q))[0]
    }

    pub fn predict_rounded(&self, q: &TimeQuery) -> u32 {
        round_steps(self.predict_steps(q))
    }

    pub fn predict_batch(&self, qs: &[TimeQuery]) -> Vec<f64> {
        let mut out = Vec::with_capacity(qs.len());
        for chunk in qs.chunks(64) {
            let items: Vec<Item> = chunk.iter().map(|q| Item { map: q.map, p_s: q.p_s, p_g: q.p_g }).collect();
            let mut g = Graph::new();
            let y = self.forward(&mut g, &self.params, &items);
            out.extend_from_slice(&g.value(y).data);
        }
        out
    }

    /// Total loss `L1 + λ·TRL` on a batch, with its gradient over the flat
    /// parameter vector.
    pub fn loss_and_grad(&self, batch: &[(TimeQuery, f64)], trl: &TrlConfig) -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let loss = self.loss_graph(&mut g, &self.params, batch, trl);
        let grads = g.backward(loss);
        let mut flat = vec![0.0; self.params.len()];
        g.param_grads(&grads, &mut flat);
        (g.scalar(loss), flat)
    }

    /// Total loss with explicit parameters, for finite-difference checks.
    pub fn loss_with(&self, params: &ParamSet, batch: &[(TimeQuery, f64)], trl: &TrlConfig) -> f64 {
        let mut g = Graph::new();
        let loss = self.loss_graph(&mut g, params, batch, trl);
        g.scalar(loss)
    }

    fn loss_graph(&self, g: &mut Graph, params: &ParamSet, batch: &[(TimeQuery, f64)], trl: &TrlConfig) -> Var {
        let items: Vec<Item> = batch.iter().map(|(q, _)| Item { map: q.map, p_s: q.p_s, p_g: q.p_g }).collect();
        let labels: Vec<f64> = batch.iter().map(|(_, y)| *y).collect();
        let pred = self.forward(g, params, &items);
        let y = g.constant(Tensor::from_vec(labels.len(), 1, labels.clone()));
        let diff = g.sub(pred, y);
        let abs = g.abs(diff);
        let l1 = g.mean(abs);
        if trl.lambda == 0.0 {
            return l1;
        }
        let pairs = ranking_pairs(&labels, trl.pairs_per_batch);
        let total = pairs.len();
        let active: Vec<_> = pairs.into_iter().filter(|p| p.2 != 0.0).collect();
        if active.is_empty() {
            return l1;
        }
        let mut pm = Tensor::zeros(active.len(), labels.len());
        for (r, &(i, j, s)) in active.iter().enumerate() {
            pm.set(r, i, s);
            pm.set(r, j, -s);
        }
        let pm = g.constant(pm);
        let d = g.matmul(pm, pred);
        let neg = g.scale(d, -1.0);
        let h = g.add_scalar(neg, trl.margin);
        let h = g.relu(h);
        let s = g.sum(h);
        let t = g.scale(s, trl.lambda / total as f64);
        g.add(l1, t)
    }

    fn forward(&self, g: &mut Graph, params: &ParamSet, items: &[Item]) -> Var {
        let f = self.features(g, params, items);
        let ids = self.ids;
        let w1 = g.param(params, ids.fc1_w);
        let b1 = g.param(params, ids.fc1_b);
        let w2 = g.param(params, ids.fc2_w);
        let b2 = g.param(params, ids.fc2_b);
        let w3 = g.param(params, ids.out_w);
        let b3 = g.param(params, ids.out_b);
        let h = g.linear(f, w1, b1);
        let h = g.tanh(h);
        let h = g.linear(h, w2, b2);
        let h = g.tanh(h);
        let z = g.linear(h, w3, b3);
        let z = g.softplus(z);
        g.scale(z, self.config.out_scale)
    }

    fn features(&self, g: &mut Graph, params: &ParamSet, items: &[Item]) -> Var {
        let c = self.config.channels;
        // Distinct maps in first-seen order, stacked row-wise.
        let mut maps: Vec<&MazeMap> = Vec::new();
        let mut which = Vec::with_capacity(items.len());
        for it in items {
            let k = maps.iter().position(|m| std::ptr::eq(*m, it.map)).unwrap_or_else(|| {
                maps.push(it.map);
                maps.len() - 1
            });
            which.push(k);
        }
        let dims: Vec<(usize, usize)> = maps.iter().map(|m| (m.height(), m.width())).collect();
        let mut bases = Vec::with_capacity(maps.len());
        let mut total = 0;
        for &(h, w) in &dims {
            bases.push(total);
            total += h * w;
        }
        let mut input = Tensor::zeros(total, 2);
        for (m, &base) in maps.iter().zip(&bases) {
            for cell in m.cells() {
                let occ = if m.is_occupied(cell) { 1.0 } else { 0.0 };
                let r = base + cell.row * m.width() + cell.col;
                input.set(r, 0, occ);
                input.set(r, 1, 1.0 - occ);
            }
        }
        let x = g.constant(input);
        let ids = self.ids;
        let fmap = {
            let w = g.param(params, ids.conv1_w);
            let b = g.param(params, ids.conv1_b);
            let cols = g.gather(x, Rc::new(im2col_index(&dims, 2)), total, 18);
            let h = g.linear(cols, w, b);
            let h = g.tanh(h);
            let w = g.param(params, ids.conv2_w);
            let b = g.param(params, ids.conv2_b);
            let cols = g.gather(h, Rc::new(im2col_index(&dims, c)), total, 9 * c);
            let h = g.linear(cols, w, b);
            g.tanh(h)
        };

        let n = items.len();
        let mut s_start = Tensor::zeros(n, total);
        let mut s_goal = Tensor::zeros(n, total);
        let mut pool = Tensor::zeros(n, total);
        let geo_dim = 3 + 8 * self.config.frequencies;
        let mut geo = Tensor::zeros(n, geo_dim);
        for (i, it) in items.iter().enumerate() {
            let k = which[i];
            let (h, w) = dims[k];
            bilinear_weights(it.map, it.p_s, bases[k], s_start.row_mut(i));
            bilinear_weights(it.map, it.p_g, bases[k], s_goal.row_mut(i));
            for v in &mut pool.row_mut(i)[bases[k]..bases[k] + h * w] {
                *v = 1.0 / (h * w) as f64;
            }
            geometric_features(it.map, it.p_s, it.p_g, self.config.frequencies, geo.row_mut(i));
        }
        let s_start = g.constant(s_start);
        let s_goal = g.constant(s_goal);
        let pool = g.constant(pool);
        let fs = g.matmul(s_start, fmap);
        let fg = g.matmul(s_goal, fmap);
        let pooled = g.matmul(pool, fmap);
        let geo = g.constant(geo);
        g.concat_cols(&[fs, fg, pooled, geo])
    }
}

impl StepEstimator for TimePredictor {
    fn estimate(&self, map: &MazeMap, p_s: [f64; 2], p_g: [f64; 2]) -> Option<u32> {
        let q = TimeQuery::new(map, p_s, p_g).ok()?;
        Some(self.predict_rounded(&q))
    }
}

/// Source element for each entry of the `rows × 9·cin` patch matrix of a
/// 3×3, zero-padded convolution over row-stacked maps.
fn im2col_index(dims: &[(usize, usize)], cin: usize) -> Vec<Option<usize>> {
    let mut idx = Vec::new();
    let mut base = 0;
    for &(h, w) in dims {
        for r in 0..h as i64 {
            for c in 0..w as i64 {
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (rr, cc) = (r + dr, c + dc);
                        let inside = rr >= 0 && cc >= 0 && rr < h as i64 && cc < w as i64;
                        for ch in 0..cin {
                            idx.push(inside.then(|| (base + rr as usize * w + cc as usize) * cin + ch));
                        }
                    }
                }
            }
        }
        base += h * w;
    }
    idx
}

/// Writes bilinear interpolation weights for point `p` into `row`, with
/// cell centres at integer grid coordinates.
fn bilinear_weights(map: &MazeMap, p: [f64; 2], base: usize, row: &mut [f64]) {
    let (h, w) = (map.height(), map.width());
    let cs = map.cell_size();
    let u = (p[0] / cs - 0.5).clamp(0.0, (w - 1) as f64);
    let v = (p[1] / cs - 0.5).clamp(0.0, (h - 1) as f64);
    let c0 = (u.floor() as usize).min(w - 2);
    let r0 = (v.floor() as usize).min(h - 2);
    let (fu, fv) = (u - c0 as f64, v - r0 as f64);
    let at = |r: usize, c: usize| base + r * w + c;
    row[at(r0, c0)] += (1.0 - fu) * (1.0 - fv);
    row[at(r0, c0 + 1)] += fu * (1.0 - fv);
    row[at(r0 + 1, c0)] += (1.0 - fu) * fv;
    row[at(r0 + 1, c0 + 1)] += fu * fv;
}

/// `[Δp, ‖Δp‖]` in units of [`OFFSET_UNIT_CELLS`] cells, then sin/cos
/// features of each normalised coordinate of `p_s` and `p_g`.
fn geometric_features(map: &MazeMap, p_s: [f64; 2], p_g: [f64; 2], freqs: usize, out: &mut [f64]) {
    let unit = map.cell_size() * OFFSET_UNIT_CELLS;
    let d = [(p_g[0] - p_s[0]) / unit, (p_g[1] - p_s[1]) / unit];
    out[0] = d[0];
    out[1] = d[1];
    out[2] = d[0].hypot(d[1]);
    let extent = [map.width() as f64 * map.cell_size(), map.height() as f64 * map.cell_size()];
    let mut k = 3;
    for p in [p_s, p_g] {
        for axis in 0..2 {
            let x = p[axis] / extent[axis];
            for f in 0..freqs {
                let a = (1u32 << f) as f64 * PI * x;
                out[k] = a.sin();
                out[k + 1] = a.cos();
                k += 2;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSample {
    pub maze: usize,
    pub p_s: [f64; 2],
    pub p_g: [f64; 2],
    /// Label in planning steps.
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TimeDataset {
    pub mazes: Vec<MazeMap>,
    pub samples: Vec<TimeSample>,
}

impl TimeDataset {
    pub fn query(&self, s: &TimeSample) -> TimeQuery<'_> {
        TimeQuery { map: &self.mazes[s.maze], p_s: s.p_s, p_g: s.p_g }
    }

    pub fn labelled(&self, samples: &[TimeSample]) -> Vec<(TimeQuery<'_>, f64)> {
        samples.iter().map(|s| (self.query(s), s.dt)).collect()
    }

    /// Splits samples by maze: the last `holdout` mazes go to the second set.
    pub fn split_by_maze(&self, holdout: usize) -> (Vec<TimeSample>, Vec<TimeSample>) {
        let cut = self.mazes.len().saturating_sub(holdout);
        self.samples.iter().partition(|s| s.maze < cut)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeTrainConfig {
    pub model: TimePredictorConfig,
    pub trl: TrlConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TimeTrainConfig {
    fn default() -> Self {
        Self {
            model: TimePredictorConfig::default(),
            trl: TrlConfig::default(),
            optimizer: OptimizerConfig::Sgd { lr: 1e-3, momentum: 0.9 },
            epochs: 200,
            batch_size: 32,
            grad_clip: Some(10.0),
            seed: 0,
        }
    }
}

/// Minibatch training on `samples` of `data`. Deterministic per
/// `cfg.seed`. `on_epoch` sees each epoch's mean loss.
pub fn train(
    data: &TimeDataset,
    samples: &[TimeSample],
    cfg: &TimeTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(TimePredictor, TrainReport), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Empty);
    }
    if !(cfg.trl.margin > 0.0) {
        return Err(TrainError::BadConfig(format!("margin must be positive, got {}", cfg.trl.margin)));
    }
    let mut model = TimePredictor::new(cfg.model, cfg.seed);
    let mut opt = cfg.optimizer.build(model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7151_u64);
    let bs = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    let mean_loss = |m: &TimePredictor| {
        let mut sum = 0.0;
        let mut n = 0usize;
        for chunk in samples.chunks(bs) {
            sum += m.loss_with(&m.params, &data.labelled(chunk), &cfg.trl) * chunk.len() as f64;
            n += chunk.len();
        }
        sum / n as f64
    };
    let initial = mean_loss(&model);
    let mut report = TrainReport { initial_loss: initial, epoch_losses: Vec::with_capacity(cfg.epochs) };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(bs) {
            let batch: Vec<TimeSample> = chunk.iter().map(|&i| samples[i]).collect();
            let (loss, mut grad) = model.loss_and_grad(&data.labelled(&batch), &cfg.trl);
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut grad, c);
            }
            opt.step(&mut model.params.values, &grad);
            sum += loss * chunk.len() as f64;
        }
        let epoch_loss = sum / samples.len() as f64;
        if !epoch_loss.is_finite() || epoch_loss > 10.0 * initial || !model.params.is_finite() {
            return Err(TrainError::Diverged { epoch, loss: epoch_loss, initial });
        }
        report.epoch_losses.push(epoch_loss);
        on_epoch(epoch, epoch_loss);
    }
    Ok((model, report))
}

/// Convenience grouping of samples by maze for reporting.
pub fn samples_per_maze(samples: &[TimeSample]) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for s in samples {
        *out.entry(s.maze).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{generate_maze, Cell};

    fn open5() -> MazeMap {
        MazeMap::open(5, 5, 12.0, Cell::new(0, 0)).unwrap()
    }

    #[test]
    fn feature_layout() {
        let cfg = TimePredictorConfig::default();
        assert_eq!(cfg.feature_dim(), 59);
        let m = open5();
        let tp = TimePredictor::new(cfg, 1);
        let p = [30.0, 18.0];
        let f = tp.featurize(&TimeQuery::new(&m, p, p).unwrap());
        assert_eq!(f.len(), 59);
        let geo = &f[24..];
        assert_eq!(&geo[..3], &[0.0, 0.0, 0.0]);
        // Fourier blocks of start and goal coincide.
        assert_eq!(&geo[3..19], &geo[19..35]);
        assert!(geo[3..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn swapping_points_negates_offset() {
        let m = open5();
        let tp = TimePredictor::new(TimePredictorConfig::default(), 2);
        let (a, b) = ([6.0, 6.0], [42.0, 30.0]);
        let f1 = tp.featurize(&TimeQuery::new(&m, a, b).unwrap());
        let f2 = tp.featurize(&TimeQuery::new(&m, b, a).unwrap());
        assert_eq!(f1[24], -f2[24]);
        assert_eq!(f1[25], -f2[25]);
        assert_eq!(f1[26], f2[26]);
        assert_eq!(&f1[0..8], &f2[8..16]);
    }

    #[test]
    fn bilinear_at_cell_centre_picks_that_row() {
        let m = generate_maze(5, 3, 0.2, 2).unwrap();
        for cell in m.cells() {
            let mut row = vec![0.0; 25];
            bilinear_weights(&m, m.cell_center(cell), 0, &mut row);
            let k = cell.row * 5 + cell.col;
            assert_eq!(row[k], 1.0, "{cell:?}");
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn output_is_non_negative() {
        let m = generate_maze(7, 4, 0.25, 0).unwrap();
        for seed in 0..5 {
            let mut tp = TimePredictor::new(TimePredictorConfig::default(), seed);
            for v in tp.params.values.iter_mut() {
                *v *= -5.0;
            }
            let free = m.free_cells();
            for (i, &a) in free.iter().enumerate().take(6) {
                let b = free[(i * 7) % free.len()];
                let q = TimeQuery::new(&m, m.cell_center(a), m.cell_center(b)).unwrap();
                assert!(tp.predict_steps(&q) >= 0.0);
            }
        }
    }

    #[test]
    fn trl_examples() {
        let cfg = TrlConfig { margin: 1.0, lambda: 0.5, pairs_per_batch: None };
        assert_eq!(trl_loss(&[3.0, 1.0], &[5.0, 2.0], &cfg).0, 0.0);
        assert_eq!(trl_loss(&[2.0, 2.0], &[5.0, 2.0], &cfg).0, 1.0);
        assert_eq!(trl_loss(&[0.0, 9.0], &[4.0, 4.0], &cfg).0, 0.0);
        // Kink: h exactly 0 gives zero subgradient.
        let (l, g) = trl_loss(&[2.0, 1.0], &[5.0, 2.0], &cfg);
        assert_eq!((l, g), (0.0, vec![0.0, 0.0]));
    }

    #[test]
    fn graph_trl_matches_scalar_trl() {
        let m = generate_maze(5, 9, 0.2, 0).unwrap();
        let free = m.free_cells();
        let tp = TimePredictor::new(TimePredictorConfig::default(), 5);
        let batch: Vec<(TimeQuery, f64)> = (0..6)
            .map(|i| {
                let q = TimeQuery::new(&m, m.cell_center(free[i]), m.cell_center(free[free.len() - 1 - i])).unwrap();
                (q, (i % 3) as f64 * 5.0)
            })
            .collect();
        let preds: Vec<f64> = batch.iter().map(|(q, _)| tp.predict_steps(q)).collect();
        let labels: Vec<f64> = batch.iter().map(|b| b.1).collect();
        let l1 = preds.iter().zip(&labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / 6.0;
        let trl = TrlConfig { margin: 3.0, lambda: 0.7, pairs_per_batch: None };
        let expect = l1 + 0.7 * trl_loss(&preds, &labels, &trl).0;
        let (got, _) = tp.loss_and_grad(&batch, &trl);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        let zero = TrlConfig { lambda: 0.0, ..trl };
        assert!((tp.loss_and_grad(&batch, &zero).0 - l1).abs() < 1e-12);
    }

    #[test]
    fn rounding() {
        assert_eq!(round_steps(3.4), 3);
        assert_eq!(round_steps(3.5), 4);
        assert_eq!(round_steps(0.2), 0);
        assert_eq!(round_steps(-1.0), 0);
    }

    #[test]
    fn strided_pairs() {
        let labels = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(ranking_pairs(&labels, None).len(), 10);
        assert_eq!(ranking_pairs(&labels, Some(4)).len(), 4);
    }

    #[test]
    fn accuracy_counts_distinct_pairs_only() {
        assert_eq!(pairwise_accuracy(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]), 1.0);
        assert_eq!(pairwise_accuracy(&[3.0, 2.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let tp = TimePredictor::new(TimePredictorConfig::default(), 11);
        let back = TimePredictor::from_checkpoint(&Checkpoint::from_json(&tp.to_checkpoint().to_json()).unwrap()).unwrap();
        assert_eq!(back.params, tp.params);
        let m = open5();
        let q = TimeQuery::new(&m, [6.0, 6.0], [54.0, 54.0]).unwrap();
        assert_eq!(back.predict_steps(&q), tp.predict_steps(&q));
    }

    #[test]
    fn bfs_oracle_labels() {
        let m = open5();
        let o = BfsStepOracle { steps_per_cell: 5.0 };
        assert_eq!(o.estimate(&m, [6.0, 6.0], [54.0, 6.0]), Some(20));
        assert_eq!(o.estimate(&m, [6.0, 6.0], [7.0, 8.0]), Some(0));
    }
}
