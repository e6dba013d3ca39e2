//! Map-conditioned autoregressive trajectory model: a small causal
//! transformer decoder with cross-attention to context tokens.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::dnf::{Branch, SubTask};
use crate::maze::MazeMap;
use crate::nn::{clip_grad_norm, Graph, Init, OptimizerConfig, ParamId, ParamSet, Tensor, TrainError, TrainReport, Var};
use crate::stl::{State, TemporalOp, Trace};

pub const KIND: &str = "trajectory_generator";
pub const STATE_DIM: usize = 4;
/// Normaliser for times in context tokens.
const TIME_NORM: f64 = 64.0;
/// Cell-unit positions are multiplied by this before embedding.
const POS_SCALE: f64 = 0.1;

pub const MAP_TOKEN_DIM: usize = 3;
pub const REGION_TOKEN_DIM: usize = 6;
pub const TIME_TOKEN_DIM: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_horizon: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { d_model: 32, layers: 2, heads: 2, ffn: 64, max_horizon: 64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionRole {
    Target,
    Avoid,
}

/// Raw context features, embedded to width `d` by the model.
///
/// * map tokens: `[occupied, (col + ½)/10, (row + ½)/10]` per cell;
/// * region tokens: `[target, avoid, x_min, y_min, x_max, y_max]` with the
///   bounding box in tenths of a cell;
/// * time tokens per sub-task: `[a, b, b − a, t_key]` over 64, the first
///   target's centre in tenths of a cell, and a one-hot of `F`/`G`/`U`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextTokens {
    pub cell_size: f64,
    pub step_s: f64,
    pub map: Vec<[f64; MAP_TOKEN_DIM]>,
    pub region_names: Vec<String>,
    pub regions: Vec<[f64; REGION_TOKEN_DIM]>,
    pub time: Vec<[f64; TIME_TOKEN_DIM]>,
}

impl ContextTokens {
    pub fn len(&self) -> usize {
        self.map.len() + self.regions.len() + self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Context for a branch: regions in name order with role `Target` when the
/// branch references them positively, and one time token per sub-task.
/// `keypoints[i]` is the scheduled time of sub-task `i`.
pub fn encode_context(map: &MazeMap, branch: &Branch, keypoints: &[usize], step_s: f64) -> ContextTokens {
    let regions: Vec<(String, RegionRole)> = branch
        .regions
        .iter()
        .map(|r| {
            let role = if branch.positive_regions.contains(r) { RegionRole::Target } else { RegionRole::Avoid };
            (r.clone(), role)
        })
        .collect();
    encode_context_with(map, &regions, &branch.subtasks, keypoints, step_s)
}

pub fn encode_context_with(
    map: &MazeMap,
    regions: &[(String, RegionRole)],
    subtasks: &[SubTask],
    keypoints: &[usize],
    step_s: f64,
) -> ContextTokens {
    let map_tokens = map
        .cells()
        .map(|c| {
            let occ = if map.is_occupied(c) { 1.0 } else { 0.0 };
            [occ, (c.col as f64 + 0.5) * POS_SCALE, (c.row as f64 + 0.5) * POS_SCALE]
        })
        .collect();
    let mut names = Vec::new();
    let mut region_tokens = Vec::new();
    for (name, role) in regions {
        let Some(bb) = region_bbox(map, name) else { continue };
        let (t, a) = match role {
            RegionRole::Target => (1.0, 0.0),
            RegionRole::Avoid => (0.0, 1.0),
        };
        names.push(name.clone());
        region_tokens.push([t, a, bb[0] * POS_SCALE, bb[1] * POS_SCALE, bb[2] * POS_SCALE, bb[3] * POS_SCALE]);
    }
    let time_tokens = subtasks
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (a, b) = (s.interval.lo as f64, s.interval.hi as f64);
            let key = keypoints.get(i).copied().unwrap_or(s.interval.lo) as f64;
            let centre = s
                .targets
                .first()
                .and_then(|r| region_bbox(map, r))
                .map_or([0.0, 0.0], |bb| [(bb[0] + bb[2]) * 0.5 * POS_SCALE, (bb[1] + bb[3]) * 0.5 * POS_SCALE]);
            let op = match s.op {
                TemporalOp::Eventually => [1.0, 0.0, 0.0],
                TemporalOp::Always => [0.0, 1.0, 0.0],
                TemporalOp::Until => [0.0, 0.0, 1.0],
            };
            [
                a / TIME_NORM,
                b / TIME_NORM,
                (b - a) / TIME_NORM,
                key / TIME_NORM,
                centre[0],
                centre[1],
                op[0],
                op[1],
                op[2],
            ]
        })
        .collect();
    ContextTokens {
        cell_size: map.cell_size(),
        step_s,
        map: map_tokens,
        region_names: names,
        regions: region_tokens,
        time: time_tokens,
    }
}

/// `[col_min, row_min, col_max + 1, row_max + 1]` in cell units.
fn region_bbox(map: &MazeMap, name: &str) -> Option<[f64; 4]> {
    let r = map.region(name)?;
    let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for c in &r.cells {
        bb[0] = bb[0].min(c.col as f64);
        bb[1] = bb[1].min(c.row as f64);
        bb[2] = bb[2].max(c.col as f64 + 1.0);
        bb[3] = bb[3].max(c.row as f64 + 1.0);
    }
    r.cells.first().map(|_| bb)
}

/// Model-space state: `[x, y]` in cells and velocity in cells per step.
pub fn to_model_state(s: &State, cell_size: f64, step_s: f64) -> [f64; STATE_DIM] {
    [s.pos[0] / cell_size, s.pos[1] / cell_size, s.aux[0] * step_s / cell_size, s.aux[1] * step_s / cell_size]
}

pub fn from_model_state(z: &[f64], cell_size: f64, step_s: f64) -> State {
    State { pos: [z[0] * cell_size, z[1] * cell_size], aux: [z[2] * cell_size / step_s, z[3] * cell_size / step_s] }
}

/// Linear anneal of the self-feeding probability from `eps_start` to
/// `eps_final` over `epochs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingSchedule {
    pub eps_start: f64,
    pub eps_final: f64,
}

impl Default for SamplingSchedule {
    fn default() -> Self {
        Self { eps_start: 0.0, eps_final: 0.5 }
    }
}

impl SamplingSchedule {
    pub fn constant(eps: f64) -> Self {
        Self { eps_start: eps, eps_final: eps }
    }

    pub fn epsilon(&self, epoch: usize, epochs: usize) -> f64 {
        let frac = if epochs <= 1 { 1.0 } else { epoch as f64 / (epochs - 1) as f64 };
        (self.eps_start + (self.eps_final - self.eps_start) * frac).clamp(0.0, 1.0)
    }
}

/// Which inputs are replaced by the model's own predictions. Position 0 is
/// always ground truth.
pub fn draw_feed_mask(rng: &mut impl Rng, n: usize, eps: f64) -> Vec<bool> {
    let eps = eps.clamp(0.0, 1.0);
    (0..n).map(|t| t > 0 && rng.gen_bool(eps)).collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("prefix must contain at least the initial state")]
    EmptyPrefix,
    #[error("length {len} exceeds the model horizon {max}")]
    TooLong { len: usize, max: usize },
    #[error("non-finite prediction at step {0}")]
    NonFinite(usize),
}

#[derive(Clone, Copy, Debug)]
struct LayerIds {
    ln1: (ParamId, ParamId),
    sa: [ParamId; 4],
    ln2: (ParamId, ParamId),
    ca: [ParamId; 4],
    ln3: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
struct Ids {
    state: (ParamId, ParamId),
    map: (ParamId, ParamId),
    region: (ParamId, ParamId),
    time: (ParamId, ParamId),
    ln_ctx: (ParamId, ParamId),
    layers: Vec<LayerIds>,
    ln_f: (ParamId, ParamId),
    head: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamSet,
    pub seed: u64,
    ids: Ids,
}

/// A training pair: context and the ground-truth trajectory it conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenExample {
    pub context: ContextTokens,
    pub trajectory: Trace,
}

impl GenExample {
    fn model_states(&self) -> Vec<[f64; STATE_DIM]> {
        let (cs, dt) = (self.context.cell_size, self.context.step_s);
        self.trajectory.states().iter().map(|s| to_model_state(s, cs, dt)).collect()
    }
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Self {
        let d = config.d_model;
        let mut b = ParamSet::builder(seed);
        let lin = |b: &mut crate::nn::ParamBuilder, name: &str, i: usize, o: usize| {
            (b.add(format!("{name}.w"), i, o, Init::Xavier(1.0)), b.add(format!("{name}.b"), 1, o, Init::Zeros))
        };
        let state = lin(&mut b, "embed.state", STATE_DIM, d);
        let map = lin(&mut b, "embed.map", MAP_TOKEN_DIM, d);
        let region = lin(&mut b, "embed.region", REGION_TOKEN_DIM, d);
        let time = lin(&mut b, "embed.time", TIME_TOKEN_DIM, d);
        let norm = |b: &mut crate::nn::ParamBuilder, name: &str| {
            (b.add(format!("{name}.g"), 1, d, Init::Ones), b.add(format!("{name}.b"), 1, d, Init::Zeros))
        };
        let ln_ctx = norm(&mut b, "ln_ctx");
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let ln1 = norm(&mut b, &format!("l{l}.ln1"));
            let sa = ["q", "k", "v", "o"].map(|p| b.add(format!("l{l}.sa.{p}"), d, d, Init::Xavier(1.0)));
            let ln2 = norm(&mut b, &format!("l{l}.ln2"));
            let ca = ["q", "k", "v", "o"].map(|p| b.add(format!("l{l}.ca.{p}"), d, d, Init::Xavier(1.0)));
            let ln3 = norm(&mut b, &format!("l{l}.ln3"));
            let ff1 = lin(&mut b, &format!("l{l}.ff1"), d, config.ffn);
            let ff2 = lin(&mut b, &format!("l{l}.ff2"), config.ffn, d);
            layers.push(LayerIds { ln1, sa, ln2, ca, ln3, ff1, ff2 });
        }
        let ln_f = norm(&mut b, "ln_f");
        let head = (b.add("head.w", d, STATE_DIM, Init::Xavier(0.1)), b.add("head.b", 1, STATE_DIM, Init::Zeros));
        let ids = Ids { state, map, region, time, ln_ctx, layers, ln_f, head };
        Self { config, params: b.finish(), seed, ids }
    }

    pub fn from_params(config: GeneratorConfig, params: ParamSet, seed: u64) -> Result<Self, CheckpointError> {
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
        let (config, params) = ck.open::<GeneratorConfig>(KIND)?;
        Self::from_params(config, params, ck.seed)
    }

    /// Predicted next model-space state for each input position: row `t` is
    /// the prediction of `x_{t+1}` from inputs `0..=t`.
    pub fn predict_all(&self, inputs: &[[f64; STATE_DIM]], ctx: &ContextTokens) -> Result<Vec<[f64; STATE_DIM]>, GenError> {
        self.check_len(inputs.len())?;
        let mut g = Graph::new();
        let y = self.forward(&mut g, &self.params, inputs, ctx);
        Ok(rows4(g.value(y)))
    }

    /// `p(x_t | x_{0:t−1}, C)` point estimate for the last position of
    /// `prefix`, in world units.
    pub fn forward_step(&self, prefix: &[State], ctx: &ContextTokens) -> Result<State, GenError> {
        if prefix.is_empty() {
            return Err(GenError::EmptyPrefix);
        }
        let inputs: Vec<_> = prefix.iter().map(|s| to_model_state(s, ctx.cell_size, ctx.step_s)).collect();
        let preds = self.predict_all(&inputs, ctx)?;
        Ok(from_model_state(preds.last().expect("non-empty"), ctx.cell_size, ctx.step_s))
    }

    /// Autoregressive rollout of `horizon` steps; `x0` is copied verbatim.
    pub fn rollout(&self, x0: State, ctx: &ContextTokens, horizon: usize) -> Result<Trace, GenError> {
        self.check_len(horizon)?;
        let (cs, dt) = (ctx.cell_size, ctx.step_s);
        let mut inputs = vec![to_model_state(&x0, cs, dt)];
        let mut states = vec![x0];
        for t in 1..=horizon {
            let preds = self.predict_all(&inputs, ctx)?;
            let next = *preds.last().expect("non-empty");
            if next.iter().any(|v| !v.is_finite()) {
                return Err(GenError::NonFinite(t));
            }
            states.push(from_model_state(&next, cs, dt));
            inputs.push(next);
        }
        Trace::new(states, dt).map_err(|_| GenError::NonFinite(horizon))
    }

    fn check_len(&self, n: usize) -> Result<(), GenError> {
        if n > self.config.max_horizon {
            return Err(GenError::TooLong { len: n, max: self.config.max_horizon });
        }
        Ok(())
    }

    /// Mean squared error of next-state predictions from `inputs` against
    /// `targets` (both model space).
    pub fn loss_with(&self, params: &ParamSet, inputs: &[[f64; STATE_DIM]], targets: &[[f64; STATE_DIM]], ctx: &ContextTokens) -> f64 {
        let mut g = Graph::new();
        let l = self.loss_graph(&mut g, params, inputs, targets, ctx);
        g.scalar(l)
    }

    pub fn loss_and_grad(&self, inputs: &[[f64; STATE_DIM]], targets: &[[f64; STATE_DIM]], ctx: &ContextTokens) -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let l = self.loss_graph(&mut g, &self.params, inputs, targets, ctx);
        let grads = g.backward(l);
        let mut flat = vec![0.0; self.params.len()];
        g.param_grads(&grads, &mut flat);
        (g.scalar(l), flat)
    }

    fn loss_graph(&self, g: &mut Graph, params: &ParamSet, inputs: &[[f64; STATE_DIM]], targets: &[[f64; STATE_DIM]], ctx: &ContextTokens) -> Var {
        assert_eq!(inputs.len(), targets.len());
        let y = self.forward(g, params, inputs, ctx);
        let t = g.constant(Tensor::from_vec(targets.len(), STATE_DIM, targets.iter().flatten().copied().collect()));
        let e = g.sub(y, t);
        let e = g.square(e);
        g.mean(e)
    }

    /// Mean teacher-forced position error in meters over `examples`.
    pub fn teacher_forced_error(&self, examples: &[GenExample]) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for ex in examples {
            let z = ex.model_states();
            if z.len() < 2 {
                continue;
            }
            let preds = self.predict_all(&z[..z.len() - 1], &ex.context).expect("within horizon");
            for (p, t) in preds.iter().zip(&z[1..]) {
                sum += (p[0] - t[0]).hypot(p[1] - t[1]) * ex.context.cell_size;
                n += 1;
            }
        }
        if n == 0 { 0.0 } else { sum / n as f64 }
    }

    fn layer_norm(&self, g: &mut Graph, params: &ParamSet, x: Var, ids: (ParamId, ParamId)) -> Var {
        let n = g.normalize_rows(x);
        let gain = g.param(params, ids.0);
        let bias = g.param(params, ids.1);
        let n = g.mul_row(n, gain);
        g.add_row(n, bias)
    }

    fn linear(&self, g: &mut Graph, params: &ParamSet, x: Var, ids: (ParamId, ParamId)) -> Var {
        let w = g.param(params, ids.0);
        let b = g.param(params, ids.1);
        g.linear(x, w, b)
    }

    fn attention(&self, g: &mut Graph, params: &ParamSet, x: Var, src: Var, w: [ParamId; 4], mask: Option<Var>) -> Var {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let dh = d / heads;
        let [wq, wk, wv, wo] = w.map(|id| g.param(params, id));
        let q = g.matmul(x, wq);
        let k = g.matmul(src, wk);
        let v = g.matmul(src, wv);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let kt = g.transpose(kh);
            let s = g.matmul(qh, kt);
            let mut s = g.scale(s, 1.0 / (dh as f64).sqrt());
            if let Some(m) = mask {
                s = g.add(s, m);
            }
            let p = g.softmax_rows(s);
            outs.push(g.matmul(p, vh));
        }
        let o = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        g.matmul(o, wo)
    }

    fn embed_context(&self, g: &mut Graph, params: &ParamSet, ctx: &ContextTokens) -> Var {
        let mut parts = Vec::with_capacity(3);
        let groups: [(&[f64], usize, usize, (ParamId, ParamId)); 3] = [
            (ctx.map.as_flattened(), ctx.map.len(), MAP_TOKEN_DIM, self.ids.map),
            (ctx.regions.as_flattened(), ctx.regions.len(), REGION_TOKEN_DIM, self.ids.region),
            (ctx.time.as_flattened(), ctx.time.len(), TIME_TOKEN_DIM, self.ids.time),
        ];
        for (data, rows, cols, ids) in groups {
            if rows == 0 {
                continue;
            }
            let x = g.constant(Tensor::from_vec(rows, cols, data.to_vec()));
            parts.push(self.linear(g, params, x, ids));
        }
        let c = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
        self.layer_norm(g, params, c, self.ids.ln_ctx)
    }

    fn forward(&self, g: &mut Graph, params: &ParamSet, inputs: &[[f64; STATE_DIM]], ctx: &ContextTokens) -> Var {
        let n = inputs.len();
        let d = self.config.d_model;
        let raw = g.constant(Tensor::from_vec(n, STATE_DIM, inputs.iter().flatten().copied().collect()));
        let scale = g.constant(Tensor::from_vec(1, STATE_DIM, vec![POS_SCALE, POS_SCALE, 1.0, 1.0]));
        let x = g.mul_row(raw, scale);
        let x = self.linear(g, params, x, self.ids.state);
        let pe = g.constant(positional_encoding(n, d));
        let mut h = g.add(x, pe);
        let c = self.embed_context(g, params, ctx);
        let mask = g.constant(causal_mask(n));
        for l in &self.ids.layers {
            let a = self.layer_norm(g, params, h, l.ln1);
            let a = self.attention(g, params, a, a, l.sa, Some(mask));
            h = g.add(h, a);
            let a = self.layer_norm(g, params, h, l.ln2);
            let a = self.attention(g, params, a, c, l.ca, None);
            h = g.add(h, a);
            let a = self.layer_norm(g, params, h, l.ln3);
            let a = self.linear(g, params, a, l.ff1);
            let a = g.tanh(a);
            let a = self.linear(g, params, a, l.ff2);
            h = g.add(h, a);
        }
        let h = self.layer_norm(g, params, h, self.ids.ln_f);
        let delta = self.linear(g, params, h, self.ids.head);
        g.add(raw, delta)
    }
}

fn rows4(t: &Tensor) -> Vec<[f64; STATE_DIM]> {
    t.data.chunks(STATE_DIM).map(|r| [r[0], r[1], r[2], r[3]]).collect()
}

pub fn positional_encoding(n: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(n, d);
    for pos in 0..n {
        for i in 0..d / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            t.set(pos, 2 * i, (pos as f64 * freq).sin());
            t.set(pos, 2 * i + 1, (pos as f64 * freq).cos());
        }
    }
    t
}

/// `0` on and below the diagonal, `−inf` above.
pub fn causal_mask(n: usize) -> Tensor {
    let mut t = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            t.set(i, j, f64::NEG_INFINITY);
        }
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenTrainConfig {
    pub model: GeneratorConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: SamplingSchedule,
    /// Refinement passes used to build self-fed inputs. With `p` passes the
    /// first `p` self-fed positions match a true autoregressive rollout.
    pub sampling_passes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        Self {
            model: GeneratorConfig::default(),
            optimizer: OptimizerConfig::Adam { lr: 3e-3 },
            schedule: SamplingSchedule::default(),
            sampling_passes: 1,
            epochs: 60,
            batch_size: 8,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

/// Inputs for one training sequence: ground truth where `mask` is false,
/// the model's own prediction of that state elsewhere.
pub fn mixed_inputs(
    model: &Generator,
    truth: &[[f64; STATE_DIM]],
    mask: &[bool],
    ctx: &ContextTokens,
    passes: usize,
) -> Result<Vec<[f64; STATE_DIM]>, GenError> {
    let mut inputs = truth.to_vec();
    if !mask.iter().any(|&m| m) {
        return Ok(inputs);
    }
    for _ in 0..passes.max(1) {
        let preds = model.predict_all(&inputs, ctx)?;
        let mut next = truth.to_vec();
        for t in 1..next.len() {
            if mask[t] {
                next[t] = preds[t - 1];
            }
        }
        inputs = next;
    }
    Ok(inputs)
}

/// Trains with MSE on next-state predictions and scheduled sampling.
pub fn train(
    examples: &[GenExample],
    cfg: &GenTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(Generator, TrainReport), TrainError> {
    if examples.iter().all(|e| e.trajectory.len() < 2) {
        return Err(TrainError::Empty);
    }
    let too_long = examples.iter().map(|e| e.trajectory.horizon()).max().unwrap_or(0);
    if too_long > cfg.model.max_horizon {
        return Err(TrainError::BadConfig(format!("trajectory horizon {too_long} exceeds model horizon {}", cfg.model.max_horizon)));
    }
    if cfg.model.heads == 0 || cfg.model.d_model % cfg.model.heads != 0 {
        return Err(TrainError::BadConfig("d_model must be a multiple of heads".into()));
    }
    let mut model = Generator::new(cfg.model, cfg.seed);
    let mut opt = cfg.optimizer.build(model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e6e_u64);
    let data: Vec<(Vec<[f64; STATE_DIM]>, &ContextTokens)> = examples
        .iter()
        .filter(|e| e.trajectory.len() >= 2)
        .map(|e| (e.model_states(), &e.context))
        .collect();
    let split = |z: &[[f64; STATE_DIM]]| (z[..z.len() - 1].to_vec(), z[1..].to_vec());

    let initial = data
        .iter()
        .map(|(z, c)| {
            let (i, t) = split(z);
            model.loss_with(&model.params, &i, &t, c)
        })
        .sum::<f64>()
        / data.len() as f64;
    let mut report = TrainReport { initial_loss: initial, epoch_losses: Vec::with_capacity(cfg.epochs) };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let bs = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        let eps = cfg.schedule.epsilon(epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let mut grad = vec![0.0; model.params.len()];
            for &k in chunk {
                let (z, ctx) = &data[k];
                let (truth_in, targets) = split(z);
                let mask = draw_feed_mask(&mut rng, truth_in.len(), eps);
                let inputs = mixed_inputs(&model, &truth_in, &mask, ctx, cfg.sampling_passes)
                    .map_err(|e| TrainError::BadConfig(e.to_string()))?;
                let (l, gk) = model.loss_and_grad(&inputs, &targets, ctx);
                total += l;
                for (a, b) in grad.iter_mut().zip(&gk) {
                    *a += b / chunk.len() as f64;
                }
            }
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut grad, c);
            }
            opt.step(&mut model.params.values, &grad);
        }
        let epoch_loss = total / data.len() as f64;
        if !epoch_loss.is_finite() || epoch_loss > 10.0 * initial.max(1e-12) || !model.params.is_finite() {
            return Err(TrainError::Diverged { epoch, loss: epoch_loss, initial });
        }
        report.epoch_losses.push(epoch_loss);
        on_epoch(epoch, epoch_loss);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnf::to_dnf;
    use crate::maze::{Cell, MazeMap};
    use crate::stl::parse;

    fn setup() -> (MazeMap, Branch) {
        let mut m = MazeMap::open(5, 5, 12.0, Cell::new(0, 0)).unwrap();
        m.insert_region("A", vec![Cell::new(4, 4)]).unwrap();
        m.insert_region("B", vec![Cell::new(2, 2)]).unwrap();
        let phi = parse("F[0,20] A and G[0,30] not B", &m).unwrap().formula;
        let b = to_dnf(&phi).unwrap().remove(0);
        (m, b)
    }

    fn small() -> Generator {
        Generator::new(GeneratorConfig { d_model: 8, layers: 1, heads: 2, ffn: 8, max_horizon: 64 }, 3)
    }

    #[test]
    fn token_count() {
        let (m, b) = setup();
        let ctx = encode_context(&m, &b, &[10, 0], 1.0);
        assert_eq!(ctx.len(), 25 + 2 + 2);
        assert_eq!(ctx, encode_context(&m, &b, &[10, 0], 1.0));
        assert_eq!(ctx.regions[0][..2], [1.0, 0.0]);
        assert_eq!(ctx.regions[1][..2], [0.0, 1.0]);
    }

    #[test]
    fn swapping_regions_permutes_rows() {
        let (m, b) = setup();
        let r1 = vec![("A".to_string(), RegionRole::Target), ("B".to_string(), RegionRole::Avoid)];
        let r2 = vec![r1[1].clone(), r1[0].clone()];
        let c1 = encode_context_with(&m, &r1, &b.subtasks, &[10, 0], 1.0);
        let c2 = encode_context_with(&m, &r2, &b.subtasks, &[10, 0], 1.0);
        assert_eq!(c1.map, c2.map);
        assert_eq!(c1.time, c2.time);
        assert_eq!(c1.regions[0], c2.regions[1]);
        assert_eq!(c1.regions[1], c2.regions[0]);
    }

    #[test]
    fn causal_prefix_invariance_is_bit_exact() {
        let (m, b) = setup();
        let ctx = encode_context(&m, &b, &[10, 0], 1.0);
        let gen = Generator::new(GeneratorConfig::default(), 1);
        let mut inputs: Vec<[f64; 4]> = (0..12).map(|t| [0.5 + 0.1 * t as f64, 0.5, 0.1, 0.0]).collect();
        let base = gen.predict_all(&inputs, &ctx).unwrap();
        for t in 6..12 {
            inputs[t] = [1e3, -7.0, f64::MAX / 1e10, 3.0];
        }
        let perturbed = gen.predict_all(&inputs, &ctx).unwrap();
        for t in 0..6 {
            assert_eq!(base[t].map(f64::to_bits), perturbed[t].map(f64::to_bits));
        }
    }

    #[test]
    fn forward_step_matches_last_row() {
        let (m, b) = setup();
        let ctx = encode_context(&m, &b, &[10, 0], 1.0);
        let gen = small();
        let prefix: Vec<State> = (0..4).map(|t| State { pos: [6.0 + t as f64, 6.0], aux: [1.0, 0.0] }).collect();
        let one = gen.forward_step(&prefix, &ctx).unwrap();
        let z: Vec<_> = prefix.iter().map(|s| to_model_state(s, 12.0, 1.0)).collect();
        let all = gen.predict_all(&z, &ctx).unwrap();
        assert_eq!(one, from_model_state(&all[3], 12.0, 1.0));
        assert_eq!(gen.forward_step(&[], &ctx), Err(GenError::EmptyPrefix));
    }

    #[test]
    fn rollout_contract() {
        let (m, b) = setup();
        let ctx = encode_context(&m, &b, &[10, 0], 1.0);
        let gen = small();
        let x0 = State { pos: [6.1, 6.3], aux: [0.0, 0.0] };
        let r = gen.rollout(x0, &ctx, 0).unwrap();
        assert_eq!(r.states(), &[x0]);
        let r1 = gen.rollout(x0, &ctx, 8).unwrap();
        let r2 = gen.rollout(x0, &ctx, 8).unwrap();
        assert_eq!(r1.len(), 9);
        assert_eq!(r1.states()[0], x0);
        assert_eq!(r1, r2);
        assert!(matches!(gen.rollout(x0, &ctx, 65), Err(GenError::TooLong { .. })));
    }

    #[test]
    fn schedule_endpoints() {
        let s = SamplingSchedule::default();
        assert_eq!(s.epsilon(0, 10), 0.0);
        assert_eq!(s.epsilon(9, 10), 0.5);
        assert!((s.epsilon(3, 7) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn eps_zero_is_teacher_forcing_and_eps_one_with_full_passes_is_autoregressive() {
        let (m, b) = setup();
        let ctx = encode_context(&m, &b, &[10, 0], 1.0);
        let gen = small();
        let truth: Vec<[f64; 4]> = (0..6).map(|t| [0.5 + 0.2 * t as f64, 0.5, 0.2, 0.0]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mask = draw_feed_mask(&mut rng, truth.len(), 0.0);
        assert_eq!(mixed_inputs(&gen, &truth, &mask, &ctx, 1).unwrap(), truth);

        let mask = draw_feed_mask(&mut rng, truth.len(), 1.0);
        assert_eq!(mask, vec![false, true, true, true, true, true]);
        let inputs = mixed_inputs(&gen, &truth, &mask, &ctx, truth.len()).unwrap();
        let x0 = from_model_state(&truth[0], 12.0, 1.0);
        let roll = gen.rollout(x0, &ctx, truth.len() - 1).unwrap();
        for (t, s) in roll.states().iter().enumerate().skip(1) {
            let z = to_model_state(s, 12.0, 1.0);
            for k in 0..4 {
                assert!((z[k] - inputs[t][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn feed_mask_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let eps = 0.3;
        let n = 10_000;
        let mask = draw_feed_mask(&mut rng, n + 1, eps);
        let gt = mask[1..].iter().filter(|m| !**m).count() as f64;
        let p = 1.0 - eps;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((gt - n as f64 * p).abs() < 3.0 * sigma);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (m, b) = setup();
        let ctx = encode_context(&m, &b, &[10, 0], 1.0);
        let gen = small();
        let z: Vec<[f64; 4]> = (0..5).map(|t| [0.5 + 0.2 * t as f64, 0.5 + 0.05 * t as f64, 0.2, 0.05]).collect();
        let (inp, tgt) = (&z[..4], &z[1..]);
        let (_, grad) = gen.loss_and_grad(inp, tgt, &ctx);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 1e-6;
        for _ in 0..20 {
            let i = rng.gen_range(0..gen.params.len());
            let mut p = gen.params.clone();
            p.values[i] += h;
            let up = gen.loss_with(&p, inp, tgt, &ctx);
            p.values[i] -= 2.0 * h;
            let down = gen.loss_with(&p, inp, tgt, &ctx);
            let num = (up - down) / (2.0 * h);
            let err = crate::nn::relative_error(grad[i], num, 1e-7);
            assert!(err < 1e-4, "param {i}: {} vs {num}", grad[i]);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let gen = small();
        let back = Generator::from_checkpoint(&Checkpoint::from_json(&gen.to_checkpoint().to_json()).unwrap()).unwrap();
        assert_eq!(back.params, gen.params);
        assert_eq!(back.config, gen.config);
    }
}
