//! Closed-loop execution of nominal trajectories under double-integrator and
//! unicycle dynamics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maze::MazeMap;
use crate::stl::{eval_robustness, Formula, State, Trace};

/// A nominal trajectory: positions (and optional velocities in `aux`)
/// sampled once per planning step.
pub type Trajectory = Trace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsKind {
    Di,
    Uni,
}

impl std::str::FromStr for DynamicsKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "di" => Ok(DynamicsKind::Di),
            "uni" => Ok(DynamicsKind::Uni),
            other => Err(format!("unknown dynamics `{other}` (expected di or uni)")),
        }
    }
}

impl std::fmt::Display for DynamicsKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DynamicsKind::Di => "DI",
            DynamicsKind::Uni => "UNI",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub a_max: f64,
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { a_max: 4.0, v_max: 3.0, omega_max: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsModel {
    pub kind: DynamicsKind,
    pub dt: f64,
    pub limits: Limits,
}

impl Default for DynamicsModel {
    fn default() -> Self {
        Self::new(DynamicsKind::Di)
    }
}

impl DynamicsModel {
    pub fn new(kind: DynamicsKind) -> Self {
        Self { kind, dt: 0.1, limits: Limits::default() }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let l = &self.limits;
        if !(self.dt > 0.0 && l.a_max > 0.0 && l.v_max > 0.0 && l.omega_max > 0.0) {
            return Err(DynamicsError::BadModel);
        }
        Ok(())
    }
}

/// Controller gains. `kp`/`kd` drive the double integrator; the unicycle
/// steers towards a point `lookahead_s` ahead on the nominal with heading
/// gain `k_heading`, and sets speed to the projected distance divided by
/// `lookahead_s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Gains {
    pub kp: f64,
    pub kd: f64,
    pub lookahead_s: f64,
    pub k_heading: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self { kp: 2.0, kd: 3.0, lookahead_s: 0.5, k_heading: 4.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub model: DynamicsModel,
    pub gains: Gains,
}

impl DynamicsConfig {
    pub fn new(kind: DynamicsKind) -> Self {
        Self { model: DynamicsModel::new(kind), gains: Gains::default() }
    }
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self::new(DynamicsKind::Di)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("dynamics limits and dt must be positive")]
    BadModel,
    #[error("nominal step {nominal}s is not a positive multiple of controller dt {dt}s")]
    StepMismatch { nominal: f64, dt: f64 },
}

/// Double-integrator state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiState {
    pub p: [f64; 2],
    pub v: [f64; 2],
}

/// Unicycle state; `theta` in `(−π, π]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniState {
    pub p: [f64; 2],
    pub theta: f64,
}

pub fn clamp_accel(u: [f64; 2], limits: &Limits) -> [f64; 2] {
    [u[0].clamp(-limits.a_max, limits.a_max), u[1].clamp(-limits.a_max, limits.a_max)]
}

pub fn clamp_uni(u: [f64; 2], limits: &Limits) -> [f64; 2] {
    [u[0].clamp(0.0, limits.v_max), u[1].clamp(-limits.omega_max, limits.omega_max)]
}

/// Exact zero-order-hold step; `u` is clamped first.
pub fn step_di(s: DiState, u: [f64; 2], model: &DynamicsModel) -> DiState {
    let u = clamp_accel(u, &model.limits);
    let dt = model.dt;
    let mut out = s;
    for k in 0..2 {
        out.p[k] = s.p[k] + s.v[k] * dt + 0.5 * u[k] * dt * dt;
        out.v[k] = s.v[k] + u[k] * dt;
    }
    out
}

/// Forward-Euler step with `u = (v, ω)` clamped first.
pub fn step_uni(s: UniState, u: [f64; 2], model: &DynamicsModel) -> UniState {
    let [v, w] = clamp_uni(u, &model.limits);
    let dt = model.dt;
    UniState {
        p: [s.p[0] + v * s.theta.cos() * dt, s.p[1] + v * s.theta.sin() * dt],
        theta: wrap_angle(s.theta + w * dt),
    }
}

/// Wraps into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutedRollout {
    /// Executed states sampled at the nominal's planning steps.
    pub trace: Trace,
    /// Every controller-rate position, including the initial one.
    pub fine_positions: Vec<[f64; 2]>,
    /// Applied (clamped) controls, one per controller step.
    pub controls: Vec<[f64; 2]>,
    /// Distance to the interpolated reference after each controller step.
    pub tracking_error: Vec<f64>,
    pub collision: bool,
}

impl ExecutedRollout {
    pub fn max_tracking_error(&self) -> f64 {
        self.tracking_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Linear interpolation of the nominal at fractional planning step `s`,
/// held at the last point beyond the horizon. Returns position and the
/// velocity of the current segment.
fn reference(nominal: &Trajectory, s: f64) -> ([f64; 2], [f64; 2]) {
    let n = nominal.len();
    if n == 1 || s >= (n - 1) as f64 {
        return (nominal.position(n - 1), [0.0, 0.0]);
    }
    let s = s.max(0.0);
    let k = s.floor() as usize;
    let frac = s - k as f64;
    let (a, b) = (nominal.position(k), nominal.position(k + 1));
    let step = nominal.dt();
    (
        [a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])],
        [(b[0] - a[0]) / step, (b[1] - a[1]) / step],
    )
}

fn substeps(nominal: &Trajectory, model: &DynamicsModel) -> Result<usize, DynamicsError> {
    model.validate()?;
    let ratio = nominal.dt() / model.dt;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(DynamicsError::StepMismatch { nominal: nominal.dt(), dt: model.dt });
    }
    Ok(n as usize)
}

/// Runs the tracking controller over the full nominal horizon from rest at
/// the nominal's first point. Collisions are checked at every controller
/// step when a map is given.
pub fn track(
    nominal: &Trajectory,
    model: &DynamicsModel,
    gains: &Gains,
    map: Option<&MazeMap>,
) -> Result<ExecutedRollout, DynamicsError> {
    let sub = substeps(nominal, model)?;
    let total = nominal.horizon() * sub;
    let p0 = nominal.position(0);
    let mut fine = Vec::with_capacity(total + 1);
    let mut controls = Vec::with_capacity(total);
    let mut errors = Vec::with_capacity(total);
    let mut states = vec![State { pos: p0, aux: [0.0, 0.0] }];
    fine.push(p0);
    let free = |p: [f64; 2]| map.map_or(true, |m| m.is_collision_free(p));
    let mut collision = !free(p0);

    match model.kind {
        DynamicsKind::Di => {
            let mut s = DiState { p: p0, v: [0.0, 0.0] };
            for i in 0..total {
                let (p_ref, v_ref) = reference(nominal, i as f64 / sub as f64);
                let u = [
                    gains.kp * (p_ref[0] - s.p[0]) + gains.kd * (v_ref[0] - s.v[0]),
                    gains.kp * (p_ref[1] - s.p[1]) + gains.kd * (v_ref[1] - s.v[1]),
                ];
                let u = clamp_accel(u, &model.limits);
                s = step_di(s, u, model);
                controls.push(u);
                let (r, _) = reference(nominal, (i + 1) as f64 / sub as f64);
                errors.push(dist(s.p, r));
                fine.push(s.p);
                collision |= !free(s.p);
                if (i + 1) % sub == 0 {
                    states.push(State { pos: s.p, aux: s.v });
                }
            }
        }
        DynamicsKind::Uni => {
            let theta0 = initial_heading(nominal);
            states[0].aux = [theta0, 0.0];
            let mut s = UniState { p: p0, theta: theta0 };
            let look = gains.lookahead_s / nominal.dt();
            for i in 0..total {
                let now = i as f64 / sub as f64;
                let (target, _) = reference(nominal, now + look);
                let d = [target[0] - s.p[0], target[1] - s.p[1]];
                let along = d[0] * s.theta.cos() + d[1] * s.theta.sin();
                let (v, w) = if d[0].hypot(d[1]) < 1e-9 {
                    (0.0, 0.0)
                } else {
                    let alpha = wrap_angle(d[1].atan2(d[0]) - s.theta);
                    (along / gains.lookahead_s, gains.k_heading * alpha)
                };
                let u = clamp_uni([v, w], &model.limits);
                s = step_uni(s, u, model);
                controls.push(u);
                let (r, _) = reference(nominal, (i + 1) as f64 / sub as f64);
                errors.push(dist(s.p, r));
                fine.push(s.p);
                collision |= !free(s.p);
                if (i + 1) % sub == 0 {
                    states.push(State { pos: s.p, aux: [s.theta, u[0]] });
                }
            }
        }
    }
    let trace = Trace::new(states, nominal.dt()).expect("executed states are finite");
    Ok(ExecutedRollout { trace, fine_positions: fine, controls, tracking_error: errors, collision })
}

fn initial_heading(nominal: &Trajectory) -> f64 {
    let p0 = nominal.position(0);
    (1..nominal.len())
        .map(|k| nominal.position(k))
        .find(|p| dist(*p, p0) > 1e-9)
        .map_or(0.0, |p| wrap_angle((p[1] - p0[1]).atan2(p[0] - p0[0])))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub success: bool,
    pub rho: f64,
    pub collision: bool,
}

/// Success requires positive robustness of `phi` on the executed trace and
/// no collision at any controller step.
pub fn evaluate_rollout(r: &ExecutedRollout, phi: &Formula, map: &MazeMap) -> Evaluation {
    let rho = eval_robustness(phi, &r.trace, 0, map);
    let collision = r.collision || r.fine_positions.iter().any(|&p| !map.is_collision_free(p));
    Evaluation { success: rho > 0.0 && !collision, rho, collision }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::Cell;
    use crate::stl::parse;

    fn di() -> DynamicsModel {
        DynamicsModel::new(DynamicsKind::Di)
    }

    fn uni() -> DynamicsModel {
        DynamicsModel::new(DynamicsKind::Uni)
    }

    #[test]
    fn di_step_examples() {
        let s = DiState { p: [1.0, 2.0], v: [0.0, 0.0] };
        assert_eq!(step_di(s, [0.0, 0.0], &di()), s);
        let s = step_di(DiState { p: [0.0, 0.0], v: [1.0, 0.0] }, [0.0, 0.0], &di());
        assert!((s.p[0] - 0.1).abs() < 1e-15 && s.p[1] == 0.0);
        let mut s = DiState { p: [0.0, 0.0], v: [0.0, 0.0] };
        for _ in 0..10 {
            s = step_di(s, [1.0, 0.0], &di());
        }
        assert!((s.p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn di_clamps_accel() {
        let s = step_di(DiState { p: [0.0; 2], v: [0.0; 2] }, [100.0, -100.0], &di());
        assert!((s.v[0] - 0.4).abs() < 1e-12 && (s.v[1] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn uni_step_examples() {
        let s = step_uni(UniState { p: [1.0, 1.0], theta: 0.0 }, [0.0, 1.0], &uni());
        assert_eq!(s.p, [1.0, 1.0]);
        assert!((s.theta - 0.1).abs() < 1e-15);
        let s = step_uni(UniState { p: [0.0, 0.0], theta: 0.0 }, [1.0, 0.0], &uni());
        assert!((s.p[0] - 0.1).abs() < 1e-15 && s.p[1] == 0.0);
    }

    #[test]
    fn uni_circle_closes() {
        let m = uni();
        let n = (2.0 * PI / m.dt).round() as usize;
        let mut s = UniState { p: [0.0, 0.0], theta: 0.0 };
        for _ in 0..n {
            s = step_uni(s, [1.0, 1.0], &m);
            assert!(s.theta > -PI && s.theta <= PI);
        }
        assert!(s.p[0].hypot(s.p[1]) < 0.02);
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_nominal_is_an_equilibrium() {
        let nominal = Trace::from_positions(&[[6.0, 6.0]; 4], 1.0).unwrap();
        let r = track(&nominal, &di(), &Gains::default(), None).unwrap();
        assert!(r.controls.iter().all(|u| *u == [0.0, 0.0]));
        assert!(r.tracking_error.iter().all(|&e| e == 0.0));
        assert_eq!(r.trace.horizon(), 3);
    }

    #[test]
    fn di_tracks_a_straight_line() {
        let pts: Vec<[f64; 2]> = (0..=20).map(|k| [6.0 + 2.4 * k as f64, 6.0]).collect();
        let nominal = Trace::from_positions(&pts, 1.0).unwrap();
        let r = track(&nominal, &di(), &Gains::default(), None).unwrap();
        assert!(r.max_tracking_error() < 0.25 * 12.0, "{}", r.max_tracking_error());
        assert_eq!(r.controls.len(), 200);
    }

    #[test]
    fn uni_lags_but_completes_when_nominal_is_too_fast() {
        let pts: Vec<[f64; 2]> = (0..=10).map(|k| [10.0 * k as f64, 0.0]).collect();
        let nominal = Trace::from_positions(&pts, 1.0).unwrap();
        let r = track(&nominal, &uni(), &Gains::default(), None).unwrap();
        assert_eq!(r.trace.horizon(), 10);
        assert!(r.controls.iter().all(|u| u[0] <= 3.0 && u[0] >= 0.0 && u[1].abs() <= 2.0));
        assert!(r.tracking_error.last().unwrap() > &10.0);
    }

    #[test]
    fn mismatched_step_is_rejected() {
        let nominal = Trace::from_positions(&[[0.0, 0.0]; 3], 0.25).unwrap();
        assert!(matches!(track(&nominal, &di(), &Gains::default(), None), Err(DynamicsError::StepMismatch { .. })));
    }

    #[test]
    fn evaluation_examples() {
        let mut map = MazeMap::open(3, 3, 12.0, Cell::new(0, 0)).unwrap();
        map.insert_region("A", vec![Cell::new(0, 2)]).unwrap();
        let phi = parse("F[0,5] A", &map).unwrap().formula;
        // Straight along the top row into A's centre at step 4.
        let pts: Vec<[f64; 2]> = (0..=5).map(|k| [6.0 + 6.0 * (k.min(4) as f64), 6.0]).collect();
        let nominal = Trace::from_positions(&pts, 1.0).unwrap();
        let fake = ExecutedRollout {
            trace: nominal.clone(),
            fine_positions: pts.clone(),
            controls: vec![],
            tracking_error: vec![],
            collision: false,
        };
        let e = evaluate_rollout(&fake, &phi, &map);
        // Brute-force: max over t of min face distance to A = [24,36]x[0,12].
        let oracle = pts
            .iter()
            .map(|p| (p[0] - 24.0).min(36.0 - p[0]).min(p[1]).min(12.0 - p[1]))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(e.success);
        assert_eq!(e.rho, oracle);
        assert_eq!(e.rho, 6.0);

        map.set_occupied(Cell::new(0, 1), true);
        let e = evaluate_rollout(&fake, &phi, &map);
        assert!(!e.success && e.collision && e.rho > 0.0);
    }
}
