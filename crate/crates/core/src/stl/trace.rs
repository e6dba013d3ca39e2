use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One sample of a planar signal: position in meters plus two auxiliary
/// components (velocity for point-mass models, heading and speed for the unicycle).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub pos: [f64; 2],
    pub aux: [f64; 2],
}

impl State {
    pub fn at(pos: [f64; 2]) -> Self {
        Self { pos, aux: [0.0; 2] }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("trace must contain at least one state")]
    Empty,
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("non-finite position at step {0}")]
    NonFinite(usize),
}

/// Uniformly sampled finite trajectory `x_0..x_T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    states: Vec<State>,
    dt: f64,
}

impl Trace {
    pub fn new(states: Vec<State>, dt: f64) -> Result<Self, TraceError> {
        if states.is_empty() {
            return Err(TraceError::Empty);
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TraceError::BadStep(dt));
        }
        if let Some(i) = states.iter().position(|s| !(s.pos[0].is_finite() && s.pos[1].is_finite())) {
            return Err(TraceError::NonFinite(i));
        }
        Ok(Self { states, dt })
    }

    pub fn from_positions(points: &[[f64; 2]], dt: f64) -> Result<Self, TraceError> {
        Self::new(points.iter().copied().map(State::at).collect(), dt)
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Final step index `T`.
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn position(&self, t: usize) -> [f64; 2] {
        self.states[t].pos
    }
}
