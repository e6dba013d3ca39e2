use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Handle to one named parameter block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±gain·sqrt(6 / (rows + cols))`.
    Xavier(f64),
}

/// Flat parameter vector plus the shape table that slices it into blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub shapes: Vec<ParamShape>,
    pub values: Vec<f64>,
}

impl ParamSet {
    pub fn builder(seed: u64) -> ParamBuilder {
        ParamBuilder { set: ParamSet { shapes: Vec::new(), values: Vec::new() }, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape(&self, id: ParamId) -> &ParamShape {
        &self.shapes[id.0]
    }

    pub fn slice(&self, id: ParamId) -> &[f64] {
        let s = &self.shapes[id.0];
        &self.values[s.offset..s.offset + s.len()]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.shapes.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.shapes == other.shapes && self.values.len() == other.values.len()
    }
}

pub struct ParamBuilder {
    set: ParamSet,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> ParamId {
        let offset = self.set.values.len();
        let bound = match init {
            Init::Xavier(gain) => gain * (6.0 / (rows + cols) as f64).sqrt(),
            _ => 0.0,
        };
        for _ in 0..rows * cols {
            let v = match init {
                Init::Zeros => 0.0,
                Init::Ones => 1.0,
                Init::Xavier(_) => self.rng.gen_range(-bound..=bound),
            };
            self.set.values.push(v);
        }
        self.set.shapes.push(ParamShape { name: name.into(), rows, cols, offset });
        ParamId(self.set.shapes.len() - 1)
    }

    pub fn finish(self) -> ParamSet {
        self.set
    }
}
