use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::Tensor;

/// Distribution for fresh chain starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaseSampler {
    Uniform { low: Vec<f64>, high: Vec<f64> },
    StandardNormal { dim: usize },
}

impl BaseSampler {
    /// Uniform over the bounding box of `data`, widened by `margin` times
    /// its extent on each side.
    pub fn bounding_box(data: &Tensor, margin: f64) -> Result<Self> {
        if data.rows() == 0 {
            return Err(invalid("bounding box of an empty dataset"));
        }
        let d = data.cols();
        let mut low = vec![f64::INFINITY; d];
        let mut high = vec![f64::NEG_INFINITY; d];
        for row in data.iter_rows() {
            for j in 0..d {
                low[j] = low[j].min(row[j]);
                high[j] = high[j].max(row[j]);
            }
        }
        for j in 0..d {
            let w = (high[j] - low[j]).max(1e-6);
            low[j] -= margin * w;
            high[j] += margin * w;
        }
        Ok(BaseSampler::Uniform { low, high })
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseSampler::Uniform { low, .. } => low.len(),
            BaseSampler::StandardNormal { dim } => *dim,
        }
    }

    pub fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            BaseSampler::Uniform { low, high } => low
                .iter()
                .zip(high)
                .map(|(&l, &h)| Uniform::new(l, h).expect("low < high").sample(rng))
                .collect(),
            BaseSampler::StandardNormal { dim } => (0..*dim).map(|_| StandardNormal.sample(rng)).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor {
        let d = self.dim();
        let data: Vec<f64> = (0..n).flat_map(|_| self.sample_row(rng)).collect();
        Tensor::raw(n, d, data)
    }
}

/// Chain starts drawn from a [`ReplayBuffer`].
#[derive(Clone, Debug)]
pub struct BufferDraw {
    pub x: Tensor,
    /// Pool slot each row came from; final states are written back here.
    pub slots: Vec<usize>,
    /// How many rows were fresh base samples.
    pub reinitialized: usize,
}

/// Persistent pool of SGLD chain states.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    reinit_prob: f64,
    base: Option<BaseSampler>,
    states: Vec<Vec<f64>>,
    dim: usize,
}

impl ReplayBuffer {
    /// Pool filled to capacity with base samples.
    pub fn new<R: Rng + ?Sized>(capacity: usize, reinit_prob: f64, base: BaseSampler, rng: &mut R) -> Result<Self> {
        check_prob(reinit_prob)?;
        if capacity == 0 {
            return Err(invalid("replay buffer capacity must be positive"));
        }
        let states = (0..capacity).map(|_| base.sample_row(rng)).collect();
        Ok(Self { capacity, reinit_prob, dim: base.dim(), base: Some(base), states })
    }

    /// Pool seeded with explicit states; without a base sampler no row is
    /// ever reinitialized.
    pub fn from_states(states: Vec<Vec<f64>>, capacity: usize, reinit_prob: f64, base: Option<BaseSampler>) -> Result<Self> {
        check_prob(reinit_prob)?;
        let dim = match (states.first(), &base) {
            (Some(s), _) => s.len(),
            (None, Some(b)) => b.dim(),
            (None, None) => 0,
        };
        if states.len() > capacity || states.iter().any(|s| s.len() != dim) {
            return Err(invalid("initial states exceed capacity or have ragged widths"));
        }
        Ok(Self { capacity, reinit_prob, base, states, dim })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn reinit_prob(&self) -> f64 {
        self.reinit_prob
    }

    pub fn base(&self) -> Option<&BaseSampler> {
        self.base.as_ref()
    }

    /// Draws `n` chain starts uniformly from the pool; each is replaced by a
    /// fresh base sample with probability `reinit_prob`.
    pub fn draw<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Result<BufferDraw> {
        if self.states.is_empty() && self.base.is_none() {
            return Err(Error::InvalidArgument("replay buffer is empty and has no base sampler".into()));
        }
        let mut data = Vec::with_capacity(n * self.dim);
        let mut slots = Vec::with_capacity(n);
        let mut reinitialized = 0;
        for _ in 0..n {
            if self.states.len() < self.capacity && self.base.is_some() {
                // pool still filling
                let row = self.base.as_ref().expect("checked").sample_row(rng);
                self.states.push(row.clone());
                slots.push(self.states.len() - 1);
                data.extend(row);
                reinitialized += 1;
                continue;
            }
            let slot = rng.random_range(0..self.states.len());
            slots.push(slot);
            match &self.base {
                Some(b) if rng.random::<f64>() < self.reinit_prob => {
                    data.extend(b.sample_row(rng));
                    reinitialized += 1;
                }
                _ => data.extend(&self.states[slot]),
            }
        }
        Ok(BufferDraw { x: Tensor::raw(n, self.dim, data), slots, reinitialized })
    }

    /// Stores final chain states back into their slots.
    pub fn write_back(&mut self, draw: &BufferDraw, states: &Tensor) -> Result<()> {
        if states.rows() != draw.slots.len() || states.cols() != self.dim {
            return Err(Error::Shape("chain states do not match the draw".into()));
        }
        for (i, &s) in draw.slots.iter().enumerate() {
            self.states[s].copy_from_slice(states.row(i));
        }
        Ok(())
    }
}

fn check_prob(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid(format!("reinit probability {p} outside [0, 1]")))
    }
}
