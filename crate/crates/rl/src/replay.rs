//! Uniform experience replay over a fixed-capacity ring.

use rand::Rng;

use crate::nn::Matrix;
use crate::{Result, RlError};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// Normalized action in `[-1, 1]`.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// 1 when the successor is terminal and must not be bootstrapped.
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn rows(&self, range: std::ops::Range<usize>) -> Batch {
        Batch {
            obs: self.obs.rows_slice(range.clone()),
            actions: self.actions.rows_slice(range.clone()),
            rewards: self.rewards[range.clone()].to_vec(),
            next_obs: self.next_obs.rows_slice(range.clone()),
            dones: self.dones[range].to_vec(),
        }
    }
}

/// Transitions are stored in flat arrays; once full, the oldest is
/// overwritten.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    dones: Vec<bool>,
    next: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 || obs_dim == 0 || action_dim == 0 {
            return Err(RlError::Config("replay capacity and dimensions must be positive".into()));
        }
        Ok(Self {
            capacity,
            obs_dim,
            action_dim,
            obs: vec![0.0; capacity * obs_dim],
            actions: vec![0.0; capacity * action_dim],
            rewards: vec![0.0; capacity],
            next_obs: vec![0.0; capacity * obs_dim],
            dones: vec![false; capacity],
            next: 0,
            len: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim || t.action.len() != self.action_dim {
            return Err(RlError::Shape(format!(
                "transition with obs {}/{} and action {}, buffer expects {} and {}",
                t.obs.len(),
                t.next_obs.len(),
                t.action.len(),
                self.obs_dim,
                self.action_dim
            )));
        }
        if t.action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(RlError::Config(format!("action {:?} outside [-1, 1]", t.action)));
        }
        let all = t.obs.iter().chain(&t.next_obs).chain(&t.action).chain(std::iter::once(&t.reward));
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(RlError::NonFinite("transition".into()));
        }
        let i = self.next;
        self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.obs);
        self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.next_obs);
        self.actions[i * self.action_dim..(i + 1) * self.action_dim].copy_from_slice(&t.action);
        self.rewards[i] = t.reward;
        self.dones[i] = t.done;
        self.next = (self.next + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch == 0 || self.len < batch {
            return Err(RlError::NotEnoughSamples { len: self.len, batch });
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.len)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(batch, rng)?;
        Ok(self.gather(&idx))
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let (od, ad) = (self.obs_dim, self.action_dim);
        let mut obs = Vec::with_capacity(idx.len() * od);
        let mut next = Vec::with_capacity(idx.len() * od);
        let mut act = Vec::with_capacity(idx.len() * ad);
        for &i in idx {
            obs.extend_from_slice(&self.obs[i * od..(i + 1) * od]);
            next.extend_from_slice(&self.next_obs[i * od..(i + 1) * od]);
            act.extend_from_slice(&self.actions[i * ad..(i + 1) * ad]);
        }
        Batch {
            obs: Matrix::from_vec(idx.len(), od, obs),
            actions: Matrix::from_vec(idx.len(), ad, act),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_obs: Matrix::from_vec(idx.len(), od, next),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        }
    }
}
