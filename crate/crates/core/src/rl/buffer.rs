use std::collections::VecDeque;

use rand::Rng as _;

use crate::belief::ParticleBelief;
use crate::env::{ActionVector, Observation};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One step of experience at the belief level.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTransition {
    pub belief: ParticleBelief,
    pub action: ActionVector,
    pub reward: f64,
    pub next_belief: ParticleBelief,
    pub next_observation: Observation,
    pub done: bool,
}

impl BeliefTransition {
    pub fn new(
        belief: ParticleBelief,
        action: ActionVector,
        reward: f64,
        next_belief: ParticleBelief,
        next_observation: Observation,
        done: bool,
    ) -> Result<Self> {
        if belief.len() != next_belief.len() {
            return Err(Error::ShapeMismatch {
                expected: belief.len(),
                got: next_belief.len(),
            });
        }
        Ok(Self {
            belief,
            action,
            reward,
            next_belief,
            next_observation,
            done,
        })
    }
}

/// Fixed-capacity FIFO replay memory with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<BeliefTransition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: BeliefTransition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = BeliefTransition>) {
        for t in ts {
            self.push(t);
        }
    }

    /// `i = 0` is the oldest stored transition.
    pub fn get(&self, i: usize) -> Option<&BeliefTransition> {
        self.items.get(i)
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample<'a>(&'a self, n: usize, rng: &mut Rng) -> Vec<&'a BeliefTransition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}
