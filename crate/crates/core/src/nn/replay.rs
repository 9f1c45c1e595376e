use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};

/// One stored transition `(Z_t, A_t, R_{t+1}, Z_{t+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Last step of its episode: no bootstrapping from `next_obs`.
    pub terminal: bool,
}

/// Fixed-capacity FIFO of experiences with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
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

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }

    /// Draws `n` experiences uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Experience>> {
        if n == 0 || self.items.len() < n {
            return Err(Error::usage(format!(
                "cannot sample {n} experiences from a memory holding {}",
                self.items.len()
            )));
        }
        Ok((0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}
