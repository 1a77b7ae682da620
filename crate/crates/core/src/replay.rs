//! Reward-biased replay memories.
//!
//! A memory is rebuilt from a candidate pool: the highest-reward share of
//! its capacity is filled with the best experiences (newer first on ties)
//! and the rest with uniform draws from what is left. Minibatches are then
//! drawn uniformly with replacement.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::observation::{CompactObservation, Observation};
use crate::qnet::TdBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub obs: Arc<CompactObservation>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Arc<CompactObservation>,
    pub terminal: bool,
    pub episode: usize,
    /// Global insertion order, used to break reward ties.
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryKind {
    /// Cross-episode memory rebuilt after every episode.
    Offline,
    /// Current-episode memory rebuilt every slot.
    Online,
}

impl MemoryKind {
    /// `(top, random)` shares of capacity in percent.
    pub fn quotas(self) -> (usize, usize) {
        match self {
            MemoryKind::Offline => (70, 30),
            MemoryKind::Online => (80, 20),
        }
    }

    pub fn default_capacity(self) -> usize {
        match self {
            MemoryKind::Offline => 50_000,
            MemoryKind::Online => 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory {
    kind: MemoryKind,
    capacity: usize,
    items: Vec<Experience>,
}

/// A sampled minibatch plus the episode each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub td: TdBatch,
    pub episodes: Vec<usize>,
}

impl ReplayMemory {
    pub fn new(kind: MemoryKind, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::domain("replay capacity must be positive"));
        }
        Ok(Self {
            kind,
            capacity,
            items: Vec::new(),
        })
    }

    pub fn kind(&self) -> MemoryKind {
        self.kind
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

    pub fn items(&self) -> &[Experience] {
        &self.items
    }

    /// Replaces the contents with a selection from `pool`.
    pub fn rebuild<R: Rng + ?Sized>(&mut self, pool: &[Experience], rng: &mut R) -> Result<()> {
        if pool.is_empty() {
            return Err(Error::domain("cannot rebuild a replay memory from an empty pool"));
        }
        if pool.len() <= self.capacity {
            self.items = pool.to_vec();
            return Ok(());
        }
        let (top_pct, rand_pct) = self.kind.quotas();
        let n_top = (top_pct * self.capacity).div_ceil(100);
        let n_rand = rand_pct * self.capacity / 100;

        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| {
            pool[b]
                .reward
                .total_cmp(&pool[a].reward)
                .then(pool[b].seq.cmp(&pool[a].seq))
        });
        let rest = &order[n_top..];
        let mut items: Vec<Experience> = order[..n_top].iter().map(|&i| pool[i].clone()).collect();
        let picks = index::sample(rng, rest.len(), n_rand.min(rest.len()));
        items.extend(picks.into_iter().map(|j| pool[rest[j]].clone()));
        self.items = items;
        Ok(())
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<TrainBatch> {
        if batch == 0 {
            return Err(Error::domain("batch size must be positive"));
        }
        if self.items.is_empty() {
            return Err(Error::domain("cannot sample an empty replay memory"));
        }
        let k = self.items[0].obs.grid_k();
        let n = Observation::input_len(k);
        let mut td = TdBatch {
            states: vec![0.0; batch * n],
            next_states: vec![0.0; batch * n],
            actions: Vec::with_capacity(batch),
            rewards: Vec::with_capacity(batch),
            terminal: Vec::with_capacity(batch),
        };
        let mut episodes = Vec::with_capacity(batch);
        for row in 0..batch {
            let e = &self.items[rng.random_range(0..self.items.len())];
            e.obs.write_input(&mut td.states[row * n..(row + 1) * n]);
            e.next_obs.write_input(&mut td.next_states[row * n..(row + 1) * n]);
            td.actions.push(e.action);
            td.rewards.push(e.reward);
            td.terminal.push(e.terminal);
            episodes.push(e.episode);
        }
        Ok(TrainBatch { td, episodes })
    }
}
