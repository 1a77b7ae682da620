//! Joint offline/online deep-Q training.
//!
//! Every slot the agent observes, acts η-greedily, steps the world and
//! stores the transition. The small online memory is rebuilt from the
//! current episode and trained on immediately; after the episode the large
//! offline memory is rebuilt from its old contents plus the new episode and
//! trained on in a burst. The target network is refreshed every
//! `sync_interval` gradient updates.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::env::{step, Action, DoneReason};
use crate::error::{Error, Result};
use crate::observation::CompactObservation;
use crate::qnet::{argmax, td_loss_grad, Adam, NetShape, QNetwork, N_ACTIONS};
use crate::replay::{Experience, MemoryKind, ReplayMemory};
use crate::world::{spawn_world, stream, StreamId, WorldState};

/// Builds the initial world of an episode from its scenario and user count.
pub type WorldFactory = Box<dyn Fn(&ScenarioConfig, usize) -> Result<WorldState> + Send>;

/// Training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub online_updates_per_slot: usize,
    pub offline_updates_per_episode: usize,
    pub batch_size: usize,
    /// Gradient updates between target refreshes.
    pub sync_interval: usize,
    pub learning_rate: f64,
    /// Multiplies rewards before they enter the TD target. Raw rewards are in
    /// bits and reach 1e8 per slot.
    pub reward_scale: f64,
    /// Users in the first episode.
    pub initial_gus: usize,
    /// Add one user per episode.
    pub gu_growth: bool,
    pub offline_capacity: usize,
    pub online_capacity: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 60,
            online_updates_per_slot: 1,
            offline_updates_per_episode: 200,
            batch_size: 32,
            sync_interval: 500,
            learning_rate: 1e-3,
            reward_scale: 1e-8,
            initial_gus: 50,
            gu_growth: false,
            offline_capacity: MemoryKind::Offline.default_capacity(),
            online_capacity: MemoryKind::Online.default_capacity(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("sync_interval", self.sync_interval),
            ("initial_gus", self.initial_gus),
            ("offline_capacity", self.offline_capacity),
            ("online_capacity", self.online_capacity),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(Error::config("reward_scale", "must be finite and positive"));
        }
        Ok(())
    }

    /// Number of users in 1-based episode `episode`.
    pub fn gus_for(&self, episode: usize) -> usize {
        if self.gu_growth {
            self.initial_gus + episode.saturating_sub(1)
        } else {
            self.initial_gus
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode: usize,
    pub n_gus: usize,
    pub total_reward: f64,
    pub steps: usize,
    pub final_fairness: f64,
    pub throughput_bits: f64,
    pub energy_used: f64,
    /// Mean TD loss over the episode's updates, 0 without updates.
    pub mean_td_loss: f64,
}

/// One slot of a logged trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub t: usize,
    pub x_cell: usize,
    pub y_cell: usize,
    pub action: usize,
    pub reward: f64,
    pub fairness: f64,
    pub throughput_bits: f64,
    /// Flight energy of this slot.
    pub energy: f64,
    pub energy_used: f64,
    pub served: usize,
}

/// With probability `eta` the greedy action (lowest index on ties),
/// otherwise one of the other seven uniformly.
pub fn select_action<R: Rng + ?Sized>(q: &[f64; N_ACTIONS], eta: f64, rng: &mut R) -> Action {
    let best = argmax(q);
    let i = if rng.random_bool(eta) {
        best
    } else {
        let j = rng.random_range(0..N_ACTIONS - 1);
        if j >= best {
            j + 1
        } else {
            j
        }
    };
    Action::ALL[i]
}

/// The scenario of 1-based episode `episode`: same constants, its own seed.
pub fn episode_scenario(base: &ScenarioConfig, episode: usize) -> ScenarioConfig {
    ScenarioConfig {
        seed: base
            .seed
            .wrapping_add((episode as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        ..base.clone()
    }
}

/// Plays one episode with a frozen network and logs every slot.
pub fn rollout(
    net: &QNetwork,
    cfg: &ScenarioConfig,
    n_gus: usize,
    eta: f64,
    episode: usize,
) -> Result<(EpisodeReport, Vec<SlotRecord>)> {
    rollout_world(net, spawn_world(cfg, n_gus)?, cfg, eta, episode)
}

/// [`rollout`] from a prepared world.
pub fn rollout_world(
    net: &QNetwork,
    mut world: WorldState,
    cfg: &ScenarioConfig,
    eta: f64,
    episode: usize,
) -> Result<(EpisodeReport, Vec<SlotRecord>)> {
    let n_gus = world.gus.len();
    let mut records = Vec::new();
    let mut fairness;
    loop {
        let obs = world.observe(cfg)?;
        let q = net.q_values(&obs)?;
        let action = select_action(&q, eta, &mut world.streams.agent);
        let out = step(&mut world, action, cfg)?;
        fairness = out.fairness;
        records.push(SlotRecord {
            t: world.slot - 1,
            x_cell: world.uav.cell.x,
            y_cell: world.uav.cell.y,
            action: action.index(),
            reward: out.reward,
            fairness: out.fairness,
            throughput_bits: out.throughput_bits,
            energy: out.energy_spent,
            energy_used: world.uav.energy_used,
            served: out.served_ids.len(),
        });
        if out.done {
            break;
        }
    }
    let report = EpisodeReport {
        episode,
        n_gus,
        total_reward: records.iter().map(|r| r.reward).sum(),
        steps: records.len(),
        final_fairness: fairness,
        throughput_bits: records.iter().map(|r| r.throughput_bits).sum(),
        energy_used: world.uav.energy_used,
        mean_td_loss: 0.0,
    };
    Ok((report, records))
}

/// Greedy rollout without learning.
pub fn evaluate(net: &QNetwork, cfg: &ScenarioConfig, n_gus: usize) -> Result<(EpisodeReport, Vec<SlotRecord>)> {
    rollout(net, cfg, n_gus, 1.0, 0)
}

pub struct Trainer {
    scenario: ScenarioConfig,
    train: TrainConfig,
    eval: QNetwork,
    target: QNetwork,
    optimizer: Adam,
    offline: ReplayMemory,
    online: ReplayMemory,
    replay_rng: ChaCha8Rng,
    updates: u64,
    next_seq: u64,
    episodes_done: usize,
    spawn: WorldFactory,
}

impl Trainer {
    pub fn new(scenario: ScenarioConfig, train: TrainConfig) -> Result<Self> {
        Self::with_shape(NetShape::for_grid(scenario.grid_k), scenario, train)
    }

    pub fn with_shape(shape: NetShape, scenario: ScenarioConfig, train: TrainConfig) -> Result<Self> {
        scenario.validate()?;
        train.validate()?;
        if shape.grid_k != scenario.grid_k {
            return Err(Error::ShapeMismatch(format!(
                "network expects a {} grid, scenario has {}",
                shape.grid_k, scenario.grid_k
            )));
        }
        let eval = QNetwork::new(shape, &mut stream(scenario.seed, StreamId::Init))?;
        let target = eval.clone();
        Ok(Self {
            optimizer: Adam::new(eval.params().len(), train.learning_rate),
            offline: ReplayMemory::new(MemoryKind::Offline, train.offline_capacity)?,
            online: ReplayMemory::new(MemoryKind::Online, train.online_capacity)?,
            replay_rng: stream(scenario.seed, StreamId::Replay),
            eval,
            target,
            scenario,
            train,
            updates: 0,
            next_seq: 0,
            episodes_done: 0,
            spawn: Box::new(spawn_world),
        })
    }

    /// Replaces how episode worlds are built (scripted scenarios).
    pub fn with_world_factory(
        mut self,
        factory: impl Fn(&ScenarioConfig, usize) -> Result<WorldState> + Send + 'static,
    ) -> Self {
        self.spawn = Box::new(factory);
        self
    }

    pub fn network(&self) -> &QNetwork {
        &self.eval
    }

    pub fn target_network(&self) -> &QNetwork {
        &self.target
    }

    pub fn memory(&self, kind: MemoryKind) -> &ReplayMemory {
        match kind {
            MemoryKind::Offline => &self.offline,
            MemoryKind::Online => &self.online,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    /// One gradient step on a minibatch from `kind`. Returns `None` while
    /// that memory is empty.
    pub fn update(&mut self, kind: MemoryKind) -> Result<Option<f64>> {
        let memory = match kind {
            MemoryKind::Offline => &self.offline,
            MemoryKind::Online => &self.online,
        };
        if memory.is_empty() {
            return Ok(None);
        }
        let batch = memory.sample(self.train.batch_size, &mut self.replay_rng)?;
        debug_assert!(batch.episodes.iter().all(|&e| e <= self.episodes_done + 1));
        let (loss, grad) = td_loss_grad(
            &self.eval,
            &self.target,
            &batch.td,
            self.scenario.discount_gamma,
            self.train.reward_scale,
        )?;
        self.optimizer.step(self.eval.params_mut(), &grad)?;
        self.updates += 1;
        if self.updates.is_multiple_of(self.train.sync_interval as u64) {
            self.target.sync_from(&self.eval)?;
        }
        Ok(Some(loss))
    }

    /// Runs the next episode.
    pub fn run_episode(&mut self) -> Result<EpisodeReport> {
        let episode = self.episodes_done + 1;
        let cfg = episode_scenario(&self.scenario, episode);
        let n_gus = self.train.gus_for(episode);
        let mut world = (self.spawn)(&cfg, n_gus)?;

        let mut obs = world.observe(&cfg)?;
        let mut compact = Arc::new(CompactObservation::from(&obs));
        let mut experiences: Vec<Experience> = Vec::new();
        let mut losses = Vec::new();
        let (mut total_reward, mut throughput) = (0.0, 0.0);
        let mut fairness;

        loop {
            let q = self.eval.q_values(&obs)?;
            let action = select_action(&q, cfg.agent_eta, &mut world.streams.agent);
            let out = step(&mut world, action, &cfg)?;
            let next = world.observe(&cfg)?;
            let next_compact = Arc::new(CompactObservation::from(&next));
            experiences.push(Experience {
                obs: compact,
                action: action.index(),
                reward: out.reward,
                next_obs: next_compact.clone(),
                // Running out of time is not a property of the state, so only
                // energy exhaustion cuts the bootstrap.
                terminal: out.done_reason == Some(DoneReason::EnergyExhausted),
                episode,
                seq: self.next_seq,
            });
            self.next_seq += 1;
            total_reward += out.reward;
            throughput += out.throughput_bits;
            fairness = out.fairness;

            self.online.rebuild(&experiences, &mut self.replay_rng)?;
            for _ in 0..self.train.online_updates_per_slot {
                losses.extend(self.update(MemoryKind::Online)?);
            }
            if out.done {
                break;
            }
            obs = next;
            compact = next_compact;
        }

        let mut pool = self.offline.items().to_vec();
        pool.extend(experiences.iter().cloned());
        self.offline.rebuild(&pool, &mut self.replay_rng)?;
        for _ in 0..self.train.offline_updates_per_episode {
            losses.extend(self.update(MemoryKind::Offline)?);
        }
        self.episodes_done = episode;

        Ok(EpisodeReport {
            episode,
            n_gus,
            total_reward,
            steps: experiences.len(),
            final_fairness: fairness,
            throughput_bits: throughput,
            energy_used: world.uav.energy_used,
            mean_td_loss: if losses.is_empty() {
                0.0
            } else {
                losses.iter().sum::<f64>() / losses.len() as f64
            },
        })
    }

    /// Runs every configured episode, handing each report to `on_episode`.
    pub fn train_with(&mut self, mut on_episode: impl FnMut(&EpisodeReport)) -> Result<Vec<EpisodeReport>> {
        let mut reports = Vec::with_capacity(self.train.episodes);
        for _ in 0..self.train.episodes {
            let r = self.run_episode()?;
            on_episode(&r);
            reports.push(r);
        }
        Ok(reports)
    }

    pub fn train(&mut self) -> Result<Vec<EpisodeReport>> {
        self.train_with(|_| {})
    }
}
