//! The decision process: UAV moves, user service, buffers, energy and reward.

use serde::{Deserialize, Serialize};

use crate::channel::draw_links;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::mobility::step_gu;
use crate::observation::buffer_grid;
use crate::world::{cell_center, Cell, WorldState};

/// The eight UAV moves, in the order used for network outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    RightUpper,
    RightLower,
    LeftUpper,
    LeftLower,
}

impl Action {
    pub const COUNT: usize = 8;

    pub const ALL: [Action; Action::COUNT] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::RightUpper,
        Action::RightLower,
        Action::LeftUpper,
        Action::LeftLower,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::domain(format!("action index {i} out of range")))
    }

    /// Cell offset `(dx, dy)`; north is +y.
    pub fn offset(self) -> (i64, i64) {
        match self {
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::RightUpper => (1, 1),
            Action::RightLower => (1, -1),
            Action::LeftUpper => (-1, 1),
            Action::LeftLower => (-1, -1),
        }
    }

    /// Applies the move, clipping each axis at the grid edge.
    pub fn apply(self, cell: Cell, k: usize) -> Cell {
        let (dx, dy) = self.offset();
        let clip = |v: usize, d: i64| (v as i64 + d).clamp(0, k as i64 - 1) as usize;
        Cell::new(clip(cell.x, dx), clip(cell.y, dy))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    EnergyExhausted,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    /// Fairness-weighted throughput of the slot.
    pub utility: f64,
    pub fairness: f64,
    pub served_ids: Vec<usize>,
    /// Σ r_i·τ_c over served users.
    pub throughput_bits: f64,
    /// Flight energy of this slot.
    pub energy_spent: f64,
    pub done: bool,
    pub done_reason: Option<DoneReason>,
}

/// Jain's index `(Σc)² / (n·Σc²)`, defined as 0 when every count is 0.
pub fn jain_fairness(counts: &[u64]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::domain("fairness of an empty population"));
    }
    let sum: f64 = counts.iter().map(|&c| c as f64).sum();
    let sum_sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    if sum_sq == 0.0 {
        return Ok(0.0);
    }
    Ok(sum * sum / (counts.len() as f64 * sum_sq))
}

/// `p_f · ‖Δ‖ / v_uav` for a move between two waypoints.
pub fn flight_energy(from: Cell, to: Cell, cfg: &ScenarioConfig) -> Result<f64> {
    let a = cell_center(from, cfg)?;
    let b = cell_center(to, cfg)?;
    Ok(cfg.fly_power * a.dist2(b).sqrt() / cfg.uav_speed)
}

/// `Σ_j γ^j r_j`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

/// Advances the world by one slot under `action`.
///
/// The UAV moves first and pays flight energy, then users move, fresh links
/// are drawn, covered users upload and the reward is computed. The fresh
/// links stay in `world.links` for the next observation.
pub fn step(world: &mut WorldState, action: Action, cfg: &ScenarioConfig) -> Result<StepOutcome> {
    if world.terminal {
        return Err(Error::Usage("stepping a terminal world".into()));
    }
    world.prev_buffer_grid = buffer_grid(&world.gus, cfg);

    let from = world.uav.cell;
    let to = action.apply(from, cfg.grid_k);
    let energy_spent = flight_energy(from, to, cfg)?;
    world.uav.cell = to;
    world.uav.energy_used += energy_spent;

    for gu in world.gus.iter_mut() {
        *gu = step_gu(gu, cfg, &mut world.streams.mobility);
    }

    let links = draw_links(&world.gus, to, cfg, &mut world.streams.channel)?;
    let mut served_ids = Vec::new();
    let mut throughput_bits = 0.0;
    for (gu, link) in world.gus.iter_mut().zip(&links) {
        let offered = gu.buffer_bits + cfg.arrival_bits;
        if link.covered {
            let capacity = link.rate * cfg.hover_tau_c;
            throughput_bits += capacity;
            gu.buffer_bits = (offered - capacity.min(offered)).max(0.0);
            gu.served_count += 1;
            served_ids.push(gu.id);
        } else {
            gu.buffer_bits = offered;
        }
    }
    world.links = links;

    let counts: Vec<u64> = world.gus.iter().map(|g| g.served_count).collect();
    let fairness = jain_fairness(&counts)?;
    let utility = fairness * throughput_bits;
    let within_budget = world.uav.energy_used <= cfg.energy_budget;
    let reward = if !served_ids.is_empty() && within_budget {
        utility
    } else {
        0.0
    };

    world.slot += 1;
    let done_reason = if !within_budget {
        Some(DoneReason::EnergyExhausted)
    } else if world.slot >= cfg.max_steps_per_episode {
        Some(DoneReason::MaxSteps)
    } else {
        None
    };
    world.terminal = done_reason.is_some();

    Ok(StepOutcome {
        reward,
        utility,
        fairness,
        served_ids,
        throughput_bits,
        energy_spent,
        done: world.terminal,
        done_reason,
    })
}
