//! The three-channel observation tensor.
//!
//! * Channel 1 – link quality: the channel magnitude of every covered user,
//!   accumulated in the user's cell.
//! * Channel 2 – service history: served counts accumulated per cell.
//! * Channel 3 – movement trend: buffer movement between two slots is
//!   detected with four two-tap direction kernels and then propagated `N`
//!   steps ahead along the detected direction.
//!
//! Each channel is divided by its maximum entry so the tensor lies in [0, 1].
//!
//! Matrices are indexed `[[x, y]]` with y growing north. Horizontal kernels
//! are laid out west to east over the cell pair `(x, y), (x+1, y)`; vertical
//! kernels are laid out north to south over `(x, y+1), (x, y)`. With that
//! layout each kernel responds to motion in the direction it is named after,
//! which is also the direction its trend matrix propagates.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Link;
use crate::config::{ScenarioConfig, TrendMode};
use crate::error::{Error, Result};
use crate::world::{pos_to_cell, GroundUser, WorldState};

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub t1: Array2<f64>,
    pub t2: Array2<f64>,
    pub t3: Array2<f64>,
}

impl Observation {
    pub const CHANNELS: usize = 3;

    pub fn zeros(k: usize) -> Self {
        Self {
            t1: Array2::zeros((k, k)),
            t2: Array2::zeros((k, k)),
            t3: Array2::zeros((k, k)),
        }
    }

    pub fn grid_k(&self) -> usize {
        self.t1.nrows()
    }

    pub fn channels(&self) -> [&Array2<f64>; 3] {
        [&self.t1, &self.t2, &self.t3]
    }

    /// Length of the flattened `[channel][x][y]` tensor.
    pub fn input_len(k: usize) -> usize {
        Self::CHANNELS * k * k
    }

    /// Writes the tensor channel-major into `out`.
    pub fn write_input(&self, out: &mut [f64]) {
        let kk = self.grid_k() * self.grid_k();
        for (c, m) in self.channels().into_iter().enumerate() {
            for (dst, &v) in out[c * kk..(c + 1) * kk].iter_mut().zip(m.iter()) {
                *dst = v;
            }
        }
    }

    pub fn to_input(&self) -> Vec<f64> {
        let mut out = vec![0.0; Self::input_len(self.grid_k())];
        self.write_input(&mut out);
        out
    }
}

/// Sparse copy of an observation for replay storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactObservation {
    k: usize,
    entries: Vec<(u32, f64)>,
}

impl CompactObservation {
    pub fn grid_k(&self) -> usize {
        self.k
    }

    /// Writes the dense channel-major tensor into `out`.
    pub fn write_input(&self, out: &mut [f64]) {
        out.fill(0.0);
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
    }

    pub fn to_observation(&self) -> Observation {
        let k = self.k;
        let mut flat = vec![0.0; Observation::input_len(k)];
        self.write_input(&mut flat);
        let kk = k * k;
        let channel = |c: usize| {
            Array2::from_shape_vec((k, k), flat[c * kk..(c + 1) * kk].to_vec()).expect("channel slices are k*k")
        };
        Observation {
            t1: channel(0),
            t2: channel(1),
            t3: channel(2),
        }
    }
}

impl From<&Observation> for CompactObservation {
    fn from(obs: &Observation) -> Self {
        let kk = obs.grid_k() * obs.grid_k();
        let entries = obs
            .channels()
            .into_iter()
            .enumerate()
            .flat_map(|(c, m)| {
                m.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(move |(i, v)| ((c * kk + i) as u32, *v))
            })
            .collect();
        Self {
            k: obs.grid_k(),
            entries,
        }
    }
}

/// Divides by the largest entry; an all-zero matrix passes through.
pub fn max_normalize(mut m: Array2<f64>) -> Array2<f64> {
    let max = m.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        m.mapv_inplace(|v| v / max);
    }
    m
}

pub fn build_channel1(gus: &[GroundUser], links: &[Link], cfg: &ScenarioConfig) -> Array2<f64> {
    let k = cfg.grid_k;
    let mut m = Array2::zeros((k, k));
    for (gu, link) in gus.iter().zip(links) {
        if link.covered {
            let c = pos_to_cell(gu.pos, cfg);
            m[[c.x, c.y]] += link.sample.coeff_mag;
        }
    }
    max_normalize(m)
}

pub fn build_channel2(gus: &[GroundUser], cfg: &ScenarioConfig) -> Array2<f64> {
    let k = cfg.grid_k;
    let mut m = Array2::zeros((k, k));
    for gu in gus {
        let c = pos_to_cell(gu.pos, cfg);
        m[[c.x, c.y]] += gu.served_count as f64;
    }
    max_normalize(m)
}

/// Buffered bits per cell (not normalized).
pub fn buffer_grid(gus: &[GroundUser], cfg: &ScenarioConfig) -> Array2<f64> {
    let k = cfg.grid_k;
    let mut m = Array2::zeros((k, k));
    for gu in gus {
        let c = pos_to_cell(gu.pos, cfg);
        m[[c.x, c.y]] += gu.buffer_bits;
    }
    m
}

pub fn diff_grid(now: &Array2<f64>, prev: &Array2<f64>) -> Result<Array2<f64>> {
    if now.dim() != prev.dim() {
        return Err(Error::domain(format!(
            "grid shapes differ: {:?} vs {:?}",
            now.dim(),
            prev.dim()
        )));
    }
    Ok(now - prev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn offset(self) -> (i64, i64) {
        match self {
            Direction::Up => (0, 1),
            Direction::Down => (0, -1),
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
        }
    }

    /// The two taps `[k0, k1]` of this direction's detection kernel.
    pub fn kernel(self) -> [f64; 2] {
        match self {
            Direction::Up => DirectionKernels::UP,
            Direction::Down => DirectionKernels::DOWN,
            Direction::Left => DirectionKernels::LEFT,
            Direction::Right => DirectionKernels::RIGHT,
        }
    }

    fn is_vertical(self) -> bool {
        matches!(self, Direction::Up | Direction::Down)
    }

    /// The three directions a walker may take instead of this one.
    fn others(self) -> [Direction; 3] {
        let mut out = [Direction::Up; 3];
        let mut i = 0;
        for d in Direction::ALL {
            if d != self {
                out[i] = d;
                i += 1;
            }
        }
        out
    }
}

pub struct DirectionKernels;

impl DirectionKernels {
    pub const UP: [f64; 2] = [1.0, -1.0];
    pub const DOWN: [f64; 2] = [-1.0, 1.0];
    pub const LEFT: [f64; 2] = [1.0, -1.0];
    pub const RIGHT: [f64; 2] = [-1.0, 1.0];
}

/// Responses of the four direction kernels to one difference matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMaps {
    pub up: Array2<f64>,
    pub down: Array2<f64>,
    pub left: Array2<f64>,
    pub right: Array2<f64>,
}

impl DirectionMaps {
    pub fn get(&self, d: Direction) -> &Array2<f64> {
        match d {
            Direction::Up => &self.up,
            Direction::Down => &self.down,
            Direction::Left => &self.left,
            Direction::Right => &self.right,
        }
    }
}

/// SAME-size, zero-padded correlation of `dg` with the four kernels.
pub fn detect_directions(dg: &Array2<f64>) -> DirectionMaps {
    let detect = |d: Direction| {
        let (kx, ky) = dg.dim();
        let [k0, k1] = d.kernel();
        Array2::from_shape_fn((kx, ky), |(x, y)| {
            if d.is_vertical() {
                let north = if y + 1 < ky { dg[[x, y + 1]] } else { 0.0 };
                k0 * north + k1 * dg[[x, y]]
            } else {
                let east = if x + 1 < kx { dg[[x + 1, y]] } else { 0.0 };
                k0 * dg[[x, y]] + k1 * east
            }
        })
    };
    DirectionMaps {
        up: detect(Direction::Up),
        down: detect(Direction::Down),
        left: detect(Direction::Left),
        right: detect(Direction::Right),
    }
}

/// Knobs of the trend propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendParams {
    pub steps: usize,
    /// Decay applied at every step.
    pub gamma: f64,
    /// Probability a walker keeps going in the matrix's direction.
    pub keep_prob: f64,
    pub mode: TrendMode,
}

impl TrendParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            steps: cfg.trend_steps,
            gamma: cfg.trend_gamma(),
            keep_prob: cfg.gu_greedy_eps,
            mode: cfg.trend_mode,
        }
    }
}

fn shift(x: usize, y: usize, d: Direction, k: (usize, usize)) -> Option<(usize, usize)> {
    let (dx, dy) = d.offset();
    let nx = x as i64 + dx;
    let ny = y as i64 + dy;
    (nx >= 0 && ny >= 0 && (nx as usize) < k.0 && (ny as usize) < k.1).then_some((nx as usize, ny as usize))
}

/// Un-normalized N-step trend for one direction.
///
/// Seeds are the positive entries of `detection`. Every step moves mass one
/// cell, forward with probability `keep_prob` and otherwise to one of the
/// other three neighbours, multiplying it by `gamma`; the moved mass is added
/// to the cell it lands in. Mass leaving the grid is dropped.
pub fn trend_mass<R: Rng + ?Sized>(
    detection: &Array2<f64>,
    direction: Direction,
    params: &TrendParams,
    rng: &mut R,
) -> Array2<f64> {
    let dim = detection.dim();
    let seeds = detection.mapv(|v| if v > 0.0 { v } else { 0.0 });
    let mut out = seeds.clone();
    let others = direction.others();

    match params.mode {
        TrendMode::Stochastic => {
            let mut walkers: Vec<(usize, usize, f64)> = seeds
                .indexed_iter()
                .filter(|(_, v)| **v != 0.0)
                .map(|((x, y), v)| (x, y, *v))
                .collect();
            // All walkers advance in lockstep, one step at a time.
            for _ in 0..params.steps {
                walkers.retain_mut(|(x, y, v)| {
                    let d = if rng.random_bool(params.keep_prob) {
                        direction
                    } else {
                        others[rng.random_range(0..3)]
                    };
                    match shift(*x, *y, d, dim) {
                        Some((nx, ny)) => {
                            let deposit = params.gamma * *v;
                            out[[nx, ny]] += deposit;
                            *x = nx;
                            *y = ny;
                            *v = deposit;
                            true
                        }
                        None => false,
                    }
                });
                if walkers.is_empty() {
                    break;
                }
            }
        }
        TrendMode::Expectation => {
            let turn = (1.0 - params.keep_prob) / 3.0;
            let moves: [(Direction, f64); 4] = [
                (direction, params.gamma * params.keep_prob),
                (others[0], params.gamma * turn),
                (others[1], params.gamma * turn),
                (others[2], params.gamma * turn),
            ];
            let mut front = seeds;
            for _ in 0..params.steps {
                let mut next = Array2::zeros(dim);
                for ((x, y), &m) in front.indexed_iter() {
                    if m == 0.0 {
                        continue;
                    }
                    for &(d, w) in &moves {
                        if let Some((nx, ny)) = shift(x, y, d, dim) {
                            next[[nx, ny]] += w * m;
                        }
                    }
                }
                out += &next;
                front = next;
            }
        }
    }
    out
}

/// Normalized N-step trend matrix for one direction.
pub fn trend_matrix<R: Rng + ?Sized>(
    detection: &Array2<f64>,
    direction: Direction,
    params: &TrendParams,
    rng: &mut R,
) -> Array2<f64> {
    max_normalize(trend_mass(detection, direction, params, rng))
}

/// Channel 3 from the current users and the previous slot's buffer grid.
pub fn build_channel3<R: Rng + ?Sized>(
    gus: &[GroundUser],
    prev_grid: &Array2<f64>,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let dg = diff_grid(&buffer_grid(gus, cfg), prev_grid)?;
    let maps = detect_directions(&dg);
    let params = TrendParams::from_config(cfg);
    let mut sum = Array2::zeros(dg.dim());
    for d in Direction::ALL {
        sum += &trend_matrix(maps.get(d), d, &params, rng);
    }
    Ok(max_normalize(sum))
}

/// Stacks the three channels for the world's current slot. The first slot
/// of an episode has no movement history, so its trend channel is zero.
pub fn build_observation<R: Rng + ?Sized>(
    world: &WorldState,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<Observation> {
    let t1 = build_channel1(&world.gus, &world.links, cfg);
    let t2 = build_channel2(&world.gus, cfg);
    let t3 = if world.slot == 0 {
        Array2::zeros((cfg.grid_k, cfg.grid_k))
    } else {
        build_channel3(&world.gus, &world.prev_buffer_grid, cfg, rng)?
    };
    Ok(Observation { t1, t2, t3 })
}

impl WorldState {
    /// Builds the observation, drawing trend randomness from the world's
    /// trend stream.
    pub fn observe(&mut self, cfg: &ScenarioConfig) -> Result<Observation> {
        let mut trend = self.streams.trend.clone();
        let obs = build_observation(self, cfg, &mut trend)?;
        self.streams.trend = trend;
        Ok(obs)
    }
}
