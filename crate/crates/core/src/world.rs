//! Grid geometry, world state and the seeded random streams.
//!
//! Cells are addressed `(col, row)`: the first index grows east (x), the
//! second grows north (y). Every K×K matrix in the crate uses the same
//! `[[x, y]]` indexing.

use std::f64::consts::FRAC_PI_2;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Link;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};

/// A grid cell as `(col, row)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn in_grid(self, k: usize) -> bool {
        self.x < k && self.y < k
    }
}

/// A continuous ground position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pos {
    pub x: f64,
    pub y: f64,
}

impl Pos {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist2(self, other: Pos) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

pub fn cell_center(cell: Cell, cfg: &ScenarioConfig) -> Result<Pos> {
    if !cell.in_grid(cfg.grid_k) {
        return Err(Error::domain(format!(
            "cell ({}, {}) outside a {}x{} grid",
            cell.x, cell.y, cfg.grid_k, cfg.grid_k
        )));
    }
    Ok(Pos::new(
        (cell.x as f64 + 0.5) * cfg.cell_size,
        (cell.y as f64 + 0.5) * cfg.cell_size,
    ))
}

/// Maps a position to its cell; points on or past the far edge land in the
/// last cell.
pub fn pos_to_cell(pos: Pos, cfg: &ScenarioConfig) -> Cell {
    let last = cfg.grid_k - 1;
    let index = |v: f64| -> usize {
        let i = (v / cfg.cell_size).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(last)
        }
    };
    Cell::new(index(pos.x), index(pos.y))
}

/// Identifies one of the independent random streams split from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    Mobility = 0,
    Channel = 1,
    Trend = 2,
    Agent = 3,
    /// Network initialisation (trainer only).
    Init = 4,
    /// Replay composition and minibatch draws (trainer only).
    Replay = 5,
}

/// Opens stream `id` of the given master seed. Streams never overlap, so
/// drawing from one leaves every other untouched.
pub fn stream(seed: u64, id: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

/// The four streams a world consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Streams {
    pub mobility: ChaCha8Rng,
    pub channel: ChaCha8Rng,
    pub trend: ChaCha8Rng,
    pub agent: ChaCha8Rng,
}

impl Streams {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            mobility: stream(seed, StreamId::Mobility),
            channel: stream(seed, StreamId::Channel),
            trend: stream(seed, StreamId::Trend),
            agent: stream(seed, StreamId::Agent),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundUser {
    pub id: usize,
    pub pos: Pos,
    /// m/s
    pub speed: f64,
    /// Radians in [0, 2π).
    pub heading: f64,
    pub buffer_bits: f64,
    /// Number of slots in which this user was served.
    pub served_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub cell: Cell,
    /// Cumulative flight energy in joules.
    pub energy_used: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub slot: usize,
    pub uav: UavState,
    pub gus: Vec<GroundUser>,
    /// Buffer grid of the previous slot.
    pub prev_buffer_grid: Array2<f64>,
    /// Channel realisations of the most recent slot, one per user.
    pub links: Vec<Link>,
    /// Set once a step reports `done`.
    pub terminal: bool,
    pub streams: Streams,
}

/// Builds the initial world: users placed uniformly with axis-aligned
/// headings, empty buffers and the UAV over the grid center. The initial
/// links are drawn from the channel stream so the first slot can be observed.
pub fn spawn_world(cfg: &ScenarioConfig, n_gus: usize) -> Result<WorldState> {
    if n_gus == 0 {
        return Err(Error::domain("a world needs at least one ground user"));
    }
    let mut streams = Streams::from_seed(cfg.seed);
    let side = cfg.aoi_side();
    let gus = (0..n_gus)
        .map(|id| {
            let x = streams.mobility.random::<f64>() * side;
            let y = streams.mobility.random::<f64>() * side;
            let quarter = streams.mobility.random_range(0..4u32);
            GroundUser {
                id,
                pos: Pos::new(x, y),
                speed: cfg.gu_mean_speed,
                heading: quarter as f64 * FRAC_PI_2,
                buffer_bits: 0.0,
                served_count: 0,
            }
        })
        .collect();
    let k = cfg.grid_k;
    let mut world = WorldState {
        slot: 0,
        uav: UavState {
            cell: Cell::new(k / 2, k / 2),
            energy_used: 0.0,
        },
        gus,
        prev_buffer_grid: Array2::zeros((k, k)),
        links: Vec::new(),
        terminal: false,
        streams,
    };
    world.links = crate::channel::draw_links(&world.gus, world.uav.cell, cfg, &mut world.streams.channel)?;
    Ok(world)
}
