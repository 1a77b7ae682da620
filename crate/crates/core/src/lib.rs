//! Grid-world simulator of a UAV serving mobile ground users, and a deep-Q
//! trajectory planner whose input carries a movement-trend prediction.
//!
//! Module map:
//!
//! * [`config`], [`world`]: configuration, geometry, world state, seeded streams
//! * [`mobility`], [`channel`], [`env`]: the decision process
//! * [`observation`]: the three-channel input tensor
//! * [`qnet`], [`replay`], [`trainer`]: learning
//! * [`cli`]: the `uav-trend` command line

pub mod channel;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod mobility;
pub mod observation;
pub mod qnet;
pub mod replay;
pub mod trainer;
pub mod world;

pub use config::{RunConfig, ScenarioConfig, TrendMode};
pub use env::{step, Action, StepOutcome};
pub use error::{Error, Result};
pub use observation::Observation;
pub use qnet::{NetShape, QNetwork};
pub use trainer::{EpisodeReport, TrainConfig, Trainer};
pub use world::{spawn_world, WorldState};
