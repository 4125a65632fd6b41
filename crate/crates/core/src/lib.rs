//! Cascading-failure simulation, coordinated multi-attacker training and
//! frequency-based defense planning for transmission grids.

pub mod cascade;
pub mod case_io;
pub mod defense;
pub mod dqn;
pub mod env;
pub mod error;
pub mod grid;
pub mod neural;
pub mod oracle;
pub mod policy;
pub mod powerflow;
pub mod replay;
pub mod stats;
pub mod trainer;

pub use cascade::{AttackAction, CascadeOptions, CascadeResult, DefenseSet, OperatingPoint};
pub use case_io::{load_case, load_case_file, CapacityRule};
pub use defense::{
    aggregate_frequencies, evaluate_defense, execute, plan_defense, select_defense,
    stability_distance, AttackSequence, DefenseConfig, DefensePlan, FrequencyTable,
};
pub use env::{AttackEnv, GameConfig, Observation, RewardVector, StepOutcome};
pub use error::{Error, Result};
pub use grid::{find_islands, validate_case, GridCase, LineStateVector};
pub use oracle::{brute_force, OracleResult};
pub use policy::{AttackerPolicy, Method};
pub use replay::{ReplayBuffer, ReplayConfig, Transition};
pub use trainer::{train_method, AttackTrainer, EpisodeRecord, TrainConfig, TrainedRun};
