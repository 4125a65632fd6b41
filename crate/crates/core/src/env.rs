//! Episodic multi-attacker game over a grid case.
//!
//! Every attacker observes the full line-state vector, all attackers act
//! simultaneously once per stage, and all receive the same reward: the
//! stage's generation loss as a fraction of the generation served at reset.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cascade::{
    apply_attacks, run_cascade, AttackAction, CascadeOptions, CascadeResult, DefenseSet,
    OperatingPoint,
};
use crate::error::{Error, Result};
use crate::grid::{GridCase, LineStateVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// K.
    pub attackers: usize,
    /// M.
    pub stages: usize,
    #[serde(default)]
    pub defense: DefenseSet,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            attackers: 3,
            stages: 3,
            defense: DefenseSet::none(),
            gamma: 0.99,
            seed: 0,
        }
    }
}

impl GameConfig {
    pub fn budget(&self) -> usize {
        self.attackers * self.stages
    }

    pub fn check(&self, n_lines: usize) -> Result<()> {
        if self.attackers == 0 || self.stages == 0 {
            return Err(Error::Domain("K and M must both be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Domain(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        self.defense.check(n_lines)
    }
}

/// Per-agent observation. Every agent sees the same line-state vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub state: LineStateVector,
    pub agents: usize,
}

impl Observation {
    pub fn agent(&self, _i: usize) -> &LineStateVector {
        &self.state
    }
}

/// One line per attacker.
pub type JointAction = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub rewards: Vec<f64>,
    /// L_t, MW.
    pub loss_mw: f64,
    /// L_total, MW.
    pub total_mw: f64,
}

impl RewardVector {
    pub fn shared(&self) -> f64 {
        self.rewards.first().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: RewardVector,
    pub done: bool,
    pub cascade: CascadeResult,
}

#[derive(Debug, Clone)]
pub struct AttackEnv {
    case: Arc<GridCase>,
    config: GameConfig,
    cascade: CascadeOptions,
    base_point: OperatingPoint,
    states: LineStateVector,
    point: OperatingPoint,
    stage: usize,
    total_generation: f64,
}

impl AttackEnv {
    pub fn new(case: Arc<GridCase>, config: GameConfig, cascade: CascadeOptions) -> Result<Self> {
        config.check(case.n_lines())?;
        let base_point = OperatingPoint::base(&case);
        let total_generation = base_point.served_generation();
        Ok(Self {
            states: LineStateVector::all_in_service(case.n_lines()),
            point: base_point.clone(),
            base_point,
            case,
            config,
            cascade,
            stage: 0,
            total_generation,
        })
    }

    pub fn case(&self) -> &GridCase {
        &self.case
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn cascade_options(&self) -> &CascadeOptions {
        &self.cascade
    }

    pub fn n_lines(&self) -> usize {
        self.case.n_lines()
    }

    /// Completed stages in the current episode.
    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn is_done(&self) -> bool {
        self.stage >= self.config.stages
    }

    /// L_total: generation served at reset, MW.
    pub fn total_generation(&self) -> f64 {
        self.total_generation
    }

    pub fn served_generation(&self) -> f64 {
        self.point.served_generation()
    }

    pub fn states(&self) -> &LineStateVector {
        &self.states
    }

    pub fn point(&self) -> &OperatingPoint {
        &self.point
    }

    pub fn set_defense(&mut self, defense: DefenseSet) -> Result<()> {
        defense.check(self.n_lines())?;
        self.config.defense = defense;
        Ok(())
    }

    pub fn reset(&mut self) -> Observation {
        self.states = LineStateVector::all_in_service(self.case.n_lines());
        self.point = self.base_point.clone();
        self.total_generation = self.point.served_generation();
        self.stage = 0;
        self.observation()
    }

    pub fn observation(&self) -> Observation {
        Observation {
            state: self.states.clone(),
            agents: self.config.attackers,
        }
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::State(format!(
                "episode finished after {} stages; call reset",
                self.config.stages
            )));
        }
        if actions.len() != self.config.attackers {
            return Err(Error::Dimension {
                what: "joint action",
                expected: self.config.attackers,
                actual: actions.len(),
            });
        }
        let attacks: Vec<AttackAction> = actions
            .iter()
            .enumerate()
            .map(|(attacker, &line)| AttackAction { attacker, line })
            .collect();
        let attacked = apply_attacks(&self.states, &attacks, &self.config.defense)?;
        let result = run_cascade(&self.case, &attacked, &self.point, &self.cascade)?;
        self.states = result.next_states.clone();
        self.point = result.point.clone();
        self.stage += 1;
        let fraction = if self.total_generation > 0.0 {
            result.generation_loss / self.total_generation
        } else {
            0.0
        };
        Ok(StepOutcome {
            observation: self.observation(),
            reward: RewardVector {
                rewards: vec![fraction; self.config.attackers],
                loss_mw: result.generation_loss,
                total_mw: self.total_generation,
            },
            done: self.is_done(),
            cascade: result,
        })
    }
}

/// Line-delimited episode trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub episode: usize,
    pub stage: usize,
    pub joint_action: Vec<usize>,
    pub reward: f64,
    pub loss_mw: f64,
    pub tripped_lines: Vec<usize>,
}

impl StageRecord {
    pub fn from_outcome(episode: usize, stage: usize, actions: &[usize], out: &StepOutcome) -> Self {
        Self {
            episode,
            stage,
            joint_action: actions.to_vec(),
            reward: out.reward.shared(),
            loss_mw: out.reward.loss_mw,
            tripped_lines: out.cascade.tripped_lines(),
        }
    }
}
