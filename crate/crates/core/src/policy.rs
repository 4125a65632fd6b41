//! Trained attacker policies and their checkpoint form.

use serde::{Deserialize, Serialize};

use crate::env::{AttackEnv, GameConfig, Observation};
use crate::error::{Error, Result};
use crate::neural::{argmax, Actor, ActorConfig, Checkpoint, Critic, CriticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Multi-agent actor-critic with attention, K attackers over M stages.
    Maac,
    /// Single attacker, one line per stage, value learning.
    Sams,
    /// All attackers in one stage.
    Mass,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Maac => "maac",
            Method::Sams => "sams",
            Method::Mass => "mass",
        }
    }

    /// Game geometry this method plays for a total budget of `budget`
    /// line removals, given the configured `(K, M)`.
    pub fn geometry(self, attackers: usize, stages: usize) -> (usize, usize) {
        let budget = attackers * stages;
        match self {
            Method::Maac => (attackers, stages),
            Method::Sams => (1, budget),
            Method::Mass => (budget, 1),
        }
    }

    /// `game` reshaped to this method's geometry.
    pub fn play(self, game: &GameConfig) -> GameConfig {
        let (attackers, stages) = self.geometry(game.attackers, game.stages);
        GameConfig {
            attackers,
            stages,
            ..game.clone()
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maac" => Ok(Method::Maac),
            "sams" => Ok(Method::Sams),
            "mass" => Ok(Method::Mass),
            other => Err(Error::Domain(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub method: Method,
    pub n_lines: usize,
    pub attackers: usize,
    pub stages: usize,
    pub actor: ActorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic: Option<CriticConfig>,
    pub episodes: usize,
    pub updates: u64,
}

/// One network per attacker. For the value-learning baseline the single
/// network's outputs are action values rather than logits; greedy play is
/// the argmax either way.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackerPolicy {
    pub meta: PolicyMeta,
    pub actors: Vec<Actor>,
    pub critic: Option<Critic>,
}

impl AttackerPolicy {
    pub fn attackers(&self) -> usize {
        self.actors.len()
    }

    pub fn n_lines(&self) -> usize {
        self.meta.n_lines
    }

    /// Greedy joint action.
    pub fn act_greedy(&self, obs: &Observation) -> Result<Vec<usize>> {
        self.actors
            .iter()
            .enumerate()
            .map(|(i, a)| Ok(argmax(&a.forward(&obs.agent(i).to_features())?.logits)))
            .collect()
    }

    pub fn check_env(&self, env: &AttackEnv) -> Result<()> {
        if env.n_lines() != self.meta.n_lines {
            return Err(Error::Compatibility(format!(
                "policy trained for {} lines, case has {}",
                self.meta.n_lines,
                env.n_lines()
            )));
        }
        if env.config().attackers != self.attackers() {
            return Err(Error::Compatibility(format!(
                "policy has {} attackers, game has {}",
                self.attackers(),
                env.config().attackers
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, config_digest: [u8; 32]) -> Checkpoint {
        let mut sets: Vec<_> = self
            .actors
            .iter()
            .enumerate()
            .map(|(i, a)| (format!("actor{i}"), a.params.clone()))
            .collect();
        if let Some(c) = &self.critic {
            sets.push(("critic".into(), c.params.clone()));
        }
        Checkpoint {
            config_digest,
            metadata: serde_json::to_string(&self.meta).expect("metadata serializes"),
            sets,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: PolicyMeta = serde_json::from_str(&ck.metadata)
            .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        if meta.actor.n_lines != meta.n_lines {
            return Err(Error::Compatibility("actor size disagrees with n_lines".into()));
        }
        let actors = (0..meta.attackers)
            .map(|i| Actor::from_params(meta.actor, ck.require(&format!("actor{i}"))?.clone()))
            .collect::<Result<Vec<_>>>()?;
        let critic = match (&meta.critic, ck.set("critic")) {
            (Some(cfg), Some(p)) => Some(Critic::from_params(*cfg, p.clone())?),
            _ => None,
        };
        Ok(Self {
            meta,
            actors,
            critic,
        })
    }
}
