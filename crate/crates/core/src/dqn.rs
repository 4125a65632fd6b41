//! Single-attacker value-learning baseline.
//!
//! One attacker removes one line per stage for `K · M` stages. The value
//! network has the actor's topology with its softmax dropped; replay is
//! uniform and exploration is epsilon-greedy.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cascade::CascadeOptions;
use crate::env::{AttackEnv, GameConfig};
use crate::error::Result;
use crate::grid::GridCase;
use crate::neural::{argmax, soft_update, Actor, Adam, AdamConfig, ParamSet};
use crate::policy::{AttackerPolicy, Method, PolicyMeta};
use crate::replay::{InsertionPriority, ReplayBuffer, ReplayConfig, Transition};
use crate::trainer::{run_digest, AttackTrainer, EpisodeRecord, TrainConfig};

/// Mean squared TD loss `(1/B) Σ (Q(s,a) − y)²` with
/// `y = r + γ max Q̄(s', ·)` on non-terminal steps.
pub fn dqn_loss(
    online: &Actor,
    target: &Actor,
    batch: &[&Transition],
    gamma: f64,
) -> Result<(f64, ParamSet)> {
    let b = batch.len() as f64;
    let mut grads = online.params.zeros_like();
    let mut loss = 0.0;
    for t in batch {
        let mut y = t.rewards[0];
        if !t.done && gamma > 0.0 {
            let next = target.forward(&t.next_state.to_features())?.logits;
            y += gamma * next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
        let cache = online.forward(&t.state.to_features())?;
        let a = t.actions[0];
        let diff = cache.logits[a] - y;
        loss += diff * diff / b;
        let mut d = vec![0.0; cache.logits.len()];
        d[a] = 2.0 * diff / b;
        online.backward(&cache, &d, &mut grads);
    }
    Ok((loss, grads))
}

pub struct DqnTrainer {
    game: GameConfig,
    config: TrainConfig,
    env: AttackEnv,
    online: Actor,
    target: Actor,
    opt: Adam,
    replay: ReplayBuffer<Transition>,
    rng: ChaCha8Rng,
    steps: u64,
    updates: u64,
    episode: usize,
    started: Instant,
    digest: [u8; 32],
}

impl DqnTrainer {
    /// One attacker over `K · M` stages of `game`.
    pub fn new(
        case: Arc<GridCase>,
        game: &GameConfig,
        config: TrainConfig,
        cascade: CascadeOptions,
    ) -> Result<Self> {
        config.check()?;
        let game = Method::Sams.play(game);
        let n = case.n_lines();
        let digest = run_digest(Method::Sams, &game, &config, n);
        let env = AttackEnv::new(case, game.clone(), cascade)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let online = Actor::new(config.networks.actor(n), &mut rng);
        let replay = ReplayBuffer::new(ReplayConfig {
            alpha: 0.0,
            beta: 0.0,
            beta_step: 0.0,
            insertion: InsertionPriority::Max,
            ..config.replay
        })?;
        Ok(Self {
            opt: Adam::new(
                AdamConfig {
                    lr: config.critic_lr,
                    clip_norm: config.clip_norm,
                    ..AdamConfig::default()
                },
                &online.params,
            ),
            target: online.clone(),
            online,
            replay,
            game,
            config,
            env,
            rng,
            steps: 0,
            updates: 0,
            episode: 0,
            started: Instant::now(),
            digest,
        })
    }

    pub fn game(&self) -> &GameConfig {
        &self.game
    }

    fn update(&mut self) -> Result<f64> {
        let batch = self.replay.sample(self.config.batch_size, &mut self.rng)?;
        let items: Vec<&Transition> = batch.items.clone();
        let (loss, mut grads) = dqn_loss(&self.online, &self.target, &items, self.config.gamma)?;
        self.opt.step(&mut self.online.params, &mut grads)?;
        soft_update(&mut self.target.params, &self.online.params, self.config.tau)?;
        self.updates += 1;
        Ok(loss)
    }
}

impl AttackTrainer for DqnTrainer {
    fn run_episode(&mut self) -> Result<EpisodeRecord> {
        let eps = self
            .config
            .exploration
            .epsilon(self.episode, self.config.episodes);
        let n = self.env.n_lines();
        let mut obs = self.env.reset();
        let mut ret = 0.0;
        let mut loss_mw = 0.0;
        let mut losses = Vec::new();
        loop {
            let action = if self.rng.random::<f64>() < eps {
                self.rng.random_range(0..n)
            } else {
                argmax(&self.online.forward(&obs.state.to_features())?.logits)
            };
            let out = self.env.step(&[action])?;
            ret += out.reward.shared();
            loss_mw += out.reward.loss_mw;
            let t = Transition {
                state: obs.state.clone(),
                actions: vec![action],
                next_state: out.observation.state.clone(),
                rewards: out.reward.rewards.clone(),
                done: out.done,
            };
            self.replay.insert(t, 1.0)?;
            self.steps += 1;
            if self.replay.len() >= self.config.batch_size
                && self.steps % self.config.update_every as u64 == 0
            {
                losses.push(self.update()?);
            }
            obs = out.observation;
            if out.done {
                break;
            }
        }
        let record = EpisodeRecord {
            episode: self.episode,
            episode_return: ret,
            loss_mw,
            critic_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            entropy: None,
            beta: self.replay.beta(),
            updates: self.updates,
            wall_ms: self.started.elapsed().as_millis() as u64,
        };
        self.episode += 1;
        Ok(record)
    }

    fn episodes_done(&self) -> usize {
        self.episode
    }

    fn policy(&self) -> AttackerPolicy {
        AttackerPolicy {
            meta: PolicyMeta {
                method: Method::Sams,
                n_lines: self.env.n_lines(),
                attackers: 1,
                stages: self.game.stages,
                actor: self.online.config,
                critic: None,
                episodes: self.episode,
                updates: self.updates,
            },
            actors: vec![self.online.clone()],
            critic: None,
        }
    }

    fn digest(&self) -> [u8; 32] {
        self.digest
    }
}
