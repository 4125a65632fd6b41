//! Centralized-critic training of K cooperating attackers.
//!
//! Each environment step samples a joint action from the current policies,
//! stores the transition with priority `Σ_i |y_i − Q_i| + ε`, and every
//! `update_every` steps (once the buffer holds `K · batch_size` entries) runs
//! one critic step, one step per actor, and soft target updates.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::CascadeOptions;
use crate::env::{AttackEnv, GameConfig};
use crate::error::{Error, Result};
use crate::grid::GridCase;
use crate::neural::{
    config_digest, entropy, sample_categorical, soft_update, Actor, ActorConfig, Adam, AdamConfig,
    Checkpoint, Critic, CriticConfig, HeadMode, ParamSet,
};
use crate::policy::{AttackerPolicy, Method, PolicyMeta};
use crate::replay::{InsertionPriority, ReplayBuffer, ReplayConfig, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSizes {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub pool: usize,
    pub actor_hidden: usize,
    pub embed: usize,
    pub attention: usize,
    pub critic_hidden: usize,
    pub head: HeadMode,
}

impl Default for NetworkSizes {
    fn default() -> Self {
        let a = ActorConfig::default();
        let c = CriticConfig::default();
        Self {
            conv1_channels: a.conv1_channels,
            conv2_channels: a.conv2_channels,
            kernel: a.kernel,
            pool: a.pool,
            actor_hidden: a.hidden,
            embed: c.embed,
            attention: c.attention,
            critic_hidden: c.hidden,
            head: c.head,
        }
    }
}

impl NetworkSizes {
    pub fn actor(&self, n_lines: usize) -> ActorConfig {
        ActorConfig {
            n_lines,
            conv1_channels: self.conv1_channels,
            conv2_channels: self.conv2_channels,
            kernel: self.kernel,
            pool: self.pool,
            hidden: self.actor_hidden,
        }
    }

    pub fn critic(&self, n_lines: usize, agents: usize) -> CriticConfig {
        CriticConfig {
            n_lines,
            agents,
            embed: self.embed,
            attention: self.attention,
            hidden: self.critic_hidden,
            head: self.head,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationSchedule {
    pub start: f64,
    pub end: f64,
    /// Fraction of all episodes over which epsilon decays linearly.
    pub decay_fraction: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.5,
        }
    }
}

impl ExplorationSchedule {
    pub fn epsilon(&self, episode: usize, episodes: usize) -> f64 {
        let horizon = (self.decay_fraction * episodes as f64).max(1.0);
        let frac = (episode as f64 / horizon).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Z.
    pub episodes: usize,
    pub batch_size: usize,
    /// Environment steps between learning updates.
    pub update_every: usize,
    /// Soft target-update rate ξ.
    pub tau: f64,
    /// Entropy temperature φ.
    pub entropy_temperature: f64,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub replay: ReplayConfig,
    pub networks: NetworkSizes,
    /// Epsilon-greedy schedule of the value-learning baseline.
    pub exploration: ExplorationSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 100_000,
            batch_size: 128,
            update_every: 100,
            tau: 0.01,
            entropy_temperature: 0.05,
            gamma: 0.99,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            clip_norm: Some(10.0),
            seed: 0,
            replay: ReplayConfig::default(),
            networks: NetworkSizes::default(),
            exploration: ExplorationSchedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.tau > 1.0 {
            return Err(Error::Domain("tau must be at most 1".into()));
        }
        if !(self.entropy_temperature >= 0.0) {
            return Err(Error::Domain("entropy temperature must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Domain(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.episodes == 0 || self.batch_size == 0 || self.update_every == 0 {
            return Err(Error::Domain(
                "episodes, batch_size and update_every must be at least 1".into(),
            ));
        }
        self.replay.check()
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }
}

/// Digest identifying a training setup; stored in every checkpoint.
pub fn run_digest(method: Method, game: &GameConfig, train: &TrainConfig, n_lines: usize) -> [u8; 32] {
    let canonical = serde_json::json!({
        "method": method,
        "n_lines": n_lines,
        "game": game,
        "train": train,
    });
    config_digest(&canonical.to_string())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub loss_mw: f64,
    /// Mean critic loss of the updates run during this episode.
    pub critic_loss: Option<f64>,
    /// Mean policy entropy over agents at the last update.
    pub entropy: Option<f64>,
    pub beta: f64,
    pub updates: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub critic_loss: f64,
    /// `δ_g = Σ_i |y_i − Q_i|` per transition.
    pub td_totals: Vec<f64>,
    pub targets: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub baselines: Vec<Vec<f64>>,
    pub entropy: Vec<f64>,
    pub critic_grad_norm: f64,
}

fn state_features(batch: &[&Transition]) -> Vec<Vec<f64>> {
    batch.iter().map(|t| t.state.to_features()).collect()
}

fn shared_obs(f: &[f64], k: usize) -> Vec<&[f64]> {
    vec![f; k]
}

/// Targets with fixed next actions `ã`:
/// `y_i = r_i + γ(−φ log π̄_i(ã_i|õ) + Q̄_i(õ, ã))`, and `y_i = r_i` on
/// terminal transitions.
pub fn targets_for_actions(
    batch: &[&Transition],
    next_actions: &[Vec<usize>],
    target_actors: &[Actor],
    target_critic: &Critic,
    gamma: f64,
    phi: f64,
) -> Result<Vec<Vec<f64>>> {
    let k = target_actors.len();
    let mut out = Vec::with_capacity(batch.len());
    for (t, next) in batch.iter().zip(next_actions) {
        if t.done || gamma == 0.0 {
            out.push(t.rewards.clone());
            continue;
        }
        let f = t.next_state.to_features();
        let q = target_critic.forward(&shared_obs(&f, k), next)?;
        let mut y = Vec::with_capacity(k);
        for i in 0..k {
            let logp = target_actors[i].forward(&f)?.log_probs()[next[i]];
            y.push(t.rewards[i] + gamma * (-phi * logp + q.q_taken(i)));
        }
        out.push(y);
    }
    Ok(out)
}

/// Targets with `ã` drawn once per transition from the target policies.
pub fn compute_targets(
    batch: &[&Transition],
    target_actors: &[Actor],
    target_critic: &Critic,
    gamma: f64,
    phi: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut next_actions = Vec::with_capacity(batch.len());
    for t in batch {
        if t.done || gamma == 0.0 {
            next_actions.push(t.actions.clone());
            continue;
        }
        let f = t.next_state.to_features();
        let joint = target_actors
            .iter()
            .map(|a| Ok(sample_categorical(&a.probs(&f)?, rng)))
            .collect::<Result<Vec<_>>>()?;
        next_actions.push(joint);
    }
    targets_for_actions(batch, &next_actions, target_actors, target_critic, gamma, phi)
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub loss: f64,
    pub td_totals: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub grads: ParamSet,
}

/// `L = Σ_g Σ_i ω_g (Q_i − y_i)² / B` and its gradient.
pub fn critic_loss(
    critic: &Critic,
    batch: &[&Transition],
    targets: &[Vec<f64>],
    weights: &[f64],
) -> Result<CriticLoss> {
    let k = critic.config.agents;
    let b = batch.len() as f64;
    let mut grads = critic.params.zeros_like();
    let mut loss = 0.0;
    let mut td_totals = Vec::with_capacity(batch.len());
    let mut q_all = Vec::with_capacity(batch.len());
    for ((t, y), &w) in batch.iter().zip(targets).zip(weights) {
        let f = t.state.to_features();
        let cache = critic.forward(&shared_obs(&f, k), &t.actions)?;
        let q: Vec<f64> = (0..k).map(|i| cache.q_taken(i)).collect();
        let mut dq = vec![0.0; k];
        let mut td = 0.0;
        for i in 0..k {
            let diff = q[i] - y[i];
            loss += w * diff * diff / b;
            dq[i] = 2.0 * w * diff / b;
            td += diff.abs();
        }
        critic.backward(&cache, &critic.taken_gradient(&cache, &dq), &mut grads);
        td_totals.push(td);
        q_all.push(q);
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite critic loss".into()));
    }
    Ok(CriticLoss {
        loss,
        td_totals,
        q: q_all,
        grads,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageTerms {
    pub actions: Vec<Vec<usize>>,
    pub rho: Vec<Vec<f64>>,
    pub baselines: Vec<Vec<f64>>,
    /// Mean policy entropy per agent over the batch.
    pub entropy: Vec<f64>,
}

/// Samples `a ~ π` at every state and evaluates
/// `ρ_i = −φ log π_i(a_i) + Q_i(o, a) − Σ_ã π_i(ã) Q_i(o, (ã, a_{-i}))`.
pub fn advantage_terms(
    actors: &[Actor],
    critic: &Critic,
    states: &[Vec<f64>],
    phi: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AdvantageTerms> {
    let k = actors.len();
    let mut terms = AdvantageTerms {
        actions: Vec::with_capacity(states.len()),
        rho: Vec::with_capacity(states.len()),
        baselines: Vec::with_capacity(states.len()),
        entropy: vec![0.0; k],
    };
    for f in states {
        let mut probs = Vec::with_capacity(k);
        let mut joint = Vec::with_capacity(k);
        for (i, actor) in actors.iter().enumerate() {
            let p = actor.probs(f)?;
            joint.push(sample_categorical(&p, rng));
            terms.entropy[i] += entropy(&p) / states.len() as f64;
            probs.push(p);
        }
        let values = critic.action_values(&shared_obs(f, k), &joint)?;
        let mut rho = Vec::with_capacity(k);
        let mut base = Vec::with_capacity(k);
        for i in 0..k {
            let d: f64 = probs[i].iter().zip(&values[i]).map(|(p, q)| p * q).sum();
            let logp = probs[i][joint[i]].max(f64::MIN_POSITIVE).ln();
            rho.push(-phi * logp + values[i][joint[i]] - d);
            base.push(d);
        }
        terms.actions.push(joint);
        terms.rho.push(rho);
        terms.baselines.push(base);
    }
    Ok(terms)
}

/// Surrogate `−(1/B) Σ_g Σ_i ρ_i log π_i(a_i|o)` with `ρ` held fixed, and
/// its gradient for every actor.
pub fn actor_surrogate(
    actors: &[Actor],
    states: &[Vec<f64>],
    actions: &[Vec<usize>],
    rho: &[Vec<f64>],
) -> Result<(f64, Vec<ParamSet>)> {
    let b = states.len() as f64;
    let mut grads: Vec<ParamSet> = actors.iter().map(|a| a.params.zeros_like()).collect();
    let mut loss = 0.0;
    for ((f, joint), r) in states.iter().zip(actions).zip(rho) {
        for (i, actor) in actors.iter().enumerate() {
            let cache = actor.forward(f)?;
            let p = cache.probs();
            let logp = cache.log_probs()[joint[i]];
            loss -= r[i] * logp / b;
            let dlogits: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(a, &pa)| -r[i] / b * ((a == joint[i]) as u8 as f64 - pa))
                .collect();
            actor.backward(&cache, &dlogits, &mut grads[i]);
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite actor surrogate".into()));
    }
    Ok((loss, grads))
}

/// Common interface of the attacker trainers.
pub trait AttackTrainer {
    fn run_episode(&mut self) -> Result<EpisodeRecord>;
    fn episodes_done(&self) -> usize;
    fn policy(&self) -> AttackerPolicy;
    fn digest(&self) -> [u8; 32];

    fn checkpoint(&self) -> Checkpoint {
        self.policy().to_checkpoint(self.digest())
    }

    /// Runs the remaining configured episodes, handing each record to `log`.
    fn train(&mut self, episodes: usize, mut log: impl FnMut(&EpisodeRecord)) -> Result<Vec<EpisodeRecord>>
    where
        Self: Sized,
    {
        let mut records = Vec::with_capacity(episodes.saturating_sub(self.episodes_done()));
        while self.episodes_done() < episodes {
            let r = self.run_episode()?;
            log(&r);
            records.push(r);
        }
        Ok(records)
    }
}

pub struct MaacTrainer {
    method: Method,
    game: GameConfig,
    config: TrainConfig,
    env: AttackEnv,
    actors: Vec<Actor>,
    target_actors: Vec<Actor>,
    critic: Critic,
    target_critic: Critic,
    actor_opts: Vec<Adam>,
    critic_opt: Adam,
    replay: ReplayBuffer<Transition>,
    rng: ChaCha8Rng,
    steps: u64,
    updates: u64,
    episode: usize,
    started: Instant,
    digest: [u8; 32],
}

impl MaacTrainer {
    pub fn new(
        case: Arc<GridCase>,
        game: GameConfig,
        config: TrainConfig,
        cascade: CascadeOptions,
    ) -> Result<Self> {
        Self::with_method(Method::Maac, case, game, config, cascade)
    }

    /// `method` only labels the run; the game geometry is taken from `game`.
    pub fn with_method(
        method: Method,
        case: Arc<GridCase>,
        game: GameConfig,
        config: TrainConfig,
        cascade: CascadeOptions,
    ) -> Result<Self> {
        config.check()?;
        let n = case.n_lines();
        let k = game.attackers;
        let digest = run_digest(method, &game, &config, n);
        let env = AttackEnv::new(case, game.clone(), cascade)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let actor_cfg = config.networks.actor(n);
        let actors: Vec<Actor> = (0..k).map(|_| Actor::new(actor_cfg, &mut rng)).collect();
        let critic = Critic::new(config.networks.critic(n, k), &mut rng);
        let actor_opts = actors
            .iter()
            .map(|a| Adam::new(config.adam(config.actor_lr), &a.params))
            .collect();
        let critic_opt = Adam::new(config.adam(config.critic_lr), &critic.params);
        Ok(Self {
            method,
            replay: ReplayBuffer::new(config.replay)?,
            target_actors: actors.clone(),
            target_critic: critic.clone(),
            actors,
            critic,
            actor_opts,
            critic_opt,
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

    pub fn actors(&self) -> &[Actor] {
        &self.actors
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn replay(&self) -> &ReplayBuffer<Transition> {
        &self.replay
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn insertion_priority(&mut self, t: &Transition) -> Result<f64> {
        match self.config.replay.insertion {
            InsertionPriority::Max => Ok(self.replay.max_priority()),
            InsertionPriority::Computed => {
                let batch = [t];
                let y = compute_targets(
                    &batch,
                    &self.target_actors,
                    &self.target_critic,
                    self.config.gamma,
                    self.config.entropy_temperature,
                    &mut self.rng,
                )?;
                let f = t.state.to_features();
                let k = self.game.attackers;
                let cache = self.critic.forward(&shared_obs(&f, k), &t.actions)?;
                let td: f64 = (0..k).map(|i| (y[0][i] - cache.q_taken(i)).abs()).sum();
                Ok(td + self.config.replay.epsilon)
            }
        }
    }

    /// One learning update on a prioritized batch.
    pub fn update(&mut self) -> Result<LossReport> {
        let cfg = &self.config;
        let batch = self.replay.sample(cfg.batch_size, &mut self.rng)?;
        let items: Vec<Transition> = batch.items.iter().map(|t| (*t).clone()).collect();
        let indices = batch.indices.clone();
        let weights = batch.weights.clone();
        let refs: Vec<&Transition> = items.iter().collect();

        let targets = compute_targets(
            &refs,
            &self.target_actors,
            &self.target_critic,
            cfg.gamma,
            cfg.entropy_temperature,
            &mut self.rng,
        )?;
        let mut closs = critic_loss(&self.critic, &refs, &targets, &weights)?;
        self.replay.update_priorities(&indices, &closs.td_totals)?;
        let norm = self.critic_opt.step(&mut self.critic.params, &mut closs.grads)?;

        let states = state_features(&refs);
        let terms = advantage_terms(
            &self.actors,
            &self.critic,
            &states,
            self.config.entropy_temperature,
            &mut self.rng,
        )?;
        let (_, mut grads) = actor_surrogate(&self.actors, &states, &terms.actions, &terms.rho)?;
        for ((actor, opt), g) in self.actors.iter_mut().zip(&mut self.actor_opts).zip(&mut grads) {
            opt.step(&mut actor.params, g)?;
        }

        let tau = self.config.tau;
        soft_update(&mut self.target_critic.params, &self.critic.params, tau)?;
        for (t, o) in self.target_actors.iter_mut().zip(&self.actors) {
            soft_update(&mut t.params, &o.params, tau)?;
        }
        self.replay.anneal_beta();
        self.updates += 1;
        Ok(LossReport {
            critic_loss: closs.loss,
            td_totals: closs.td_totals,
            targets,
            rho: terms.rho,
            baselines: terms.baselines,
            entropy: terms.entropy,
            critic_grad_norm: norm,
        })
    }
}

impl AttackTrainer for MaacTrainer {
    fn run_episode(&mut self) -> Result<EpisodeRecord> {
        let k = self.game.attackers;
        let mut obs = self.env.reset();
        let mut ret = 0.0;
        let mut loss_mw = 0.0;
        let mut critic_losses = Vec::new();
        let mut last_entropy = None;
        loop {
            let f = obs.state.to_features();
            let mut joint = Vec::with_capacity(k);
            for actor in &self.actors {
                let p = actor.probs(&f)?;
                joint.push(sample_categorical(&p, &mut self.rng));
            }
            let out = self.env.step(&joint)?;
            ret += out.reward.shared();
            loss_mw += out.reward.loss_mw;
            let t = Transition {
                state: obs.state.clone(),
                actions: joint,
                next_state: out.observation.state.clone(),
                rewards: out.reward.rewards.clone(),
                done: out.done,
            };
            let priority = self.insertion_priority(&t)?;
            self.replay.insert(t, priority)?;
            self.steps += 1;
            if self.replay.len() >= k * self.config.batch_size
                && self.steps % self.config.update_every as u64 == 0
            {
                let report = self.update()?;
                critic_losses.push(report.critic_loss);
                last_entropy = Some(report.entropy.iter().sum::<f64>() / k as f64);
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
            critic_loss: (!critic_losses.is_empty())
                .then(|| critic_losses.iter().sum::<f64>() / critic_losses.len() as f64),
            entropy: last_entropy,
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
                method: self.method,
                n_lines: self.env.n_lines(),
                attackers: self.game.attackers,
                stages: self.game.stages,
                actor: self.actors[0].config,
                critic: Some(self.critic.config),
                episodes: self.episode,
                updates: self.updates,
            },
            actors: self.actors.clone(),
            critic: Some(self.critic.clone()),
        }
    }

    fn digest(&self) -> [u8; 32] {
        self.digest
    }
}

/// Everything a finished training run produces.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub method: Method,
    /// Geometry actually played.
    pub game: GameConfig,
    pub policy: AttackerPolicy,
    pub log: Vec<EpisodeRecord>,
    pub checkpoint: Checkpoint,
}

/// Builds the trainer for `method`. `game` gives K, M and the defense;
/// baselines reshape it to their own geometry with the same budget.
pub fn build_trainer(
    method: Method,
    case: Arc<GridCase>,
    game: &GameConfig,
    config: &TrainConfig,
    cascade: CascadeOptions,
) -> Result<Box<dyn AttackTrainer>> {
    Ok(match method {
        Method::Sams => Box::new(crate::dqn::DqnTrainer::new(case, game, config.clone(), cascade)?),
        Method::Maac | Method::Mass => Box::new(MaacTrainer::with_method(
            method,
            case,
            method.play(game),
            config.clone(),
            cascade,
        )?),
    })
}

pub fn train_method(
    method: Method,
    case: Arc<GridCase>,
    game: &GameConfig,
    config: &TrainConfig,
    cascade: CascadeOptions,
    mut log: impl FnMut(&EpisodeRecord),
) -> Result<TrainedRun> {
    let mut trainer = build_trainer(method, case, game, config, cascade)?;
    let mut records = Vec::with_capacity(config.episodes);
    while trainer.episodes_done() < config.episodes {
        let r = trainer.run_episode()?;
        log(&r);
        records.push(r);
    }
    let policy = trainer.policy();
    Ok(TrainedRun {
        method,
        game: method.play(game),
        checkpoint: trainer.checkpoint(),
        policy,
        log: records,
    })
}
