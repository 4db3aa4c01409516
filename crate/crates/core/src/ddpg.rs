//! Deterministic actor–critic training over the co-simulation environment:
//! replay buffer, exploration noise, target networks with Polyak tracking,
//! the per-batch update, the episode loop, and parallel policy evaluation.
//!
//! The actor maps the flattened observation to an action vector in
//! `(0,1)^dim` (tanh/tanh/sigmoid). The critic scores `(observation,
//! action)` pairs with the action concatenated at the first hidden layer:
//! a relu stem embeds the observation, then a relu/linear head consumes
//! `[stem output, action]`.

use crate::env::{DoneReason, Env, EnvState};
use crate::neural::{soft_update, Activation, Adam, Mlp, NeuralError, Trace};
use crate::operator::Directive;
use crate::seeds;
use crate::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {what} at episode {episode}")]
    NonFinite { what: &'static str, episode: u32 },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("environment error: {0}")]
    Env(#[from] crate::env::EnvError),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("state file is not a recognized trainer snapshot")]
    BadState,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Critic: observation stem and joint head. `q = head([stem(obs), action])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub stem: Mlp,
    pub head: Mlp,
}

/// Parameter gradients of a scalar multiple of `q`, plus the gradient with
/// respect to the action input.
#[derive(Debug, Clone)]
pub struct CriticGrads {
    pub stem: Vec<Real>,
    pub head: Vec<Real>,
    pub action: Vec<Real>,
}

/// One evaluated `(observation, action)` pair with stored traces, ready for
/// a backward pass.
pub struct CriticEval<'a> {
    critic: &'a Critic,
    stem_trace: Trace,
    head_trace: Trace,
}

impl Critic {
    pub fn new(obs_dim: usize, action_dim: usize, hidden: (usize, usize), seed: u64) -> Self {
        let stem = Mlp::new(
            obs_dim,
            &[(hidden.0, Activation::Relu)],
            seeds::substream(seed, "critic-stem", 0),
        );
        let head = Mlp::new(
            hidden.0 + action_dim,
            &[(hidden.1, Activation::Relu), (1, Activation::Linear)],
            seeds::substream(seed, "critic-head", 0),
        );
        Self { stem, head }
    }

    pub fn action_dim(&self) -> usize {
        self.head.input_dim() - self.stem.output_dim()
    }

    pub fn eval(&self, obs: &[Real], action: &[Real]) -> Result<CriticEval<'_>, NeuralError> {
        let stem_trace = self.stem.forward_trace(obs)?;
        let mut joint = stem_trace.output().to_vec();
        joint.extend_from_slice(action);
        let head_trace = self.head.forward_trace(&joint)?;
        Ok(CriticEval { critic: self, stem_trace, head_trace })
    }

    pub fn q(&self, obs: &[Real], action: &[Real]) -> Result<Real, NeuralError> {
        Ok(self.eval(obs, action)?.q())
    }
}

impl CriticEval<'_> {
    pub fn q(&self) -> Real {
        self.head_trace.output()[0]
    }

    /// Gradients of `upstream * q` with respect to both parameter blocks
    /// and the action.
    pub fn backward(&self, upstream: Real) -> Result<CriticGrads, NeuralError> {
        let head_g = self.critic.head.backward_from_trace(&self.head_trace, &[upstream])?;
        let split = self.critic.stem.output_dim();
        let (dstem_out, daction) = head_g.input.split_at(split);
        let stem_g = self.critic.stem.backward_from_trace(&self.stem_trace, dstem_out)?;
        Ok(CriticGrads { stem: stem_g.params, head: head_g.params, action: daction.to_vec() })
    }
}

/// Online and target networks with the discount and tracking constants.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub actor: Mlp,
    pub critic: Critic,
    pub target_actor: Mlp,
    pub target_critic: Critic,
    pub gamma: Real,
    pub tau: Real,
}

impl AgentNets {
    /// Fresh networks; targets start as exact copies of the online nets.
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        hidden: (usize, usize),
        gamma: Real,
        tau: Real,
        seed: u64,
    ) -> Self {
        let actor = Mlp::new(
            obs_dim,
            &[
                (hidden.0, Activation::Tanh),
                (hidden.1, Activation::Tanh),
                (action_dim, Activation::Sigmoid),
            ],
            seeds::substream(seed, "actor", 0),
        );
        let critic = Critic::new(obs_dim, action_dim, hidden, seeds::substream(seed, "critic", 0));
        Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            gamma,
            tau,
        }
    }

    fn soft_update_targets(&mut self) {
        soft_update(&mut self.target_actor, &self.actor, self.tau);
        soft_update(&mut self.target_critic.stem, &self.critic.stem, self.tau);
        soft_update(&mut self.target_critic.head, &self.critic.head, self.tau);
    }
}

/// One stored experience. The reward is stored pre-scaled (see
/// [`TrainConfig::reward_scale`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<Real>,
    pub action: Vec<Real>,
    pub reward: Real,
    pub next_obs: Vec<Real>,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions with deterministic uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    ring: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, ring: Vec::new(), next: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.ring.len() < self.capacity {
            self.ring.push(t);
        } else {
            self.ring[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.ring[i]
    }

    /// Uniform batch of distinct indices.
    pub fn sample_indices(&mut self, batch: usize) -> Vec<usize> {
        let k = batch.min(self.ring.len());
        rand::seq::index::sample(&mut self.rng, self.ring.len(), k).into_vec()
    }
}

/// Ornstein–Uhlenbeck exploration noise (zero mean, unit time step).
#[derive(Debug, Clone)]
pub struct OuNoise {
    pub theta: Real,
    pub sigma: Real,
    state: Vec<Real>,
    rng: ChaCha8Rng,
}

impl OuNoise {
    pub fn new(dim: usize, theta: Real, sigma: Real, seed: u64) -> Self {
        Self { theta, sigma, state: vec![0.0; dim], rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Zeroes the temporal state (episode start).
    pub fn reset(&mut self) {
        self.state.fill(0.0);
    }

    pub fn sample(&mut self) -> Vec<Real> {
        for s in &mut self.state {
            let z: Real = rand_distr::StandardNormal.sample(&mut self.rng);
            *s += self.theta * (0.0 - *s) + self.sigma * z;
        }
        self.state.clone()
    }
}

/// Actor forward pass; with a noise process the perturbed action is clamped
/// back into `[0, 1]` per dimension.
pub fn select_action(
    actor: &Mlp,
    obs: &[Real],
    noise: Option<&mut OuNoise>,
) -> Result<Vec<Real>, NeuralError> {
    let mut a = actor.forward(obs)?;
    if let Some(n) = noise {
        for (ai, ni) in a.iter_mut().zip(n.sample()) {
            *ai = (*ai + ni).clamp(0.0, 1.0);
        }
    }
    Ok(a)
}

/// Optimizer state for the three parameter blocks.
#[derive(Debug, Clone)]
pub struct OptimBundle {
    pub actor: Adam,
    pub stem: Adam,
    pub head: Adam,
}

impl OptimBundle {
    pub fn new(nets: &AgentNets) -> Self {
        Self {
            actor: Adam::new(nets.actor.n_params()),
            stem: Adam::new(nets.critic.stem.n_params()),
            head: Adam::new(nets.critic.head.n_params()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainMetrics {
    pub critic_loss: Real,
    pub actor_objective: Real,
}

/// Bootstrapped regression targets: `y = r` on terminal transitions, else
/// `y = r + gamma * Q'(s', mu'(s'))`.
fn bootstrap_targets(nets: &AgentNets, batch: &[&Transition]) -> Result<Vec<Real>, NeuralError> {
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                Ok(t.reward)
            } else {
                let a = nets.target_actor.forward(&t.next_obs)?;
                Ok(t.reward + nets.gamma * nets.target_critic.q(&t.next_obs, &a)?)
            }
        })
        .collect()
}

/// Mean squared error against fixed targets and its parameter gradients.
fn critic_loss_and_grads(
    nets: &AgentNets,
    batch: &[&Transition],
    targets: &[Real],
) -> Result<(Real, Vec<Real>, Vec<Real>), NeuralError> {
    let nb = batch.len() as Real;
    let mut stem_acc = vec![0.0; nets.critic.stem.n_params()];
    let mut head_acc = vec![0.0; nets.critic.head.n_params()];
    let mut loss = 0.0;
    for (t, &y) in batch.iter().zip(targets) {
        let eval = nets.critic.eval(&t.obs, &t.action)?;
        let q = eval.q();
        loss += (y - q) * (y - q) / nb;
        let grads = eval.backward(2.0 * (q - y) / nb)?;
        for (a, g) in stem_acc.iter_mut().zip(&grads.stem) {
            *a += g;
        }
        for (a, g) in head_acc.iter_mut().zip(&grads.head) {
            *a += g;
        }
    }
    Ok((loss, stem_acc, head_acc))
}

/// Mean critic value of the actor's own actions and the gradients of that
/// objective with respect to the actor parameters (for ascent).
fn actor_objective_and_grads(
    nets: &AgentNets,
    batch: &[&Transition],
) -> Result<(Real, Vec<Real>), NeuralError> {
    let nb = batch.len() as Real;
    let mut acc = vec![0.0; nets.actor.n_params()];
    let mut objective = 0.0;
    for t in batch {
        let trace = nets.actor.forward_trace(&t.obs)?;
        let eval = nets.critic.eval(&t.obs, trace.output())?;
        objective += eval.q() / nb;
        let dq = eval.backward(1.0)?;
        let upstream: Vec<Real> = dq.action.iter().map(|g| g / nb).collect();
        let ag = nets.actor.backward_from_trace(&trace, &upstream)?;
        for (a, g) in acc.iter_mut().zip(&ag.params) {
            *a += g;
        }
    }
    Ok((objective, acc))
}

/// One update: critic regression step toward the bootstrapped targets, actor
/// ascent step through the critic, then target tracking.
pub fn train_step(
    nets: &mut AgentNets,
    batch: &[&Transition],
    opt: &mut OptimBundle,
    lr_actor: Real,
    lr_critic: Real,
) -> Result<TrainMetrics, TrainError> {
    assert!(!batch.is_empty(), "training batch must be non-empty");
    let targets = bootstrap_targets(nets, batch)?;
    let (critic_loss, stem_g, head_g) = critic_loss_and_grads(nets, batch, &targets)?;
    if !critic_loss.is_finite() {
        return Err(TrainError::NonFinite { what: "critic loss", episode: 0 });
    }
    opt.stem.step(nets.critic.stem.params_mut(), &stem_g, lr_critic);
    opt.head.step(nets.critic.head.params_mut(), &head_g, lr_critic);

    let (actor_objective, actor_g) = actor_objective_and_grads(nets, batch)?;
    if !actor_objective.is_finite() {
        return Err(TrainError::NonFinite { what: "actor objective", episode: 0 });
    }
    // Ascend the objective: Adam minimizes, so negate.
    let descent: Vec<Real> = actor_g.iter().map(|g| -g).collect();
    opt.actor.step(nets.actor.params_mut(), &descent, lr_actor);

    nets.soft_update_targets();
    Ok(TrainMetrics { critic_loss, actor_objective })
}

/// Maps raw actor outputs to operator directives for a given environment.
pub trait ActionDecoder: Send + Sync {
    fn action_dim(&self) -> usize;
    fn decode(&self, action: &[Real], env: &Env, st: &EnvState) -> Directive;
}

/// A control policy driving one episode at a time.
pub trait Policy: Send {
    /// Called once per episode before the first action.
    fn begin_episode(&mut self, env: &Env) {
        let _ = env;
    }
    fn act(&mut self, env: &Env, st: &EnvState) -> Directive;
}

/// Greedy (noiseless) actor policy over a decoder.
pub struct ActorPolicy<'a> {
    pub actor: &'a Mlp,
    pub decoder: &'a dyn ActionDecoder,
}

impl Policy for ActorPolicy<'_> {
    fn act(&mut self, env: &Env, st: &EnvState) -> Directive {
        let obs = env.observation_vector(st);
        let action = select_action(self.actor, &obs, None)
            .expect("actor input dimension matches the environment");
        self.decoder.decode(&action, env, st)
    }
}

/// Outcome of one full episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub seed: u64,
    pub steps: u32,
    /// Undiscounted sum of per-step signed rewards (non-positive).
    pub total_penalty: Real,
    /// Component sums in order: load loss, live isolation, fire mismatch,
    /// non-convergence.
    pub r_sums: [Real; 4],
    /// True when the episode ended on dispatch non-convergence.
    pub ended_early: bool,
}

/// Runs one episode under a policy and accumulates the penalty breakdown.
pub fn rollout(env: &Env, policy: &mut dyn Policy, seed: u64) -> Result<EpisodeStats, TrainError> {
    let mut st = env.reset(seed);
    policy.begin_episode(env);
    let mut stats = EpisodeStats {
        seed,
        steps: 0,
        total_penalty: 0.0,
        r_sums: [0.0; 4],
        ended_early: false,
    };
    while !st.done {
        let action = policy.act(env, &st);
        let (_, reward, _) = env.step(&mut st, &action)?;
        stats.steps += 1;
        stats.total_penalty += reward.total;
        stats.r_sums[0] += reward.r1_load_loss;
        stats.r_sums[1] += reward.r2_piaw;
        stats.r_sums[2] += reward.r3_adiw;
        stats.r_sums[3] += reward.r4_nonconv;
    }
    stats.ended_early = st.done_reason == DoneReason::NonConvergence;
    Ok(stats)
}

/// Evaluates a policy over the given seeds, optionally in parallel. Results
/// are returned in seed order regardless of the worker count, so output is
/// reproducible across parallelism settings.
pub fn evaluate<'a, F>(
    env: &Env,
    seeds: &[u64],
    workers: usize,
    policy_factory: F,
) -> Result<Vec<EpisodeStats>, TrainError>
where
    F: Fn() -> Box<dyn Policy + 'a> + Sync,
{
    if workers <= 1 {
        return seeds
            .iter()
            .map(|&s| {
                let mut p = policy_factory();
                rollout(env, &mut *p, s)
            })
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| TrainError::Pool(e.to_string()))?;
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| {
                let mut p = policy_factory();
                rollout(env, &mut *p, s)
            })
            .collect()
    })
}

/// Training-run configuration. Defaults follow the experimental protocol
/// this crate reproduces; the network and buffer sizes are overridable for
/// smaller studies.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: u32,
    pub gamma: Real,
    pub tau: Real,
    pub lr_actor: Real,
    pub lr_critic: Real,
    pub hidden: (usize, usize),
    pub replay_capacity: usize,
    pub batch: usize,
    /// Transitions stored before updates begin.
    pub warmup: usize,
    pub noise_theta: Real,
    pub noise_sigma_start: Real,
    pub noise_sigma_final: Real,
    /// Run an evaluation round after every this many training episodes.
    pub eval_every: u32,
    pub eval_episodes: u32,
    /// Worker threads for evaluation rounds.
    pub workers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            gamma: 0.99,
            tau: 0.01,
            lr_actor: 0.001,
            lr_critic: 0.002,
            hidden: (450, 300),
            replay_capacity: 100_000,
            batch: 64,
            warmup: 1000,
            noise_theta: 0.15,
            noise_sigma_start: 0.2,
            noise_sigma_final: 0.05,
            eval_every: 20,
            eval_episodes: 4,
            workers: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Stored rewards are divided by this so the worst single-step reward
    /// has magnitude near the largest penalty weight.
    pub fn reward_scale(env: &Env) -> Real {
        (env.net.asset_count() as Real) * env.net.total_load()
    }

    /// Exploration scale for an episode index: linear decay from start to
    /// final over the configured episode count.
    pub fn sigma_at(&self, episode: u32) -> Real {
        if self.episodes <= 1 {
            return self.noise_sigma_start;
        }
        let t = episode as Real / (self.episodes - 1) as Real;
        self.noise_sigma_start + (self.noise_sigma_final - self.noise_sigma_start) * t.min(1.0)
    }
}

/// Per-episode training log entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: u32,
    pub steps: u32,
    pub total_penalty: Real,
    pub r_sums: [Real; 4],
    pub done_reason: DoneReason,
    pub wall_secs: Real,
}

/// One periodic evaluation round.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRound {
    pub after_episode: u32,
    pub mean_penalty: Real,
    pub episodes: Vec<EpisodeStats>,
}

/// Saved actor with its evaluation score.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub episode: u32,
    pub mean_penalty: Real,
    pub actor: Mlp,
}

/// Everything the training loop carries between episodes; snapshot this to
/// pause and resume a run exactly.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub next_episode: u32,
    pub nets: AgentNets,
    pub opt: OptimBundle,
    pub buffer: ReplayBuffer,
    pub log: Vec<EpisodeLog>,
    pub eval_rounds: Vec<EvalRound>,
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainerState {
    pub fn fresh(env: &Env, decoder: &dyn ActionDecoder, cfg: &TrainConfig) -> Self {
        let nets = AgentNets::new(
            env.observation_len(),
            decoder.action_dim(),
            cfg.hidden,
            cfg.gamma,
            cfg.tau,
            cfg.seed,
        );
        let opt = OptimBundle::new(&nets);
        let buffer = ReplayBuffer::new(cfg.replay_capacity, seeds::substream(cfg.seed, "replay", 0));
        Self {
            next_episode: 0,
            nets,
            opt,
            buffer,
            log: Vec::new(),
            eval_rounds: Vec::new(),
            checkpoints: Vec::new(),
        }
    }
}

/// Completed training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub nets: AgentNets,
    pub log: Vec<EpisodeLog>,
    pub eval_rounds: Vec<EvalRound>,
    /// Sorted best-first by evaluation penalty (higher is better as rewards
    /// are non-positive), ties broken by earlier episode.
    pub checkpoints: Vec<Checkpoint>,
}

/// Runs the full training protocol from scratch.
pub fn train_loop(
    env: &Env,
    decoder: &dyn ActionDecoder,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let state = TrainerState::fresh(env, decoder, cfg);
    resume_train_loop(env, decoder, cfg, state, &mut |_| true)
}

/// Continues a run from a snapshot. `on_round` fires after each evaluation
/// round (for persistence hooks); returning `false` stops the run early
/// with the work so far.
pub fn resume_train_loop(
    env: &Env,
    decoder: &dyn ActionDecoder,
    cfg: &TrainConfig,
    mut state: TrainerState,
    on_round: &mut dyn FnMut(&TrainerState) -> bool,
) -> Result<TrainOutcome, TrainError> {
    let scale = TrainConfig::reward_scale(env);
    let action_dim = decoder.action_dim();
    let eval_seeds: Vec<u64> =
        (0..cfg.eval_episodes).map(|i| seeds::substream(cfg.seed, "eval-episode", i as u64)).collect();

    for episode in state.next_episode..cfg.episodes {
        let started = std::time::Instant::now();
        // A fresh process per episode doubles as the episode-start reset.
        let mut noise = OuNoise::new(
            action_dim,
            cfg.noise_theta,
            cfg.sigma_at(episode),
            seeds::substream(cfg.seed, "noise", episode as u64),
        );
        let mut st = env.reset(seeds::substream(cfg.seed, "train-episode", episode as u64));
        let mut entry = EpisodeLog {
            episode,
            steps: 0,
            total_penalty: 0.0,
            r_sums: [0.0; 4],
            done_reason: st.done_reason,
            wall_secs: 0.0,
        };
        while !st.done {
            let obs = env.observation_vector(&st);
            let action = select_action(&state.nets.actor, &obs, Some(&mut noise))?;
            let directive = decoder.decode(&action, env, &st);
            let (raw_obs, reward, _) = env.step(&mut st, &directive)?;
            let next_obs =
                raw_obs.to_vector(env.d_max(), env.net.total_load(), env.net.params.theta_max);
            let terminal = st.done && st.done_reason == DoneReason::NonConvergence;
            state.buffer.push(Transition {
                obs,
                action,
                reward: reward.total / scale,
                next_obs,
                terminal,
            });
            entry.steps += 1;
            entry.total_penalty += reward.total;
            entry.r_sums[0] += reward.r1_load_loss;
            entry.r_sums[1] += reward.r2_piaw;
            entry.r_sums[2] += reward.r3_adiw;
            entry.r_sums[3] += reward.r4_nonconv;
            if state.buffer.len() >= cfg.warmup.max(cfg.batch) {
                let idx = state.buffer.sample_indices(cfg.batch);
                let batch: Vec<&Transition> = idx.iter().map(|&i| state.buffer.get(i)).collect();
                train_step(&mut state.nets, &batch, &mut state.opt, cfg.lr_actor, cfg.lr_critic)
                    .map_err(|e| match e {
                        TrainError::NonFinite { what, .. } => TrainError::NonFinite { what, episode },
                        other => other,
                    })?;
            }
        }
        entry.done_reason = st.done_reason;
        entry.wall_secs = started.elapsed().as_secs_f64();
        state.log.push(entry);
        state.next_episode = episode + 1;

        if (episode + 1) % cfg.eval_every == 0 && cfg.eval_episodes > 0 {
            let actor = state.nets.actor.clone();
            let stats = evaluate(env, &eval_seeds, cfg.workers, || {
                Box::new(ActorPolicy { actor: &actor, decoder }) as Box<dyn Policy>
            })?;
            let mean_penalty =
                stats.iter().map(|s| s.total_penalty).sum::<Real>() / stats.len() as Real;
            state.eval_rounds.push(EvalRound {
                after_episode: episode + 1,
                mean_penalty,
                episodes: stats,
            });
            state.checkpoints.push(Checkpoint { episode: episode + 1, mean_penalty, actor });
            if !on_round(&state) {
                break;
            }
        }
    }

    let mut checkpoints = state.checkpoints;
    // Best first: penalties are non-positive, larger total is better.
    checkpoints.sort_by(|a, b| {
        b.mean_penalty
            .partial_cmp(&a.mean_penalty)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.episode.cmp(&b.episode))
    });
    Ok(TrainOutcome {
        nets: state.nets,
        log: state.log,
        eval_rounds: state.eval_rounds,
        checkpoints,
    })
}

// ---------------------------------------------------------------------------
// Trainer snapshot serialization (versioned binary).

const STATE_MAGIC: &[u8; 8] = b"WGTRST01";

fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_real(w: &mut impl Write, v: Real) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_reals(w: &mut impl Write, v: &[Real]) -> io::Result<()> {
    write_u64(w, v.len() as u64)?;
    for &x in v {
        write_real(w, x)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_real(r: &mut impl Read) -> io::Result<Real> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(Real::from_le_bytes(b))
}

fn read_reals(r: &mut impl Read) -> Result<Vec<Real>, TrainError> {
    let n = read_u64(r)? as usize;
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        v.push(read_real(r)?);
    }
    Ok(v)
}

fn write_adam(w: &mut impl Write, a: &Adam) -> io::Result<()> {
    let (m, v, t) = a.state();
    write_reals(w, m)?;
    write_reals(w, v)?;
    write_u64(w, t)
}

fn read_adam(r: &mut impl Read) -> Result<Adam, TrainError> {
    let m = read_reals(r)?;
    let v = read_reals(r)?;
    let t = read_u64(r)?;
    Adam::from_state(m, v, t).ok_or(TrainError::BadState)
}

fn write_rng(w: &mut impl Write, rng: &ChaCha8Rng) -> io::Result<()> {
    w.write_all(&rng.get_seed())?;
    let pos = rng.get_word_pos();
    w.write_all(&pos.to_le_bytes())?;
    write_u64(w, rng.get_stream())
}

fn read_rng(r: &mut impl Read) -> Result<ChaCha8Rng, TrainError> {
    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    let mut posb = [0u8; 16];
    r.read_exact(&mut posb)?;
    let pos = u128::from_le_bytes(posb);
    let stream = read_u64(r)?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(pos);
    Ok(rng)
}

impl TrainerState {
    pub fn save(&self, w: &mut impl Write) -> Result<(), TrainError> {
        w.write_all(STATE_MAGIC)?;
        write_u32(w, self.next_episode)?;
        write_real(w, self.nets.gamma)?;
        write_real(w, self.nets.tau)?;
        self.nets.actor.save(w)?;
        self.nets.critic.stem.save(w)?;
        self.nets.critic.head.save(w)?;
        self.nets.target_actor.save(w)?;
        self.nets.target_critic.stem.save(w)?;
        self.nets.target_critic.head.save(w)?;
        write_adam(w, &self.opt.actor)?;
        write_adam(w, &self.opt.stem)?;
        write_adam(w, &self.opt.head)?;
        // Replay buffer.
        write_u64(w, self.buffer.capacity as u64)?;
        write_u64(w, self.buffer.next as u64)?;
        write_rng(w, &self.buffer.rng)?;
        write_u64(w, self.buffer.ring.len() as u64)?;
        for t in &self.buffer.ring {
            write_reals(w, &t.obs)?;
            write_reals(w, &t.action)?;
            write_real(w, t.reward)?;
            write_reals(w, &t.next_obs)?;
            w.write_all(&[t.terminal as u8])?;
        }
        // Logs, rounds, checkpoints.
        write_u64(w, self.log.len() as u64)?;
        for e in &self.log {
            write_u32(w, e.episode)?;
            write_u32(w, e.steps)?;
            write_real(w, e.total_penalty)?;
            for v in e.r_sums {
                write_real(w, v)?;
            }
            let code: u8 = match e.done_reason {
                DoneReason::None => 0,
                DoneReason::Horizon => 1,
                DoneReason::NonConvergence => 2,
            };
            w.write_all(&[code])?;
            write_real(w, e.wall_secs)?;
        }
        write_u64(w, self.eval_rounds.len() as u64)?;
        for round in &self.eval_rounds {
            write_u32(w, round.after_episode)?;
            write_real(w, round.mean_penalty)?;
            write_u64(w, round.episodes.len() as u64)?;
            for s in &round.episodes {
                write_u64(w, s.seed)?;
                write_u32(w, s.steps)?;
                write_real(w, s.total_penalty)?;
                for v in s.r_sums {
                    write_real(w, v)?;
                }
                w.write_all(&[s.ended_early as u8])?;
            }
        }
        write_u64(w, self.checkpoints.len() as u64)?;
        for c in &self.checkpoints {
            write_u32(w, c.episode)?;
            write_real(w, c.mean_penalty)?;
            c.actor.save(w)?;
        }
        Ok(())
    }

    pub fn load(r: &mut impl Read) -> Result<Self, TrainError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != STATE_MAGIC {
            return Err(TrainError::BadState);
        }
        let next_episode = read_u32(r)?;
        let gamma = read_real(r)?;
        let tau = read_real(r)?;
        let actor = Mlp::load(r)?;
        let critic = Critic { stem: Mlp::load(r)?, head: Mlp::load(r)? };
        let target_actor = Mlp::load(r)?;
        let target_critic = Critic { stem: Mlp::load(r)?, head: Mlp::load(r)? };
        let nets = AgentNets { actor, critic, target_actor, target_critic, gamma, tau };
        let opt = OptimBundle { actor: read_adam(r)?, stem: read_adam(r)?, head: read_adam(r)? };
        let capacity = read_u64(r)? as usize;
        let next = read_u64(r)? as usize;
        let rng = read_rng(r)?;
        let ring_len = read_u64(r)? as usize;
        let mut ring = Vec::with_capacity(ring_len);
        for _ in 0..ring_len {
            let obs = read_reals(r)?;
            let action = read_reals(r)?;
            let reward = read_real(r)?;
            let next_obs = read_reals(r)?;
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            ring.push(Transition { obs, action, reward, next_obs, terminal: flag[0] != 0 });
        }
        let buffer = ReplayBuffer { capacity, ring, next, rng };
        let log_len = read_u64(r)? as usize;
        let mut log = Vec::with_capacity(log_len);
        for _ in 0..log_len {
            let episode = read_u32(r)?;
            let steps = read_u32(r)?;
            let total_penalty = read_real(r)?;
            let mut r_sums = [0.0; 4];
            for v in &mut r_sums {
                *v = read_real(r)?;
            }
            let mut code = [0u8; 1];
            r.read_exact(&mut code)?;
            let done_reason = match code[0] {
                0 => DoneReason::None,
                1 => DoneReason::Horizon,
                2 => DoneReason::NonConvergence,
                _ => return Err(TrainError::BadState),
            };
            let wall_secs = read_real(r)?;
            log.push(EpisodeLog { episode, steps, total_penalty, r_sums, done_reason, wall_secs });
        }
        let rounds_len = read_u64(r)? as usize;
        let mut eval_rounds = Vec::with_capacity(rounds_len);
        for _ in 0..rounds_len {
            let after_episode = read_u32(r)?;
            let mean_penalty = read_real(r)?;
            let n = read_u64(r)? as usize;
            let mut episodes = Vec::with_capacity(n);
            for _ in 0..n {
                let seed = read_u64(r)?;
                let steps = read_u32(r)?;
                let total_penalty = read_real(r)?;
                let mut r_sums = [0.0; 4];
                for v in &mut r_sums {
                    *v = read_real(r)?;
                }
                let mut flag = [0u8; 1];
                r.read_exact(&mut flag)?;
                episodes.push(EpisodeStats {
                    seed,
                    steps,
                    total_penalty,
                    r_sums,
                    ended_early: flag[0] != 0,
                });
            }
            eval_rounds.push(EvalRound { after_episode, mean_penalty, episodes });
        }
        let ckpt_len = read_u64(r)? as usize;
        let mut checkpoints = Vec::with_capacity(ckpt_len);
        for _ in 0..ckpt_len {
            let episode = read_u32(r)?;
            let mean_penalty = read_real(r)?;
            let actor = Mlp::load(r)?;
            checkpoints.push(Checkpoint { episode, mean_penalty, actor });
        }
        Ok(Self { next_episode, nets, opt, buffer, log, eval_rounds, checkpoints })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Scenario;
    use crate::geomap::GeoLayout;
    use crate::gridmodel::{builtin, Network};
    use crate::wildfire::FireSource;

    fn tiny_nets(seed: u64) -> AgentNets {
        AgentNets::new(3, 2, (5, 4), 0.99, 0.01, seed)
    }

    fn tiny_batch(seed: u64, n: usize, terminal_last: bool) -> Vec<Transition> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Transition {
                obs: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: (0..2).map(|_| rng.random_range(0.0..1.0)).collect(),
                reward: rng.random_range(-1.0..0.0),
                next_obs: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                terminal: terminal_last && i == n - 1,
            })
            .collect()
    }

    #[test]
    fn targets_start_equal_to_online_networks() {
        let nets = tiny_nets(1);
        assert_eq!(nets.actor, nets.target_actor);
        assert_eq!(nets.critic, nets.target_critic);
    }

    #[test]
    fn noiseless_selection_is_deterministic_and_zero_head_gives_half() {
        let mut nets = tiny_nets(2);
        let obs = [0.2, -0.4, 0.9];
        let a1 = select_action(&nets.actor, &obs, None).unwrap();
        let a2 = select_action(&nets.actor, &obs, None).unwrap();
        assert_eq!(a1, a2);
        // Zero the output layer: sigmoid(0) = 0.5 per component.
        let off = nets.actor.layer_offset(2);
        let n = nets.actor.n_params();
        nets.actor.params_mut()[off..n].fill(0.0);
        assert_eq!(select_action(&nets.actor, &obs, None).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn exploration_keeps_actions_in_the_unit_box() {
        let nets = tiny_nets(3);
        let mut noise = OuNoise::new(2, 0.15, 0.9, 44);
        let obs = [0.0, 0.5, -0.5];
        for _ in 0..200 {
            let a = select_action(&nets.actor, &obs, Some(&mut noise)).unwrap();
            assert!(a.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn noise_reset_zeroes_the_state() {
        let mut noise = OuNoise::new(3, 0.15, 0.2, 9);
        noise.sample();
        noise.sample();
        noise.reset();
        assert_eq!(noise.state, vec![0.0; 3]);
    }

    #[test]
    fn terminal_transitions_do_not_bootstrap() {
        let nets = tiny_nets(4);
        let mut batch = tiny_batch(10, 3, true);
        batch[2].reward = -0.75;
        let refs: Vec<&Transition> = batch.iter().collect();
        let targets = bootstrap_targets(&nets, &refs).unwrap();
        assert_eq!(targets[2], -0.75);
        // Non-terminal entries include the bootstrapped term.
        let a = nets.target_actor.forward(&batch[0].next_obs).unwrap();
        let q = nets.target_critic.q(&batch[0].next_obs, &a).unwrap();
        assert_eq!(targets[0], batch[0].reward + 0.99 * q);
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let nets = tiny_nets(5);
        let batch = tiny_batch(20, 1, false);
        let refs: Vec<&Transition> = batch.iter().collect();
        let targets = bootstrap_targets(&nets, &refs).unwrap();
        let (_, stem_g, head_g) = critic_loss_and_grads(&nets, &refs, &targets).unwrap();
        let h = 1e-5;
        let loss_of = |nets: &AgentNets| {
            let (l, _, _) = critic_loss_and_grads(nets, &refs, &targets).unwrap();
            l
        };
        let mut worst: f64 = 0.0;
        for (block, grads) in [(0, &stem_g), (1, &head_g)] {
            for idx in 0..grads.len() {
                let mut probe = nets.clone();
                let params = if block == 0 {
                    probe.critic.stem.params_mut()
                } else {
                    probe.critic.head.params_mut()
                };
                let orig = params[idx];
                params[idx] = orig + h;
                let up = loss_of(&probe);
                let params = if block == 0 {
                    probe.critic.stem.params_mut()
                } else {
                    probe.critic.head.params_mut()
                };
                params[idx] = orig - h;
                let down = loss_of(&probe);
                let fd = (up - down) / (2.0 * h);
                let a = grads[idx];
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1.0));
            }
        }
        assert!(worst <= 1e-4, "worst critic gradient error {worst}");
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let nets = tiny_nets(6);
        let batch = tiny_batch(30, 2, false);
        let refs: Vec<&Transition> = batch.iter().collect();
        let (_, actor_g) = actor_objective_and_grads(&nets, &refs).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for idx in 0..actor_g.len() {
            let mut probe = nets.clone();
            let orig = probe.actor.params()[idx];
            probe.actor.params_mut()[idx] = orig + h;
            let (up, _) = actor_objective_and_grads(&probe, &refs).unwrap();
            probe.actor.params_mut()[idx] = orig - h;
            let (down, _) = actor_objective_and_grads(&probe, &refs).unwrap();
            let fd = (up - down) / (2.0 * h);
            let a = actor_g[idx];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1.0));
        }
        assert!(worst <= 1e-4, "worst actor gradient error {worst}");
    }

    #[test]
    fn target_drift_obeys_the_tau_mixture_exactly() {
        let mut nets = tiny_nets(7);
        let mut opt = OptimBundle::new(&nets);
        let batch = tiny_batch(40, 4, false);
        let refs: Vec<&Transition> = batch.iter().collect();
        let target_before = nets.target_actor.params().to_vec();
        train_step(&mut nets, &refs, &mut opt, 0.001, 0.002).unwrap();
        for i in 0..target_before.len() {
            let want = 0.01 * nets.actor.params()[i] + 0.99 * target_before[i];
            assert!((nets.target_actor.params()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn replay_ring_forgets_entries_older_than_capacity() {
        let mut buf = ReplayBuffer::new(4, 99);
        for i in 0..6 {
            let mut t = tiny_batch(50, 1, false).remove(0);
            t.reward = -(i as Real);
            buf.push(t);
        }
        assert_eq!(buf.len(), 4);
        let rewards: Vec<Real> = (0..4).map(|i| buf.get(i).reward).collect();
        for r in &rewards {
            assert!(*r <= -2.0, "old entries overwritten, found {r}");
        }
        let idx = buf.sample_indices(4);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4, "batch sampling is without replacement");
    }

    fn quiet_toy_env() -> Env {
        let net = Network::load_case(builtin::TOY3_CASE).unwrap();
        let layout = GeoLayout::parse(builtin::TOY3_LAYOUT).unwrap();
        let scenario = Scenario {
            grid_width: 48,
            grid_height: 48,
            p_spread: 0.0,
            source: FireSource::Fixed { x: 47, y: 47 },
            horizon: 6,
            ..Scenario::default()
        };
        Env::new(net, layout, scenario).unwrap()
    }

    /// Decoder used for loop tests: first entry drives nothing, actions are
    /// ignored and the keep-all directive is produced.
    struct KeepAllDecoder;
    impl ActionDecoder for KeepAllDecoder {
        fn action_dim(&self) -> usize {
            2
        }
        fn decode(&self, _action: &[Real], env: &Env, _st: &EnvState) -> Directive {
            Directive::keep_all(&env.net)
        }
    }

    fn tiny_cfg(episodes: u32) -> TrainConfig {
        TrainConfig {
            episodes,
            hidden: (6, 5),
            replay_capacity: 256,
            batch: 8,
            warmup: 8,
            eval_every: 2,
            eval_episodes: 2,
            workers: 1,
            seed: 123,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_episode_training_yields_nothing() {
        let env = quiet_toy_env();
        let out = train_loop(&env, &KeepAllDecoder, &tiny_cfg(0)).unwrap();
        assert!(out.log.is_empty());
        assert!(out.checkpoints.is_empty());
        assert!(out.eval_rounds.is_empty());
    }

    #[test]
    fn evaluation_rounds_follow_the_protocol_arithmetic() {
        let env = quiet_toy_env();
        let out = train_loop(&env, &KeepAllDecoder, &tiny_cfg(4)).unwrap();
        assert_eq!(out.log.len(), 4);
        // eval_every = 2 over 4 episodes: rounds after episodes 2 and 4.
        assert_eq!(out.eval_rounds.len(), 2);
        assert_eq!(out.eval_rounds[0].after_episode, 2);
        assert_eq!(out.eval_rounds[1].after_episode, 4);
        assert_eq!(out.checkpoints.len(), 2);
        assert!(out.checkpoints[0].mean_penalty >= out.checkpoints[1].mean_penalty);
    }

    #[test]
    fn evaluation_is_reproducible_and_worker_count_invariant() {
        let env = quiet_toy_env();
        let nets = AgentNets::new(env.observation_len(), 2, (6, 5), 0.99, 0.01, 7);
        let seeds = [11u64, 22, 33];
        let run = |workers: usize| {
            evaluate(&env, &seeds, workers, || {
                Box::new(ActorPolicy { actor: &nets.actor, decoder: &KeepAllDecoder })
                    as Box<dyn Policy>
            })
            .unwrap()
        };
        let a = run(1);
        let b = run(1);
        let c = run(2);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn snapshot_resume_continues_identically() {
        let env = quiet_toy_env();
        let cfg = tiny_cfg(4);

        // Straight-through run.
        let direct = train_loop(&env, &KeepAllDecoder, &cfg).unwrap();

        // Run that stops at the first eval round (2 episodes), snapshots,
        // round trips through bytes, and resumes.
        let mut snapshot_bytes: Option<Vec<u8>> = None;
        let state = TrainerState::fresh(&env, &KeepAllDecoder, &cfg);
        let _ = resume_train_loop(&env, &KeepAllDecoder, &cfg, state, &mut |s| {
            let mut buf = Vec::new();
            s.save(&mut buf).unwrap();
            snapshot_bytes = Some(buf);
            false
        })
        .unwrap();
        let restored = TrainerState::load(&mut snapshot_bytes.unwrap().as_slice()).unwrap();
        assert_eq!(restored.next_episode, 2);
        let resumed =
            resume_train_loop(&env, &KeepAllDecoder, &cfg, restored, &mut |_| true).unwrap();

        assert_eq!(direct.nets.actor, resumed.nets.actor);
        assert_eq!(direct.nets.critic, resumed.nets.critic);
        assert_eq!(direct.eval_rounds.len(), resumed.eval_rounds.len());
        for (d, r) in direct.eval_rounds.iter().zip(&resumed.eval_rounds) {
            assert_eq!(d.mean_penalty.to_bits(), r.mean_penalty.to_bits());
            assert_eq!(d.episodes, r.episodes);
        }
        let totals = |log: &[EpisodeLog]| -> Vec<u64> {
            log.iter().map(|e| e.total_penalty.to_bits()).collect()
        };
        assert_eq!(totals(&direct.log), totals(&resumed.log));
    }
}
