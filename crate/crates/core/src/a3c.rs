//! n-step advantage actor-critic with a shared parameter store.
//!
//! Each actor repeatedly snapshots the shared parameters, draws one network
//! noise sample, acts for up to `k` steps with both held fixed, and then
//! adds its scaled gradients into the store. Baseline agents add an entropy
//! bonus to the policy loss; noisy agents drop it.
//!
//! Losses for a rollout with returns `Q̂ᵢ` and values `Vᵢ`:
//!
//! ```text
//! L_π = −Σᵢ log π(aᵢ|xᵢ)·(Q̂ᵢ − Vᵢ) − β Σᵢ H(π(·|xᵢ))     (advantage held constant)
//! L_V = λ Σᵢ (Q̂ᵢ − Vᵢ)²
//! ```
//!
//! and the update is `θ ← θ − α_π ∇L_π − α_V ∇L_V`, i.e. ascent on the
//! policy objective and descent on the value loss.

use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::RwLock;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Architecture;
use crate::env::{Env, EnvConfig};
use crate::error::{shape_err, Error, Result};
use crate::math::{log_softmax, softmax};
use crate::net::{GradientSet, HeadSpec, NetNoise, Network, NoiseSpec};
use crate::rng::{RngStream, StreamId, Streams};
use crate::trace::{NoiseLog, NoiseRole};
use crate::value::EpisodeRecord;

/// How actors write into the shared store.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedMode {
    /// One lock per update; snapshots are always consistent.
    #[default]
    Serialised,
    /// Lock-free per-element atomic adds.
    Hogwild,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct A3CConfig {
    /// Rollout length.
    pub k: usize,
    pub gamma: f64,
    /// Entropy weight (baseline agents only).
    pub beta: f64,
    /// Value-loss weight.
    pub lambda: f64,
    pub lr_pi: f64,
    pub lr_v: f64,
    pub actors: usize,
    pub hidden: Vec<usize>,
    pub noise: Option<NoiseSpec>,
    pub mode: SharedMode,
    /// Global-norm clipping applied to each gradient set.
    pub clip_norm: Option<f64>,
    /// Zero the σ-gradients before every update.
    pub discard_sigma_grad: bool,
}

impl Default for A3CConfig {
    fn default() -> Self {
        Self {
            k: 5,
            gamma: 0.99,
            beta: 0.01,
            lambda: 0.5,
            lr_pi: 0.01,
            lr_v: 0.01,
            actors: 1,
            hidden: vec![64, 64],
            noise: None,
            mode: SharedMode::Serialised,
            clip_norm: Some(40.0),
            discard_sigma_grad: false,
        }
    }
}

impl A3CConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 || self.actors == 0 {
            return bad("rollout length and actor count must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.beta >= 0.0 && self.lambda >= 0.0 && self.lr_pi >= 0.0 && self.lr_v >= 0.0) {
            return bad("beta, lambda and learning rates must be non-negative");
        }
        if let Some(spec) = self.noise {
            if !(spec.sigma0 > 0.0) {
                return bad("sigma0 must be positive");
            }
        }
        Ok(())
    }

    /// Entropy weight in effect: `beta` for baseline agents, 0 for noisy ones.
    pub fn entropy_weight(&self) -> f64 {
        if self.noise.is_some() {
            0.0
        } else {
            self.beta
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::ActorCritic
    }

    pub fn build_network(
        &self,
        obs_dim: usize,
        actions: usize,
        rng: &mut RngStream,
    ) -> Result<Network> {
        Network::build(
            obs_dim,
            &self.hidden,
            &[HeadSpec::softmax(actions), HeadSpec::linear(1)],
            self.noise,
            rng,
        )
    }
}

fn check_actor_critic(net: &Network) -> Result<usize> {
    let dims = net.head_dims();
    if net.heads.len() != 2 || dims[1] != 1 {
        return shape_err("actor-critic network needs [policy, value] heads");
    }
    Ok(dims[0])
}

/// Policy distribution and state value at `x`.
pub fn policy_forward(net: &Network, noise: &NetNoise, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let actions = check_actor_critic(net)?;
    let out = net.forward(noise, x)?;
    Ok((out[..actions].to_vec(), out[actions]))
}

/// `H(p) = −Σ p log p`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

/// Draws an index from `p` using one uniform variate.
pub fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// A k-step on-policy trajectory collected under one noise sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `x_t ... x_{t+n}`: one more state than actions.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// The last state is terminal (no bootstrap).
    pub terminal: bool,
    pub noise: NetNoise,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        if self.actions.is_empty()
            || self.rewards.len() != self.actions.len()
            || self.states.len() != self.actions.len() + 1
        {
            return shape_err("rollout needs n actions, n rewards and n + 1 states");
        }
        Ok(())
    }
}

/// Returns by the backward recursion `Q ← rᵢ + γQ`, starting from `bootstrap`.
pub fn nstep_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let mut q = bootstrap;
    let mut out = vec![0.0; rewards.len()];
    for i in (0..rewards.len()).rev() {
        q = rewards[i] + gamma * q;
        out[i] = q;
    }
    out
}

/// `Q̂ᵢ = Σ_{j≥i} γ^{j−i} r_j + γ^{n−i}·bootstrap`, summed directly.
pub fn nstep_returns_direct(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|i| {
            let sum: f64 = (i..n)
                .map(|j| gamma.powi((j - i) as i32) * rewards[j])
                .sum();
            sum + gamma.powi((n - i) as i32) * bootstrap
        })
        .collect()
}

/// Returns for a rollout, bootstrapping with `V(x_{t+n})` under the
/// rollout's own noise unless the rollout ended in a terminal state.
pub fn rollout_returns(rollout: &Rollout, net: &Network, gamma: f64) -> Result<Vec<f64>> {
    rollout.check()?;
    let bootstrap = if rollout.terminal {
        0.0
    } else {
        policy_forward(net, &rollout.noise, rollout.states.last().unwrap())?.1
    };
    Ok(nstep_returns(&rollout.rewards, gamma, bootstrap))
}

/// Loss gradients of one rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutGradients {
    /// `∇L_π` (policy-gradient loss, minus entropy bonus when `beta > 0`).
    pub policy: GradientSet,
    /// `∇L_V` including the `λ` factor.
    pub value: GradientSet,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_entropy: f64,
}

/// Gradients of `L_π` (with entropy weight `beta`) and `λ·Σ(Q̂ − V)²`.
pub fn rollout_gradients(
    rollout: &Rollout,
    net: &Network,
    gamma: f64,
    beta: f64,
    lambda: f64,
) -> Result<RolloutGradients> {
    let actions = check_actor_critic(net)?;
    let returns = rollout_returns(rollout, net, gamma)?;
    let sampled = net.sampled(&rollout.noise)?;
    let mut policy = GradientSet::zeros_like(net);
    let mut value = GradientSet::zeros_like(net);
    let (mut policy_loss, mut value_loss, mut ent_sum) = (0.0, 0.0, 0.0);
    for i in 0..rollout.len() {
        let (x, a) = (&rollout.states[i], rollout.actions[i]);
        if a >= actions {
            return Err(Error::Usage(format!("action {a} out of range")));
        }
        let trace = sampled.forward_trace(x)?;
        let logits = trace.head_preactivations(net);
        let pi = softmax(&logits[..actions]);
        let log_pi = log_softmax(&logits[..actions]);
        let v = trace.output[actions];
        let adv = returns[i] - v;
        let h = entropy(&pi);

        // d/dz of −A·log π_a − β·H.
        let mut up = vec![0.0; actions + 1];
        for (b, u) in up[..actions].iter_mut().enumerate() {
            let indicator = if a == b { 1.0 } else { 0.0 };
            *u = adv * (pi[b] - indicator) + beta * pi[b] * (log_pi[b] + h);
        }
        policy.add_assign(&sampled.backward_preactivation(&trace, &up)?)?;

        let mut up_v = vec![0.0; actions + 1];
        up_v[actions] = -2.0 * lambda * adv;
        value.add_assign(&sampled.backward_preactivation(&trace, &up_v)?)?;

        policy_loss += -adv * log_pi[a] - beta * h;
        value_loss += lambda * adv * adv;
        ent_sum += h;
    }
    Ok(RolloutGradients {
        policy,
        value,
        policy_loss,
        value_loss,
        mean_entropy: ent_sum / rollout.len() as f64,
    })
}

enum Store {
    Locked(RwLock<Vec<f64>>),
    Atomic(Vec<AtomicU64>),
}

/// Global parameters shared by all actors.
pub struct SharedParams {
    template: Network,
    store: Store,
}

fn atomic_add(cell: &AtomicU64, delta: f64) {
    let mut current = cell.load(Ordering::Relaxed);
    loop {
        let next = (f64::from_bits(current) + delta).to_bits();
        match cell.compare_exchange_weak(current, next, Ordering::AcqRel, Ordering::Relaxed) {
            Ok(_) => return,
            Err(seen) => current = seen,
        }
    }
}

impl SharedParams {
    pub fn new(net: Network, mode: SharedMode) -> Self {
        let params = net.parameters();
        let store = match mode {
            SharedMode::Serialised => Store::Locked(RwLock::new(params)),
            SharedMode::Hogwild => Store::Atomic(
                params
                    .into_iter()
                    .map(|v| AtomicU64::new(v.to_bits()))
                    .collect(),
            ),
        };
        Self {
            template: net,
            store,
        }
    }

    pub fn mode(&self) -> SharedMode {
        match self.store {
            Store::Locked(_) => SharedMode::Serialised,
            Store::Atomic(_) => SharedMode::Hogwild,
        }
    }

    /// A copy of the current parameters. Consistent in serialised mode;
    /// in Hogwild mode individual entries may straddle concurrent updates.
    pub fn snapshot(&self) -> Network {
        let params = match &self.store {
            Store::Locked(lock) => lock.read().clone(),
            Store::Atomic(cells) => cells
                .iter()
                .map(|c| f64::from_bits(c.load(Ordering::Acquire)))
                .collect(),
        };
        let mut net = self.template.clone();
        net.set_parameters(&params)
            .expect("store matches template layout");
        net
    }

    /// `θ ← θ − Σ lrₖ·gₖ`, applying each `(lr, g)` in turn.
    pub fn apply(&self, updates: &[(f64, &GradientSet)]) -> Result<()> {
        let flats: Vec<(f64, Vec<f64>)> =
            updates.iter().map(|(lr, g)| (*lr, g.to_flat())).collect();
        let n = self.template.num_parameters();
        if flats.iter().any(|(_, f)| f.len() != n) {
            return shape_err("gradient layout does not match shared parameters");
        }
        match &self.store {
            Store::Locked(lock) => {
                let mut params = lock.write();
                for (lr, g) in &flats {
                    for (p, gi) in params.iter_mut().zip(g) {
                        *p -= lr * gi;
                    }
                }
            }
            Store::Atomic(cells) => {
                for (lr, g) in &flats {
                    for (c, gi) in cells.iter().zip(g) {
                        atomic_add(c, -lr * gi);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Outcome of one actor iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStats {
    pub steps: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_entropy: f64,
}

/// One actor thread's private state.
pub struct Actor {
    pub id: u32,
    env: Env,
    streams: Streams,
    obs: Vec<f64>,
    episode_return: f64,
    steps: u64,
    episodes: Vec<EpisodeRecord>,
    log: NoiseLog,
}

impl Actor {
    pub fn new(id: u32, env: &EnvConfig, seed: u64) -> Result<Self> {
        let mut env = env.build()?;
        let mut streams = Streams::with_sub(seed, id);
        let obs = env.reset(&mut streams.env);
        Ok(Self {
            id,
            env,
            streams,
            obs,
            episode_return: 0.0,
            steps: 0,
            episodes: Vec::new(),
            log: NoiseLog::default(),
        })
    }

    pub fn episodes(&self) -> &[EpisodeRecord] {
        &self.episodes
    }

    pub fn enable_noise_log(&mut self) {
        self.log = NoiseLog::enabled();
    }

    pub fn noise_log(&mut self) -> &mut NoiseLog {
        &mut self.log
    }

    /// Acts for up to `k` steps under one snapshot and one noise sample.
    pub fn collect(&mut self, net: &Network, k: usize, counter: &AtomicU64) -> Result<Rollout> {
        let noise = if net.is_noisy() {
            let n = net.sample_noise(&mut self.streams.online_noise);
            self.log.sampled(&n);
            n
        } else {
            net.zero_noise()
        };
        let mut states = vec![self.obs.clone()];
        let (mut actions, mut rewards) = (Vec::with_capacity(k), Vec::with_capacity(k));
        let mut terminal = false;
        for _ in 0..k {
            self.log.used(&noise, NoiseRole::Rollout);
            let (pi, _) = policy_forward(net, &noise, &self.obs)?;
            let a = sample_categorical(&pi, &mut self.streams.exploration);
            let step = self.env.step(a, &mut self.streams.env)?;
            counter.fetch_add(1, Ordering::AcqRel);
            self.steps += 1;
            self.episode_return += step.reward;
            actions.push(a);
            rewards.push(step.reward);
            if step.done() {
                self.episodes.push(EpisodeRecord {
                    end_step: self.steps,
                    return_: self.episode_return,
                    terminal: step.terminal,
                });
                self.episode_return = 0.0;
                terminal = step.terminal;
                states.push(step.observation);
                self.obs = self.env.reset(&mut self.streams.env);
                break;
            }
            self.obs = step.observation.clone();
            states.push(step.observation);
        }
        if !terminal {
            self.log.used(&noise, NoiseRole::Rollout);
        }
        Ok(Rollout {
            states,
            actions,
            rewards,
            terminal,
            noise,
        })
    }

    /// Snapshot, collect, differentiate, update.
    pub fn iterate(
        &mut self,
        shared: &SharedParams,
        config: &A3CConfig,
        counter: &AtomicU64,
    ) -> Result<RolloutStats> {
        let net = shared.snapshot();
        let rollout = self.collect(&net, config.k, counter)?;
        let mut g = rollout_gradients(
            &rollout,
            &net,
            config.gamma,
            config.entropy_weight(),
            config.lambda,
        )?;
        if config.discard_sigma_grad {
            g.policy.discard_sigma();
            g.value.discard_sigma();
        }
        if let Some(max) = config.clip_norm {
            g.policy.clip_global_norm(max);
            g.value.clip_global_norm(max);
        }
        shared.apply(&[(config.lr_pi, &g.policy), (config.lr_v, &g.value)])?;
        Ok(RolloutStats {
            steps: rollout.len(),
            policy_loss: g.policy_loss,
            value_loss: g.value_loss,
            mean_entropy: g.mean_entropy,
        })
    }
}

/// Shared store, actors and the global step counter for one seed.
pub struct A3CTrainer {
    config: A3CConfig,
    shared: SharedParams,
    actors: Vec<Actor>,
    counter: AtomicU64,
}

impl A3CTrainer {
    pub fn new(config: A3CConfig, env: &EnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let spec = env.spec()?;
        let mut init = RngStream::new(seed, StreamId::Init);
        let net = config.build_network(spec.obs_dim, spec.actions, &mut init)?;
        Self::with_network(config, net, env, seed)
    }

    pub fn with_network(
        config: A3CConfig,
        net: Network,
        env: &EnvConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let spec = env.spec()?;
        let actions = check_actor_critic(&net)?;
        if net.input_dim() != spec.obs_dim || actions != spec.actions {
            return shape_err(format!("network does not fit environment {}", spec.name));
        }
        let actors = (0..config.actors as u32)
            .map(|id| Actor::new(id, env, seed))
            .collect::<Result<_>>()?;
        Ok(Self {
            shared: SharedParams::new(net, config.mode),
            actors,
            counter: AtomicU64::new(0),
            config,
        })
    }

    pub fn config(&self) -> &A3CConfig {
        &self.config
    }

    pub fn shared(&self) -> &SharedParams {
        &self.shared
    }

    pub fn snapshot(&self) -> Network {
        self.shared.snapshot()
    }

    pub fn actors(&self) -> &[Actor] {
        &self.actors
    }

    pub fn actors_mut(&mut self) -> &mut [Actor] {
        &mut self.actors
    }

    /// Global environment steps taken so far.
    pub fn steps(&self) -> u64 {
        self.counter.load(Ordering::Acquire)
    }

    /// Trains until the global counter reaches `t_max`.
    ///
    /// A single actor runs on the calling thread, which keeps the run
    /// bit-reproducible. The final rollouts may overshoot `t_max` by less
    /// than `k` steps per actor.
    pub fn run_until(&mut self, t_max: u64) -> Result<()> {
        let Self {
            config,
            shared,
            actors,
            counter,
        } = self;
        if actors.len() == 1 {
            let actor = &mut actors[0];
            while counter.load(Ordering::Acquire) < t_max {
                actor.iterate(shared, config, counter)?;
            }
            return Ok(());
        }
        let (config, shared, counter) = (&*config, &*shared, &*counter);
        std::thread::scope(|scope| {
            let handles: Vec<_> = actors
                .iter_mut()
                .map(|actor| {
                    scope.spawn(move || -> Result<()> {
                        while counter.load(Ordering::Acquire) < t_max {
                            actor.iterate(shared, config, counter)?;
                        }
                        Ok(())
                    })
                })
                .collect();
            handles
                .into_iter()
                .try_for_each(|h| h.join().expect("actor thread panicked"))
        })
    }
}
