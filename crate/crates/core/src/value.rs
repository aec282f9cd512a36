//! DQN and dueling double-DQN agents, with ε-greedy or noisy exploration.
//!
//! A noisy agent's `train_step` draws three network noise samples from three
//! separate streams: ε for the online network on the minibatch states, ε′
//! for the target network, and ε″ for action selection. ε″ picks the
//! bootstrap action of the double-DQN rule (dueling agents) and is then kept
//! as the acting noise for the next `select_action`, so each action is still
//! taken under a fresh sample. When no such sample is pending (for instance
//! before training starts) `select_action` draws one itself.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Architecture;
use crate::env::{Env, EnvStep};
use crate::error::{shape_err, Error, Result};
use crate::math::argmax;
use crate::net::{GradientSet, HeadSpec, NetNoise, Network, NoiseSpec, SampledNet};
use crate::optim::{OptimConfig, Optimizer};
use crate::par::Execution;
use crate::rng::Streams;
use crate::trace::{NoiseLog, NoiseRole};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub y: Vec<f64>,
    pub terminal: bool,
}

/// Bounded FIFO of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect()
    }
}

/// Linear ε annealing from `start` to `end` over `anneal_steps` actions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        Self {
            start: eps,
            end: eps,
            anneal_steps: 0,
        }
    }

    pub fn standard(anneal_steps: u64) -> Self {
        Self {
            start: 1.0,
            end: 0.1,
            anneal_steps,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        if step >= self.anneal_steps {
            return self.end;
        }
        let frac = step as f64 / self.anneal_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValueAgentConfig {
    pub dueling: bool,
    /// `Some` makes the heads (or all layers) noisy.
    pub noise: Option<NoiseSpec>,
    pub epsilon: EpsilonSchedule,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Replay size required before the first optimisation step.
    pub warmup: usize,
    /// Optimisation steps between target network replacements.
    pub target_period: u64,
    pub optim: OptimConfig,
    /// Zero the σ-gradients before every update.
    pub discard_sigma_grad: bool,
    pub execution: Execution,
}

impl Default for ValueAgentConfig {
    fn default() -> Self {
        Self {
            dueling: false,
            noise: None,
            epsilon: EpsilonSchedule::standard(10_000),
            hidden: vec![64, 64],
            gamma: 0.99,
            batch_size: 32,
            replay_capacity: 10_000,
            warmup: 32,
            target_period: 500,
            optim: OptimConfig::sgd(0.01),
            discard_sigma_grad: false,
            execution: Execution::default(),
        }
    }
}

impl ValueAgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.target_period == 0 || self.replay_capacity == 0 {
            return bad("batch size, target period and replay capacity must be positive");
        }
        let e = &self.epsilon;
        if ![e.start, e.end].iter().all(|v| (0.0..=1.0).contains(v)) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(self.optim.lr >= 0.0) {
            return bad("learning rate must be non-negative");
        }
        if let Some(spec) = self.noise {
            if !(spec.sigma0 > 0.0) {
                return bad("sigma0 must be positive");
            }
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        if self.dueling {
            Architecture::Dueling
        } else {
            Architecture::Q
        }
    }

    fn heads(&self, actions: usize) -> Vec<HeadSpec> {
        if self.dueling {
            vec![HeadSpec::linear(1), HeadSpec::linear(actions)]
        } else {
            vec![HeadSpec::linear(actions)]
        }
    }
}

/// Dueling aggregation `Q = V + A − mean(A)` of a `[V, A...]` output.
pub fn dueling_q(output: &[f64]) -> Vec<f64> {
    let (v, adv) = (output[0], &output[1..]);
    let mean = adv.iter().sum::<f64>() / adv.len() as f64;
    adv.iter().map(|a| v + a - mean).collect()
}

fn head_to_q(output: Vec<f64>, dueling: bool) -> Vec<f64> {
    if dueling {
        dueling_q(&output)
    } else {
        output
    }
}

/// Action values of `net` at `x` under `noise`.
pub fn q_values(net: &Network, dueling: bool, noise: &NetNoise, x: &[f64]) -> Result<Vec<f64>> {
    if dueling && (net.heads.len() != 2 || net.head_dims()[0] != 1) {
        return shape_err("a dueling network needs a scalar value head and an advantage head");
    }
    Ok(head_to_q(net.forward(noise, x)?, dueling))
}

/// `r` if terminal, otherwise `r + γ·bootstrap`.
pub fn td_target(r: f64, terminal: bool, gamma: f64, bootstrap: f64) -> f64 {
    if terminal {
        r
    } else {
        r + gamma * bootstrap
    }
}

/// TD targets for a batch.
///
/// Without `selection` the bootstrap is `max_b Q(y, b; target)`; with it
/// (double DQN) the action is `argmax_b Q(y, b; selection)` evaluated on the
/// target network.
pub fn td_targets(
    batch: &[&Transition],
    gamma: f64,
    dueling: bool,
    target: &SampledNet<'_>,
    selection: Option<&SampledNet<'_>>,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                return Ok(t.r);
            }
            let q_next = head_to_q(target.forward(&t.y)?, dueling);
            let boot = match selection {
                None => q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Some(sel) => q_next[argmax(&head_to_q(sel.forward(&t.y)?, dueling))],
            };
            Ok(td_target(t.r, false, gamma, boot))
        })
        .collect()
}

/// Upstream gradient on the network output given `∂L/∂Q_a = g`.
fn q_upstream(dueling: bool, actions: usize, a: usize, g: f64) -> Vec<f64> {
    if dueling {
        let mut up = vec![0.0; actions + 1];
        up[0] = g;
        for (b, u) in up[1..].iter_mut().enumerate() {
            *u = g * (if a == b { 1.0 } else { 0.0 } - 1.0 / actions as f64);
        }
        up
    } else {
        let mut up = vec![0.0; actions];
        up[a] = g;
        up
    }
}

/// Result of one optimisation step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainStats {
    /// Mean squared TD error over the minibatch (before the update).
    pub loss: f64,
    pub updates: u64,
    pub target_synced: bool,
}

#[derive(Clone, Debug)]
pub struct ValueAgent {
    config: ValueAgentConfig,
    actions: usize,
    online: Network,
    target: Network,
    optimizer: Optimizer,
    replay: ReplayBuffer,
    streams: Streams,
    pending_noise: Option<NetNoise>,
    action_steps: u64,
    updates: u64,
    log: NoiseLog,
}

impl ValueAgent {
    /// Builds the network from the seed's init stream.
    pub fn new(
        config: ValueAgentConfig,
        obs_dim: usize,
        actions: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut streams = Streams::new(seed);
        let net = Network::build(
            obs_dim,
            &config.hidden,
            &config.heads(actions),
            config.noise,
            &mut streams.init,
        )?;
        Self::assemble(config, net, actions, streams)
    }

    /// Uses `network` as the initial online (and target) network.
    pub fn with_network(config: ValueAgentConfig, network: Network, seed: u64) -> Result<Self> {
        config.validate()?;
        network.validate()?;
        let dims = network.head_dims();
        let actions = if config.dueling {
            if dims.len() != 2 || dims[0] != 1 {
                return shape_err("dueling agent needs [value, advantage] heads");
            }
            dims[1]
        } else {
            if dims.len() != 1 {
                return shape_err("Q agent needs exactly one head");
            }
            dims[0]
        };
        Self::assemble(config, network, actions, Streams::new(seed))
    }

    fn assemble(
        config: ValueAgentConfig,
        net: Network,
        actions: usize,
        streams: Streams,
    ) -> Result<Self> {
        if actions < 2 {
            return Err(Error::Config("at least two actions are required".into()));
        }
        Ok(Self {
            optimizer: Optimizer::new(config.optim),
            replay: ReplayBuffer::new(config.replay_capacity),
            target: net.clone(),
            online: net,
            config,
            actions,
            streams,
            pending_noise: None,
            action_steps: 0,
            updates: 0,
            log: NoiseLog::default(),
        })
    }

    pub fn config(&self) -> &ValueAgentConfig {
        &self.config
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn online(&self) -> &Network {
        &self.online
    }

    pub fn target(&self) -> &Network {
        &self.target
    }

    /// Mutable access to the online network (e.g. to zero σ for ablations).
    /// The target network is refreshed to match.
    pub fn set_online(&mut self, net: Network) -> Result<()> {
        if net.num_parameters() != self.online.num_parameters() {
            return shape_err("replacement network has a different layout");
        }
        self.online = net;
        self.target = self.online.clone();
        Ok(())
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn action_steps(&self) -> u64 {
        self.action_steps
    }

    pub fn is_noisy(&self) -> bool {
        self.online.is_noisy()
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon.at(self.action_steps)
    }

    pub fn enable_noise_log(&mut self) {
        self.log = NoiseLog::enabled();
    }

    pub fn noise_log(&mut self) -> &mut NoiseLog {
        &mut self.log
    }

    pub fn q_values(&self, noise: &NetNoise, x: &[f64]) -> Result<Vec<f64>> {
        q_values(&self.online, self.config.dueling, noise, x)
    }

    /// Chooses an action for `x`.
    ///
    /// Noisy agents act greedily under a fresh noise sample; every agent
    /// then applies its ε schedule (zero for a pure noisy agent).
    pub fn select_action(&mut self, x: &[f64]) -> Result<usize> {
        let noise = if self.online.is_noisy() {
            let noise = match self.pending_noise.take() {
                Some(n) => n,
                None => {
                    let n = self.online.sample_noise(&mut self.streams.action_noise);
                    self.log.sampled(&n);
                    n
                }
            };
            self.log.used(&noise, NoiseRole::Acting);
            noise
        } else {
            self.online.zero_noise()
        };
        let greedy = argmax(&self.q_values(&noise, x)?);
        let eps = self.epsilon();
        self.action_steps += 1;
        if eps > 0.0 && self.streams.exploration.random::<f64>() < eps {
            return Ok(self.streams.exploration.random_range(0..self.actions));
        }
        Ok(greedy)
    }

    pub fn observe(&mut self, t: Transition) -> Result<()> {
        if t.a >= self.actions || !t.r.is_finite() {
            return Err(Error::Usage(
                "transition action out of range or reward not finite".into(),
            ));
        }
        self.replay.push(t);
        Ok(())
    }

    /// Whether the replay buffer is large enough to train.
    pub fn ready(&self) -> bool {
        self.replay.len() >= self.config.warmup.max(self.config.batch_size)
    }

    /// One optimisation step on a uniformly sampled minibatch.
    ///
    /// Returns `Ok(None)` (and does nothing) while the replay buffer is
    /// below the warm-up threshold.
    pub fn train_step(&mut self) -> Result<Option<TrainStats>> {
        if !self.ready() {
            return Ok(None);
        }
        let idx = self
            .replay
            .sample_indices(self.config.batch_size, &mut self.streams.replay);
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.replay.get(i).unwrap()).collect();

        let (online_noise, target_noise, action_noise) = if self.online.is_noisy() {
            let e = self.online.sample_noise(&mut self.streams.online_noise);
            let e_t = self.target.sample_noise(&mut self.streams.target_noise);
            let e_a = self.online.sample_noise(&mut self.streams.action_noise);
            for n in [&e, &e_t, &e_a] {
                self.log.sampled(n);
            }
            (e, e_t, Some(e_a))
        } else {
            (self.online.zero_noise(), self.target.zero_noise(), None)
        };

        let dueling = self.config.dueling;
        let online = self.online.sampled(&online_noise)?;
        let target = self.target.sampled(&target_noise)?;
        let selection_noise = action_noise
            .clone()
            .unwrap_or_else(|| self.online.zero_noise());
        let selection = self.online.sampled(&selection_noise)?;
        self.log.used(&target_noise, NoiseRole::Target);
        if dueling {
            self.log.used(&selection_noise, NoiseRole::Selection);
        }
        let targets = td_targets(
            &batch,
            self.config.gamma,
            dueling,
            &target,
            dueling.then_some(&selection),
        )?;

        self.log.used(&online_noise, NoiseRole::Online);
        let n = batch.len() as f64;
        let actions = self.actions;
        let per_sample =
            self.config
                .execution
                .map_range(batch.len(), |i| -> Result<(f64, GradientSet)> {
                    let t = batch[i];
                    let trace = online.forward_trace(&t.x)?;
                    let q = head_to_q(trace.output.clone(), dueling);
                    let residual = targets[i] - q[t.a];
                    let up = q_upstream(dueling, actions, t.a, -2.0 * residual / n);
                    Ok((residual * residual, online.backward(&trace, &up)?))
                });
        let mut loss = 0.0;
        let mut grads = GradientSet::zeros_like(&self.online);
        for r in per_sample {
            let (sq, g) = r?;
            loss += sq;
            grads.add_assign(&g)?;
        }
        drop(online);
        drop(selection);
        drop(target);

        if self.config.discard_sigma_grad {
            grads.discard_sigma();
        }
        self.optimizer.step(&mut self.online, &mut grads)?;
        self.updates += 1;
        let target_synced = self.updates.is_multiple_of(self.config.target_period);
        if target_synced {
            self.target = self.online.clone();
        }
        self.pending_noise = action_noise;
        Ok(Some(TrainStats {
            loss: loss / n,
            updates: self.updates,
            target_synced,
        }))
    }
}

/// Per-episode outcome recorded while training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Environment steps taken before this episode ended (inclusive).
    pub end_step: u64,
    pub return_: f64,
    pub terminal: bool,
}

/// Drives a [`ValueAgent`] on an environment: one optimisation step per
/// action once the replay buffer is warm.
#[derive(Clone, Debug)]
pub struct ValueTrainer {
    pub agent: ValueAgent,
    env: Env,
    env_rng: crate::rng::RngStream,
    obs: Vec<f64>,
    episode_return: f64,
    steps: u64,
    episodes: Vec<EpisodeRecord>,
}

impl ValueTrainer {
    pub fn new(agent: ValueAgent, mut env: Env, seed: u64) -> Result<Self> {
        let spec = env.spec();
        let dims = agent.online().input_dim();
        if spec.obs_dim != dims || spec.actions != agent.actions() {
            return shape_err(format!(
                "environment {} ({} obs, {} actions) does not fit the agent ({dims} obs, {} actions)",
                spec.name,
                spec.obs_dim,
                spec.actions,
                agent.actions()
            ));
        }
        let mut env_rng = crate::rng::RngStream::new(seed, crate::rng::StreamId::Env);
        let obs = env.reset(&mut env_rng);
        Ok(Self {
            agent,
            env,
            env_rng,
            obs,
            episode_return: 0.0,
            steps: 0,
            episodes: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn episodes(&self) -> &[EpisodeRecord] {
        &self.episodes
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    /// One action, one stored transition, and (when warm) one update.
    pub fn step(&mut self) -> Result<EnvStep> {
        let a = self.agent.select_action(&self.obs)?;
        let step = self.env.step(a, &mut self.env_rng)?;
        self.agent.observe(Transition {
            x: std::mem::take(&mut self.obs),
            a,
            r: step.reward,
            y: step.observation.clone(),
            terminal: step.terminal,
        })?;
        self.agent.train_step()?;
        self.steps += 1;
        self.episode_return += step.reward;
        if step.done() {
            self.episodes.push(EpisodeRecord {
                end_step: self.steps,
                return_: self.episode_return,
                terminal: step.terminal,
            });
            self.episode_return = 0.0;
            self.obs = self.env.reset(&mut self.env_rng);
        } else {
            self.obs = step.observation.clone();
        }
        Ok(step)
    }

    pub fn run(&mut self, steps: u64) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    /// Runs until `stop` holds after an episode ends, or `max_steps` total.
    pub fn run_until(
        &mut self,
        max_steps: u64,
        mut stop: impl FnMut(&EpisodeRecord) -> bool,
    ) -> Result<bool> {
        while self.steps < max_steps {
            if self.step()?.done() && stop(self.episodes.last().unwrap()) {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::noisy::NoiseKind;
    use crate::rng::{RngStream, StreamId};
    use crate::trace::{sampled_streams, used_with_role, NoiseEvent};

    fn transition(i: usize) -> Transition {
        Transition {
            x: vec![i as f64],
            a: 0,
            r: i as f64,
            y: vec![0.0],
            terminal: false,
        }
    }

    fn noisy_config(dueling: bool) -> ValueAgentConfig {
        ValueAgentConfig {
            dueling,
            noise: Some(NoiseSpec {
                kind: NoiseKind::Factorised,
                sigma0: 0.5,
                all_layers: false,
            }),
            epsilon: EpsilonSchedule::constant(0.0),
            hidden: vec![8],
            batch_size: 4,
            warmup: 4,
            ..ValueAgentConfig::default()
        }
    }

    #[test]
    fn replay_is_fifo() {
        let mut buf = ReplayBuffer::new(5);
        for i in 0..8 {
            buf.push(transition(i));
        }
        assert_eq!(buf.len(), 5);
        let rs: Vec<f64> = buf.iter().map(|t| t.r).collect();
        assert_eq!(rs, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn dueling_aggregation_by_hand() {
        assert_eq!(dueling_q(&[5.0, 2.0, 4.0]), vec![4.0, 6.0]);
        assert_eq!(dueling_q(&[1.5, 3.0, 3.0, 3.0]), vec![1.5, 1.5, 1.5]);
    }

    #[test]
    fn td_target_cases() {
        assert_eq!(td_target(7.0, true, 0.99, 123.0), 7.0);
        assert_eq!(td_target(2.0, false, 0.0, 123.0), 2.0);
        assert!((td_target(1.0, false, 0.9, 10.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn epsilon_schedule_anneals_linearly() {
        let s = EpsilonSchedule::standard(100);
        assert_eq!(s.at(0), 1.0);
        assert!((s.at(50) - 0.55).abs() < 1e-12);
        assert_eq!(s.at(100), 0.1);
        assert_eq!(s.at(10_000), 0.1);
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let config = ValueAgentConfig {
            epsilon: EpsilonSchedule::constant(1.0),
            hidden: vec![4],
            ..Default::default()
        };
        let mut agent = ValueAgent::new(config, 3, 4, 9).unwrap();
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            counts[agent.select_action(&[0.1, 0.2, 0.3]).unwrap()] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99th percentile of chi-square with 3 degrees of freedom.
        assert!(chi2 < 11.345, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn zero_sigma_noisy_agent_is_pure_argmax() {
        let mut agent = ValueAgent::new(noisy_config(false), 2, 3, 1).unwrap();
        let mut net = agent.online().clone();
        net.zero_sigma();
        agent.set_online(net).unwrap();
        let x = [0.3, -0.7];
        let q = agent.q_values(&agent.online().zero_noise(), &x).unwrap();
        for _ in 0..10 {
            assert_eq!(agent.select_action(&x).unwrap(), argmax(&q));
        }
    }

    #[test]
    fn not_ready_is_a_no_op() {
        let mut agent = ValueAgent::new(noisy_config(false), 1, 2, 0).unwrap();
        agent.observe(transition(0)).unwrap();
        let before = agent.online().clone();
        assert_eq!(agent.train_step().unwrap(), None);
        assert_eq!(agent.online(), &before);
    }

    #[test]
    fn three_streams_per_train_step() {
        for dueling in [false, true] {
            let mut agent = ValueAgent::new(noisy_config(dueling), 1, 2, 3).unwrap();
            for i in 0..6 {
                agent
                    .observe(Transition {
                        a: i % 2,
                        ..transition(i)
                    })
                    .unwrap();
            }
            agent.enable_noise_log();
            agent.train_step().unwrap().unwrap();
            let events = agent.noise_log().take();
            let samples = events
                .iter()
                .filter(|e| matches!(e, NoiseEvent::Sampled(_)))
                .count();
            assert_eq!(samples, 3);
            let streams = sampled_streams(&events);
            assert_eq!(
                streams.into_iter().collect::<Vec<_>>(),
                vec![
                    StreamId::OnlineNoise,
                    StreamId::TargetNoise,
                    StreamId::ActionNoise
                ]
            );
            assert_eq!(used_with_role(&events, NoiseRole::Online).len(), 1);
        }
    }

    #[test]
    fn action_noise_changes_between_actions() {
        let mut agent = ValueAgent::new(noisy_config(false), 1, 2, 3).unwrap();
        agent.enable_noise_log();
        for _ in 0..4 {
            agent.select_action(&[1.0]).unwrap();
        }
        let acting = used_with_role(agent.noise_log().events(), NoiseRole::Acting);
        assert_eq!(acting.len(), 4);
    }

    #[test]
    fn zero_residual_gives_zero_loss() {
        let config = ValueAgentConfig {
            epsilon: EpsilonSchedule::constant(0.0),
            hidden: vec![4],
            batch_size: 2,
            warmup: 2,
            gamma: 0.5,
            ..Default::default()
        };
        let mut agent = ValueAgent::new(config, 1, 2, 0).unwrap();
        let noise = agent.online().zero_noise();
        // Terminal transitions whose reward equals the current Q value.
        for x in [0.5, -0.25] {
            let q = agent.q_values(&noise, &[x]).unwrap();
            agent
                .observe(Transition {
                    x: vec![x],
                    a: 1,
                    r: q[1],
                    y: vec![0.0],
                    terminal: true,
                })
                .unwrap();
        }
        let before = agent.online().clone();
        let stats = agent.train_step().unwrap().unwrap();
        assert!(stats.loss < 1e-24);
        assert_eq!(agent.online(), &before);
    }

    #[test]
    fn target_frozen_between_syncs() {
        let config = ValueAgentConfig {
            target_period: 3,
            ..noisy_config(false)
        };
        let mut agent = ValueAgent::new(config, 1, 2, 5).unwrap();
        for i in 0..8 {
            agent
                .observe(Transition {
                    a: i % 2,
                    ..transition(i)
                })
                .unwrap();
        }
        let initial = agent.target().clone();
        for step in 1..=3 {
            let stats = agent.train_step().unwrap().unwrap();
            if step < 3 {
                assert_eq!(agent.target(), &initial);
                assert!(!stats.target_synced);
            } else {
                assert!(stats.target_synced);
                assert_eq!(agent.target(), agent.online());
            }
        }
    }

    #[test]
    fn dueling_gradient_matches_finite_difference() {
        let mut rng = RngStream::new(4, StreamId::Init);
        let net = Network::build(
            2,
            &[5],
            &[HeadSpec::linear(1), HeadSpec::linear(3)],
            None,
            &mut rng,
        )
        .unwrap();
        let noise = net.zero_noise();
        let x = [0.4, -0.9];
        let a = 2;
        let loss = |n: &Network| dueling_q(&n.forward(&noise, &x).unwrap())[a];
        let up = q_upstream(true, 3, a, 1.0);
        let g = net.backward(&noise, &x, &up).unwrap().to_flat();
        let params = net.parameters();
        for i in 0..params.len() {
            let mut p = params.clone();
            let h = 1e-6;
            p[i] += h;
            let mut plus = net.clone();
            plus.set_parameters(&p).unwrap();
            p[i] -= 2.0 * h;
            let mut minus = net.clone();
            minus.set_parameters(&p).unwrap();
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param {i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn sequential_and_parallel_batches_agree() {
        let run = |execution| {
            let config = ValueAgentConfig {
                execution,
                ..noisy_config(true)
            };
            let agent = ValueAgent::new(config, 5, 2, 11).unwrap();
            let env = EnvConfig::Chain { n: 5, cap: None }.build().unwrap();
            let mut trainer = ValueTrainer::new(agent, env, 11).unwrap();
            trainer.run(200).unwrap();
            trainer.agent.online().parameters()
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn trainer_rejects_mismatched_env() {
        let agent = ValueAgent::new(noisy_config(false), 3, 2, 0).unwrap();
        let env = EnvConfig::Chain { n: 5, cap: None }.build().unwrap();
        assert!(matches!(
            ValueTrainer::new(agent, env, 0),
            Err(Error::Shape(_))
        ));
    }
}
