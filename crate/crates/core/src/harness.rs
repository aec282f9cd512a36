//! Seeded experiments: training with periodic evaluation, and the run
//! directory written for each experiment.
//!
//! A run directory holds
//!
//! * `config.json`: the resolved [`ExperimentConfig`];
//! * `metrics.csv`: one row per (seed, evaluation point), columns
//!   `frame,seed,env,agent,raw_score,norm_score,sigma_bar_layer_0,...`
//!   followed by `sigma_bar_bias_layer_0,...`;
//! * `summary.json`: reference scores, per-seed results, the mean/median
//!   normalised score, wall-clock times and the Σ̄ observation;
//! * `checkpoints/seed_<s>.json`: final networks.
//!
//! Evaluation only draws from the `eval_*` streams (keyed by evaluation
//! point), so changing the evaluation schedule never changes training.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::a3c::{policy_forward, sample_categorical, A3CConfig, A3CTrainer};
use crate::checkpoint::{Architecture, Checkpoint};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::math::{argmax, mean};
use crate::metrics::{self, human_normalised, ComparisonRow, ScoreTriple, SigmaTrace};
use crate::net::{NetNoise, Network, NoiseSpec};
use crate::noisy::{NoiseKind, DEFAULT_SIGMA0};
use crate::par::Execution;
use crate::rng::{RngStream, StreamId};
use crate::value::{
    q_values, EpisodeRecord, EpsilonSchedule, ValueAgent, ValueAgentConfig, ValueTrainer,
};

/// Episodes used to estimate the uniform-random reference score.
pub const REFERENCE_EPISODES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Dqn,
    Dueling,
    A3c,
}

impl AgentKind {
    pub fn family(self) -> &'static str {
        match self {
            AgentKind::Dqn => "DQN",
            AgentKind::Dueling => "Dueling",
            AgentKind::A3c => "A3C",
        }
    }

    pub fn label(self, noisy: bool) -> String {
        let base = match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Dueling => "dueling",
            AgentKind::A3c => "a3c",
        };
        if noisy {
            format!("noisy-{base}")
        } else {
            base.to_string()
        }
    }

    /// Inverse of [`AgentKind::label`].
    pub fn parse_label(label: &str) -> Result<(Self, bool)> {
        let (noisy, base) = match label.strip_prefix("noisy-") {
            Some(rest) => (true, rest),
            None => (false, label),
        };
        Ok((base.parse()?, noisy))
    }

    /// Noise kind used when none is configured.
    pub fn default_noise_kind(self) -> NoiseKind {
        match self {
            AgentKind::A3c => NoiseKind::Independent,
            _ => NoiseKind::Factorised,
        }
    }

    pub fn default_eval_noise(self) -> NoisePolicy {
        match self {
            AgentKind::A3c => NoisePolicy::Frozen,
            _ => NoisePolicy::ResamplePerAction,
        }
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dqn" => Ok(AgentKind::Dqn),
            "dueling" => Ok(AgentKind::Dueling),
            "a3c" => Ok(AgentKind::A3c),
            _ => Err(Error::Config(format!(
                "unknown agent `{s}` (expected dqn, dueling or a3c)"
            ))),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label(false))
    }
}

/// How network noise is handled while evaluating.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoisePolicy {
    /// A new sample before every action.
    ResamplePerAction,
    /// One sample per episode.
    Frozen,
    /// Mean network (all noise zero).
    Zero,
}

impl FromStr for NoisePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resample-per-action" | "resample" => Ok(NoisePolicy::ResamplePerAction),
            "frozen" => Ok(NoisePolicy::Frozen),
            "zero" => Ok(NoisePolicy::Zero),
            _ => Err(Error::Config(format!("unknown noise policy `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub agent: AgentKind,
    pub noisy: bool,
    /// Defaults to factorised for value agents and independent for A3C.
    pub noise_kind: Option<NoiseKind>,
    pub sigma0: f64,
    /// Noisify the trunk as well as the heads.
    pub noisy_all_layers: bool,
    pub env: EnvConfig,
    pub seeds: Vec<u64>,
    /// Environment steps per seed.
    pub frames: u64,
    pub eval_period: u64,
    pub eval_episodes: usize,
    /// Defaults to resample-per-action for value agents, frozen for A3C.
    pub eval_noise: Option<NoisePolicy>,
    /// Value-agent hyperparameters; `dueling` and `noise` are set from the
    /// fields above.
    pub value: ValueAgentConfig,
    /// A3C hyperparameters; `noise` is set from the fields above.
    pub a3c: A3CConfig,
    /// How seeds are scheduled.
    pub execution: Execution,
    pub checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            agent: AgentKind::Dqn,
            noisy: true,
            noise_kind: None,
            sigma0: DEFAULT_SIGMA0,
            noisy_all_layers: false,
            env: EnvConfig::Chain { n: 10, cap: None },
            seeds: vec![0, 1, 2],
            frames: 50_000,
            eval_period: 5_000,
            eval_episodes: 10,
            eval_noise: None,
            value: ValueAgentConfig::default(),
            a3c: A3CConfig::default(),
            execution: Execution::default(),
            checkpoints: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn noise_spec(&self) -> Option<NoiseSpec> {
        self.noisy.then(|| NoiseSpec {
            kind: self.noise_kind.unwrap_or(self.agent.default_noise_kind()),
            sigma0: self.sigma0,
            all_layers: self.noisy_all_layers,
        })
    }

    pub fn eval_noise_policy(&self) -> NoisePolicy {
        self.eval_noise.unwrap_or(self.agent.default_eval_noise())
    }

    /// Value-agent configuration actually used. Noisy agents act greedily
    /// (ε = 0); baselines use the configured ε schedule.
    pub fn value_config(&self) -> ValueAgentConfig {
        ValueAgentConfig {
            dueling: self.agent == AgentKind::Dueling,
            noise: self.noise_spec(),
            epsilon: if self.noisy {
                EpsilonSchedule::constant(0.0)
            } else {
                self.value.epsilon
            },
            ..self.value.clone()
        }
    }

    pub fn a3c_config(&self) -> A3CConfig {
        A3CConfig {
            noise: self.noise_spec(),
            ..self.a3c.clone()
        }
    }

    pub fn label(&self) -> String {
        self.agent.label(self.noisy)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1".into());
        }
        if self.eval_period == 0 || (self.frames > 0 && self.eval_period > self.frames) {
            return bad(format!(
                "eval_period must lie in 1..={}",
                self.frames.max(1)
            ));
        }
        if !(self.sigma0 > 0.0) {
            return bad("sigma0 must be positive".into());
        }
        self.env.spec().map_err(|e| Error::Config(e.to_string()))?;
        match self.agent {
            AgentKind::A3c => self.a3c_config().validate(),
            _ => self.value_config().validate(),
        }
    }

    /// Evaluation frames: `0, p, 2p, ...` and finally `frames`.
    pub fn eval_schedule(&self) -> Vec<u64> {
        let mut points: Vec<u64> = (0..=self.frames / self.eval_period)
            .map(|i| i * self.eval_period)
            .collect();
        if *points.last().unwrap() != self.frames {
            points.push(self.frames);
        }
        points
    }
}

/// A frozen policy to evaluate.
#[derive(Clone, Debug)]
pub enum Snapshot {
    Value { net: Network, dueling: bool },
    ActorCritic { net: Network },
}

impl Snapshot {
    pub fn network(&self) -> &Network {
        match self {
            Snapshot::Value { net, .. } | Snapshot::ActorCritic { net } => net,
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Snapshot::Value { dueling: false, .. } => Architecture::Q,
            Snapshot::Value { dueling: true, .. } => Architecture::Dueling,
            Snapshot::ActorCritic { .. } => Architecture::ActorCritic,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        match ckpt.architecture {
            Architecture::Q => Snapshot::Value {
                net: ckpt.network,
                dueling: false,
            },
            Architecture::Dueling => Snapshot::Value {
                net: ckpt.network,
                dueling: true,
            },
            Architecture::ActorCritic => Snapshot::ActorCritic { net: ckpt.network },
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.architecture(), self.network().clone())
    }

    fn act(&self, noise: &NetNoise, x: &[f64], policy_rng: &mut RngStream) -> Result<usize> {
        match self {
            Snapshot::Value { net, dueling } => Ok(argmax(&q_values(net, *dueling, noise, x)?)),
            Snapshot::ActorCritic { net } => {
                let (pi, _) = policy_forward(net, noise, x)?;
                Ok(sample_categorical(&pi, policy_rng))
            }
        }
    }
}

/// Mean undiscounted return of `snapshot` over `episodes` episodes.
///
/// Randomness comes only from the evaluation streams of `seed`, keyed by `point`.
pub fn evaluate(
    snapshot: &Snapshot,
    env: &EnvConfig,
    episodes: usize,
    policy: NoisePolicy,
    seed: u64,
    point: u32,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let net = snapshot.network();
    let mut env_rng = RngStream::with_sub(seed, StreamId::EvalEnv, point);
    let mut noise_rng = RngStream::with_sub(seed, StreamId::EvalNoise, point);
    let mut policy_rng = RngStream::with_sub(seed, StreamId::EvalPolicy, point);
    let mut e = env.build()?;
    let fresh = |rng: &mut RngStream| {
        if net.is_noisy() && policy != NoisePolicy::Zero {
            net.sample_noise(rng)
        } else {
            net.zero_noise()
        }
    };
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut x = e.reset(&mut env_rng);
        let mut noise = fresh(&mut noise_rng);
        let mut total = 0.0;
        loop {
            if policy == NoisePolicy::ResamplePerAction && net.is_noisy() {
                noise = fresh(&mut noise_rng);
            }
            let a = snapshot.act(&noise, &x, &mut policy_rng)?;
            let step = e.step(a, &mut env_rng)?;
            total += step.reward;
            if step.done() {
                break;
            }
            x = step.observation;
        }
        returns.push(total);
    }
    Ok(mean(&returns))
}

/// `(random, human)` reference scores of an environment: the mean return of
/// a uniform-random policy over [`REFERENCE_EPISODES`] episodes, and the
/// exact optimal return.
pub fn reference_scores(env: &EnvConfig) -> Result<(f64, f64)> {
    let mut e = env.build()?;
    let actions = e.spec().actions;
    let human = e.spec().optimal_return;
    let mut rng = RngStream::new(0, StreamId::Reference);
    let mut total = 0.0;
    for _ in 0..REFERENCE_EPISODES {
        e.reset(&mut rng);
        loop {
            let a = rng.random_range(0..actions);
            let step = e.step(a, &mut rng)?;
            total += step.reward;
            if step.done() {
                break;
            }
        }
    }
    Ok((total / REFERENCE_EPISODES as f64, human))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub frame: u64,
    pub raw_score: f64,
    pub norm_score: f64,
    /// Σ̄ of each noisy layer (weights), canonical order.
    pub sigma_bar: Vec<f64>,
    pub sigma_bar_bias: Vec<f64>,
}

/// Everything `metrics.csv` records about one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub env: String,
    pub agent: String,
    pub points: Vec<EvalPoint>,
}

impl RunRecord {
    pub fn sigma_trace(&self) -> SigmaTrace {
        let layers = self.points.first().map_or(0, |p| p.sigma_bar.len());
        let mut trace = SigmaTrace {
            frames: self.points.iter().map(|p| p.frame).collect(),
            weights: vec![Vec::new(); layers],
            biases: vec![Vec::new(); layers],
        };
        for p in &self.points {
            for (i, (w, b)) in p.sigma_bar.iter().zip(&p.sigma_bar_bias).enumerate() {
                trace.weights[i].push(*w);
                trace.biases[i].push(*b);
            }
        }
        trace
    }

    pub fn raw_curve(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.raw_score).collect()
    }

    pub fn norm_curve(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.norm_score).collect()
    }
}

/// A finished seed: its record plus what is not part of `metrics.csv`.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub snapshot: Snapshot,
    /// Training episodes (all actors, in actor order, for A3C).
    pub episodes: Vec<EpisodeRecord>,
    pub wall_clock_secs: f64,
}

impl RunOutcome {
    /// 1-based index of the first training episode that reached the
    /// environment's success return.
    pub fn episodes_to_first_success(&self, success_return: f64) -> Option<usize> {
        self.episodes
            .iter()
            .position(|e| e.return_ >= success_return)
            .map(|i| i + 1)
    }
}

fn eval_point(
    config: &ExperimentConfig,
    snapshot: &Snapshot,
    seed: u64,
    index: usize,
    frame: u64,
    reference: (f64, f64),
) -> Result<EvalPoint> {
    let raw = evaluate(
        snapshot,
        &config.env,
        config.eval_episodes,
        config.eval_noise_policy(),
        seed,
        index as u32,
    )?;
    let norm = human_normalised(ScoreTriple {
        agent: raw,
        random: reference.0,
        human: reference.1,
    })?;
    let (sigma_bar, sigma_bar_bias) = metrics::network_sigma_bars(snapshot.network());
    Ok(EvalPoint {
        frame,
        raw_score: raw,
        norm_score: norm,
        sigma_bar,
        sigma_bar_bias,
    })
}

/// Trains and evaluates one seed.
pub fn run_seed(config: &ExperimentConfig, seed: u64, reference: (f64, f64)) -> Result<RunOutcome> {
    let start = Instant::now();
    let spec = config.env.spec()?;
    let schedule = config.eval_schedule();
    let mut points = Vec::with_capacity(schedule.len());
    let (snapshot, episodes) = match config.agent {
        AgentKind::Dqn | AgentKind::Dueling => {
            let vc = config.value_config();
            let dueling = vc.dueling;
            let agent = ValueAgent::new(vc, spec.obs_dim, spec.actions, seed)?;
            let mut trainer = ValueTrainer::new(agent, config.env.build()?, seed)?;
            for (i, &frame) in schedule.iter().enumerate() {
                trainer.run(frame - trainer.steps())?;
                let snap = Snapshot::Value {
                    net: trainer.agent.online().clone(),
                    dueling,
                };
                points.push(eval_point(config, &snap, seed, i, frame, reference)?);
            }
            let snap = Snapshot::Value {
                net: trainer.agent.online().clone(),
                dueling,
            };
            (snap, trainer.episodes().to_vec())
        }
        AgentKind::A3c => {
            let mut trainer = A3CTrainer::new(config.a3c_config(), &config.env, seed)?;
            for (i, &frame) in schedule.iter().enumerate() {
                trainer.run_until(frame)?;
                let snap = Snapshot::ActorCritic {
                    net: trainer.snapshot(),
                };
                points.push(eval_point(config, &snap, seed, i, frame, reference)?);
            }
            let episodes = trainer
                .actors()
                .iter()
                .flat_map(|a| a.episodes().iter().copied())
                .collect();
            (
                Snapshot::ActorCritic {
                    net: trainer.snapshot(),
                },
                episodes,
            )
        }
    };
    Ok(RunOutcome {
        record: RunRecord {
            seed,
            env: config.env.to_string(),
            agent: config.label(),
            points,
        },
        snapshot,
        episodes,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Validates `config`, then runs every seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunOutcome>> {
    config.validate()?;
    let reference = reference_scores(&config.env)?;
    config
        .execution
        .map(&config.seeds, |&seed| run_seed(config, seed, reference))
        .into_iter()
        .collect()
}

fn csv_header(layers: usize) -> Vec<String> {
    let mut h: Vec<String> = ["frame", "seed", "env", "agent", "raw_score", "norm_score"]
        .map(String::from)
        .to_vec();
    h.extend((0..layers).map(|i| format!("sigma_bar_layer_{i}")));
    h.extend((0..layers).map(|i| format!("sigma_bar_bias_layer_{i}")));
    h
}

/// Serialises records as `metrics.csv`. Floats use shortest round-trip
/// formatting, so [`parse_csv`] recovers them exactly.
pub fn write_csv<W: std::io::Write>(records: &[RunRecord], out: W) -> Result<()> {
    let layers = records
        .iter()
        .flat_map(|r| r.points.first())
        .map(|p| p.sigma_bar.len())
        .max()
        .unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(layers))?;
    for r in records {
        for p in &r.points {
            if p.sigma_bar.len() != layers || p.sigma_bar_bias.len() != layers {
                return Err(Error::Usage(
                    "records disagree on the number of noisy layers".into(),
                ));
            }
            let mut row = vec![
                p.frame.to_string(),
                r.seed.to_string(),
                r.env.clone(),
                r.agent.clone(),
                p.raw_score.to_string(),
                p.norm_score.to_string(),
            ];
            row.extend(
                p.sigma_bar
                    .iter()
                    .chain(&p.sigma_bar_bias)
                    .map(f64::to_string),
            );
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `metrics.csv` back into records (grouped by seed, env and agent in
/// order of first appearance).
pub fn parse_csv<R: std::io::Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    let layers = header
        .iter()
        .filter(|h| h.starts_with("sigma_bar_layer_"))
        .count();
    if header.len() != 6 + 2 * layers
        || header
            .iter()
            .take(6)
            .ne(csv_header(0).iter().map(String::as_str))
    {
        return Err(Error::Config("unexpected metrics.csv header".into()));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::Config(format!("bad number `{s}` in metrics.csv")))
    };
    let int = |s: &str| {
        s.parse::<u64>()
            .map_err(|_| Error::Config(format!("bad integer `{s}` in metrics.csv")))
    };
    let mut records: Vec<RunRecord> = Vec::new();
    for row in reader.records() {
        let row = row?;
        let (seed, env, agent) = (int(&row[1])?, &row[2], &row[3]);
        let point = EvalPoint {
            frame: int(&row[0])?,
            raw_score: num(&row[4])?,
            norm_score: num(&row[5])?,
            sigma_bar: (0..layers)
                .map(|i| num(&row[6 + i]))
                .collect::<Result<_>>()?,
            sigma_bar_bias: (0..layers)
                .map(|i| num(&row[6 + layers + i]))
                .collect::<Result<_>>()?,
        };
        match records
            .iter_mut()
            .find(|r| r.seed == seed && r.env == env && r.agent == agent)
        {
            Some(r) => r.points.push(point),
            None => records.push(RunRecord {
                seed,
                env: env.to_string(),
                agent: agent.to_string(),
                points: vec![point],
            }),
        }
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_raw_score: f64,
    pub max_raw_score: f64,
    pub max_norm_score: f64,
    pub training_episodes: usize,
    pub episodes_to_first_success: Option<usize>,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub env: String,
    pub agent: String,
    pub random_score: f64,
    pub human_score: f64,
    pub seeds: Vec<SeedSummary>,
    /// Human-normalised score (max over training, mean over seeds); with a
    /// single task the mean and median coincide.
    pub mean_norm_score: f64,
    pub median_norm_score: f64,
    pub wall_clock_secs: f64,
    /// How the output layer's Σ̄ moved over training (noisy agents).
    pub sigma_observation: Option<String>,
}

/// Describes the direction of the last noisy layer's Σ̄ over training.
pub fn sigma_observation(records: &[RunRecord]) -> Option<String> {
    let mut starts = Vec::new();
    let mut ends = Vec::new();
    for r in records {
        let trace = r.sigma_trace();
        let series = trace.output_layer()?;
        starts.push(*series.first()?);
        ends.push(*series.last()?);
    }
    if starts.is_empty() {
        return None;
    }
    let (a, b) = (mean(&starts), mean(&ends));
    let direction = if b < a {
        "decreased"
    } else if b > a {
        "increased"
    } else {
        "did not change"
    };
    Some(format!(
        "output-layer sigma_bar {direction} from {a:.6} to {b:.6} (mean over seeds)"
    ))
}

pub fn summarise(
    config: &ExperimentConfig,
    outcomes: &[RunOutcome],
    reference: (f64, f64),
) -> Result<Summary> {
    let success = config.env.spec()?.success_return;
    let seeds = outcomes
        .iter()
        .map(|o| {
            let raw = o.record.raw_curve();
            SeedSummary {
                seed: o.record.seed,
                final_raw_score: *raw.last().unwrap_or(&f64::NAN),
                max_raw_score: raw.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                max_norm_score: o
                    .record
                    .norm_curve()
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max),
                training_episodes: o.episodes.len(),
                episodes_to_first_success: o.episodes_to_first_success(success),
                wall_clock_secs: o.wall_clock_secs,
            }
        })
        .collect();
    let tasks: BTreeMap<String, Vec<Vec<f64>>> = [(
        config.env.to_string(),
        outcomes.iter().map(|o| o.record.norm_curve()).collect(),
    )]
    .into();
    let agg = metrics::aggregate(&tasks)?;
    let records: Vec<RunRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    Ok(Summary {
        config_hash: config.hash(),
        env: config.env.to_string(),
        agent: config.label(),
        random_score: reference.0,
        human_score: reference.1,
        seeds,
        mean_norm_score: agg.mean,
        median_norm_score: agg.median,
        wall_clock_secs: outcomes.iter().map(|o| o.wall_clock_secs).sum(),
        sigma_observation: if config.noisy {
            sigma_observation(&records)
        } else {
            None
        },
    })
}

/// Runs `config` and writes its run directory.
pub fn train(config: &ExperimentConfig, dir: &Path) -> Result<Summary> {
    config.validate()?;
    let reference = reference_scores(&config.env)?;
    let outcomes: Vec<RunOutcome> = config
        .execution
        .map(&config.seeds, |&seed| run_seed(config, seed, reference))
        .into_iter()
        .collect::<Result<_>>()?;
    let summary = summarise(config, &outcomes, reference)?;
    write_run_dir(dir, config, &outcomes, &summary)?;
    Ok(summary)
}

pub fn write_run_dir(
    dir: &Path,
    config: &ExperimentConfig,
    outcomes: &[RunOutcome],
    summary: &Summary,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), config.to_json()? + "\n")?;
    let records: Vec<RunRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    write_csv(&records, fs::File::create(dir.join("metrics.csv"))?)?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(summary)? + "\n",
    )?;
    if config.checkpoints {
        let ckpt_dir = dir.join("checkpoints");
        fs::create_dir_all(&ckpt_dir)?;
        for o in outcomes {
            o.snapshot
                .to_checkpoint()
                .save(&ckpt_dir.join(format!("seed_{}.json", o.record.seed)))?;
        }
    }
    Ok(())
}

/// Reads the records of a run directory (or a `metrics.csv` path).
pub fn load_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = if path.is_dir() {
        path.join("metrics.csv")
    } else {
        path.to_path_buf()
    };
    parse_csv(fs::File::open(&file)?)
}

/// Per-task normalised scores (max over training, mean over seeds).
fn task_curves(records: &[RunRecord]) -> BTreeMap<String, Vec<Vec<f64>>> {
    let mut tasks: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for r in records {
        tasks.entry(r.env.clone()).or_default().push(r.norm_curve());
    }
    tasks
}

/// Table row comparing a baseline agent with its noisy counterpart over the
/// environments both were run on.
pub fn compare(baseline: &[RunRecord], noisy: &[RunRecord]) -> Result<ComparisonRow> {
    let family = |records: &[RunRecord], want_noisy: bool| -> Result<AgentKind> {
        let mut kind = None;
        for r in records {
            let (k, n) = AgentKind::parse_label(&r.agent)?;
            if n != want_noisy || kind.is_some_and(|prev| prev != k) {
                return Err(Error::Config(format!(
                    "unexpected agent `{}` in comparison input",
                    r.agent
                )));
            }
            kind = Some(k);
        }
        kind.ok_or_else(|| Error::Config("empty comparison input".into()))
    };
    let (base_kind, noisy_kind) = (family(baseline, false)?, family(noisy, true)?);
    if base_kind != noisy_kind {
        return Err(Error::Config(format!(
            "cannot compare {base_kind} with noisy-{noisy_kind}"
        )));
    }
    let (mut base_tasks, mut noisy_tasks) = (task_curves(baseline), task_curves(noisy));
    base_tasks.retain(|env, _| noisy_tasks.contains_key(env));
    noisy_tasks.retain(|env, _| base_tasks.contains_key(env));
    if base_tasks.is_empty() {
        return Err(Error::Config(
            "baseline and noisy runs share no environment".into(),
        ));
    }
    let b = metrics::aggregate(&base_tasks)?;
    let n = metrics::aggregate(&noisy_tasks)?;
    ComparisonRow::new(base_kind.family(), (b.mean, b.median), (n.mean, n.median))
}
