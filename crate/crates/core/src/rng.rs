//! Named, reproducible random streams.
//!
//! Every consumer of randomness owns an [`RngStream`] identified by
//! `(seed, stream id, sub-index)`. The generator is ChaCha8 seeded with
//! `seed` (expanded through `SeedableRng::seed_from_u64`) and positioned on
//! the ChaCha stream `(id.code() << 32) | sub`. Distinct triples therefore
//! select disjoint keystreams, and an identical triple replays the same bytes.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Label of a random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamId {
    /// Noise for the online network inside an optimisation step.
    OnlineNoise,
    /// Noise for the target network.
    TargetNoise,
    /// Noise used to choose actions.
    ActionNoise,
    /// Environment dynamics.
    Env,
    /// Parameter initialisation.
    Init,
    /// Minibatch sampling from the replay buffer.
    ReplaySampling,
    /// Epsilon-greedy coin flips and categorical policy draws.
    Exploration,
    /// Environment used during evaluation.
    EvalEnv,
    /// Network noise used during evaluation.
    EvalNoise,
    /// Action draws used during evaluation.
    EvalPolicy,
    /// Reference-score estimation (random-policy baseline).
    Reference,
}

impl StreamId {
    pub const ALL: [StreamId; 11] = [
        StreamId::OnlineNoise,
        StreamId::TargetNoise,
        StreamId::ActionNoise,
        StreamId::Env,
        StreamId::Init,
        StreamId::ReplaySampling,
        StreamId::Exploration,
        StreamId::EvalEnv,
        StreamId::EvalNoise,
        StreamId::EvalPolicy,
        StreamId::Reference,
    ];

    /// Stable numeric code; part of the reproducibility contract.
    pub fn code(self) -> u64 {
        match self {
            StreamId::OnlineNoise => 1,
            StreamId::TargetNoise => 2,
            StreamId::ActionNoise => 3,
            StreamId::Env => 4,
            StreamId::Init => 5,
            StreamId::ReplaySampling => 6,
            StreamId::Exploration => 7,
            StreamId::EvalEnv => 8,
            StreamId::EvalNoise => 9,
            StreamId::EvalPolicy => 10,
            StreamId::Reference => 11,
        }
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StreamId::OnlineNoise => "online_noise",
            StreamId::TargetNoise => "target_noise",
            StreamId::ActionNoise => "action_noise",
            StreamId::Env => "env",
            StreamId::Init => "init",
            StreamId::ReplaySampling => "replay_sampling",
            StreamId::Exploration => "exploration",
            StreamId::EvalEnv => "eval_env",
            StreamId::EvalNoise => "eval_noise",
            StreamId::EvalPolicy => "eval_policy",
            StreamId::Reference => "reference",
        };
        f.write_str(s)
    }
}

/// A single-owner deterministic random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    id: StreamId,
    sub: u32,
    tickets: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        Self::with_sub(seed, id, 0)
    }

    /// A stream further keyed by `sub` (actor index, evaluation point, ...).
    pub fn with_sub(seed: u64, id: StreamId, sub: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((id.code() << 32) | u64::from(sub));
        Self {
            seed,
            id,
            sub,
            tickets: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn sub(&self) -> u32 {
        self.sub
    }

    /// Hands out sequential serial numbers used to label draws made from
    /// this stream (one per network noise sample).
    pub fn next_ticket(&mut self) -> u64 {
        let t = self.tickets;
        self.tickets += 1;
        t
    }

    /// Number of tickets handed out so far.
    pub fn tickets(&self) -> u64 {
        self.tickets
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// The full set of training streams for one seed.
#[derive(Clone, Debug)]
pub struct Streams {
    pub online_noise: RngStream,
    pub target_noise: RngStream,
    pub action_noise: RngStream,
    pub env: RngStream,
    pub init: RngStream,
    pub replay: RngStream,
    pub exploration: RngStream,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self::with_sub(seed, 0)
    }

    pub fn with_sub(seed: u64, sub: u32) -> Self {
        Self {
            online_noise: RngStream::with_sub(seed, StreamId::OnlineNoise, sub),
            target_noise: RngStream::with_sub(seed, StreamId::TargetNoise, sub),
            action_noise: RngStream::with_sub(seed, StreamId::ActionNoise, sub),
            env: RngStream::with_sub(seed, StreamId::Env, sub),
            init: RngStream::with_sub(seed, StreamId::Init, sub),
            replay: RngStream::with_sub(seed, StreamId::ReplaySampling, sub),
            exploration: RngStream::with_sub(seed, StreamId::Exploration, sub),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{gaussian, mean};

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (mean(a), mean(b));
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn same_key_replays() {
        let a = gaussian(&mut RngStream::new(7, StreamId::OnlineNoise), 64);
        let b = gaussian(&mut RngStream::new(7, StreamId::OnlineNoise), 64);
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_keys_diverge() {
        let a = gaussian(&mut RngStream::new(7, StreamId::OnlineNoise), 8);
        let b = gaussian(&mut RngStream::new(7, StreamId::TargetNoise), 8);
        let c = gaussian(&mut RngStream::new(8, StreamId::OnlineNoise), 8);
        let d = gaussian(&mut RngStream::with_sub(7, StreamId::OnlineNoise, 1), 8);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn streams_are_uncorrelated() {
        let draws: Vec<Vec<f64>> = StreamId::ALL
            .iter()
            .map(|&id| gaussian(&mut RngStream::new(42, id), 10_000))
            .collect();
        for i in 0..draws.len() {
            for j in i + 1..draws.len() {
                let rho = correlation(&draws[i], &draws[j]);
                assert!(
                    rho.abs() < 0.05,
                    "{} vs {}: rho = {rho}",
                    StreamId::ALL[i],
                    StreamId::ALL[j]
                );
            }
        }
    }

    #[test]
    fn gaussian_moments() {
        let x = gaussian(&mut RngStream::new(1, StreamId::Init), 100_000);
        let m = mean(&x);
        let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        assert!(m.abs() <= 0.01, "mean {m}");
        assert!((0.97..=1.03).contains(&var), "variance {var}");
    }

    #[test]
    #[should_panic]
    fn gaussian_rejects_zero() {
        gaussian(&mut RngStream::new(1, StreamId::Init), 0);
    }
}
