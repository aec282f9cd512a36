use rand::Rng;

use crate::env::{EnvSpec, EnvStep, EpisodeClock};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Half-width of the uniform reward noise.
pub const DEFAULT_NOISE: f64 = 0.1;

/// A one-step multi-armed bandit: pulling arm `a` pays `means[a] + U[-noise, noise]`.
#[derive(Clone, Debug)]
pub struct Bandit {
    spec: EnvSpec,
    means: Vec<f64>,
    noise: f64,
    clock: EpisodeClock,
}

impl Bandit {
    pub fn new(means: Vec<f64>, noise: f64) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::Config("a bandit needs at least two arms".into()));
        }
        let bound = means.iter().fold(0.0f64, |m, v| m.max(v.abs())) + noise;
        if !(bound <= 1.0) || noise < 0.0 {
            return Err(Error::Config(
                "bandit rewards must stay within [-1, 1]".into(),
            ));
        }
        let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let list: Vec<String> = means.iter().map(|m| m.to_string()).collect();
        let spec = EnvSpec {
            name: format!("bandit:{}", list.join(",")),
            obs_dim: 1,
            actions: means.len(),
            cap: 1,
            reward_bound: bound,
            optimal_return: best,
            success_return: best - noise,
        };
        Ok(Self {
            spec,
            means,
            noise,
            clock: EpisodeClock::default(),
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn reset(&mut self, _rng: &mut RngStream) -> Vec<f64> {
        self.clock.reset();
        vec![1.0]
    }

    pub fn step(&mut self, action: usize, rng: &mut RngStream) -> Result<EnvStep> {
        self.clock.check_running()?;
        let jitter = if self.noise > 0.0 {
            rng.random_range(-self.noise..=self.noise)
        } else {
            0.0
        };
        self.clock.tick(true, self.spec.cap);
        Ok(EnvStep {
            observation: vec![1.0],
            reward: self.means[action] + jitter,
            terminal: true,
            truncated: false,
        })
    }
}
