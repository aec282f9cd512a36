use crate::env::{EnvSpec, EnvStep, EpisodeClock};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const LEFT_REWARD: f64 = 0.001;
pub const GOAL_REWARD: f64 = 1.0;

/// `n` positions in a line. Left pays a small distractor and moves toward
/// the start; right pays nothing, except that stepping right from the last
/// position pays the goal reward and ends the episode.
#[derive(Clone, Debug)]
pub struct Chain {
    spec: EnvSpec,
    n: usize,
    pos: usize,
    clock: EpisodeClock,
}

impl Chain {
    pub fn new(n: usize, cap: usize) -> Result<Self> {
        if n < 2 || cap < 1 {
            return Err(Error::Config(format!(
                "chain needs n >= 2 and cap >= 1 (got n={n}, cap={cap})"
            )));
        }
        let spec = EnvSpec {
            name: if cap == n {
                format!("chain:{n}")
            } else {
                format!("chain:{n}:{cap}")
            },
            obs_dim: n,
            actions: 2,
            cap,
            reward_bound: GOAL_REWARD,
            optimal_return: Self::optimal(n, cap),
            success_return: GOAL_REWARD,
        };
        Ok(Self {
            spec,
            n,
            pos: 0,
            clock: EpisodeClock::default(),
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn observation(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        x[self.pos] = 1.0;
        x
    }

    pub fn reset(&mut self, _rng: &mut RngStream) -> Vec<f64> {
        self.pos = 0;
        self.clock.reset();
        self.observation()
    }

    pub fn step(&mut self, action: usize, _rng: &mut RngStream) -> Result<EnvStep> {
        self.clock.check_running()?;
        let (reward, terminal) = match action {
            LEFT => {
                self.pos = self.pos.saturating_sub(1);
                (LEFT_REWARD, false)
            }
            _ if self.pos + 1 == self.n => (GOAL_REWARD, true),
            _ => {
                self.pos += 1;
                (0.0, false)
            }
        };
        let (terminal, truncated) = self.clock.tick(terminal, self.spec.cap);
        Ok(EnvStep {
            observation: self.observation(),
            reward,
            terminal,
            truncated,
        })
    }

    /// Best achievable return by dynamic programming over (position, steps left).
    pub fn optimal(n: usize, cap: usize) -> f64 {
        // value[p] = best return from position p with `t` steps remaining.
        let mut value = vec![0.0; n];
        for _ in 0..cap {
            let next: Vec<f64> = (0..n)
                .map(|p| {
                    let left = LEFT_REWARD + value[p.saturating_sub(1)];
                    let right = if p + 1 == n {
                        GOAL_REWARD
                    } else {
                        value[p + 1]
                    };
                    left.max(right)
                })
                .collect();
            value = next;
        }
        value[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;

    fn rng() -> RngStream {
        RngStream::new(0, StreamId::Env)
    }

    /// Exhaustive search over every action string of length `cap`.
    fn brute_force_optimum(n: usize, cap: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for code in 0u32..(1 << cap) {
            let mut env = Chain::new(n, cap).unwrap();
            let mut r = rng();
            env.reset(&mut r);
            let mut total = 0.0;
            for k in 0..cap {
                let step = env.step(((code >> k) & 1) as usize, &mut r).unwrap();
                total += step.reward;
                if step.done() {
                    break;
                }
            }
            best = f64::max(best, total);
        }
        best
    }

    #[test]
    fn reset_is_one_hot_start() {
        let mut env = Chain::new(5, 5).unwrap();
        assert_eq!(env.reset(&mut rng()), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn five_rights_reach_the_goal() {
        let mut env = Chain::new(5, 5).unwrap();
        let mut r = rng();
        env.reset(&mut r);
        for i in 0..5 {
            let s = env.step(RIGHT, &mut r).unwrap();
            if i < 4 {
                assert_eq!((s.reward, s.terminal), (0.0, false));
            } else {
                assert_eq!((s.reward, s.terminal, s.truncated), (1.0, true, false));
            }
        }
        assert!(matches!(env.step(RIGHT, &mut r), Err(Error::Usage(_))));
    }

    #[test]
    fn left_pays_distractor() {
        let mut env = Chain::new(5, 5).unwrap();
        let mut r = rng();
        env.reset(&mut r);
        let s = env.step(LEFT, &mut r).unwrap();
        assert_eq!(s.reward, 0.001);
        assert_eq!(env.position(), 0);
    }

    #[test]
    fn cap_truncates() {
        let mut env = Chain::new(4, 2).unwrap();
        let mut r = rng();
        env.reset(&mut r);
        env.step(RIGHT, &mut r).unwrap();
        let s = env.step(RIGHT, &mut r).unwrap();
        assert!(s.truncated && !s.terminal);
    }

    #[test]
    fn optimum_matches_exhaustive_search() {
        for n in 2..=8 {
            for cap in n..=(n + 4).min(12) {
                let dp = Chain::optimal(n, cap);
                let brute = brute_force_optimum(n, cap);
                assert!(
                    (dp - brute).abs() < 1e-12,
                    "n={n} cap={cap}: {dp} vs {brute}"
                );
            }
        }
        assert_eq!(brute_force_optimum(5, 5), 1.0);
        for n in [5, 10, 12, 20, 50] {
            assert_eq!(Chain::optimal(n, n), 1.0);
        }
    }

    #[test]
    fn longer_caps_admit_distractor_detours() {
        // Idling on the left before walking right adds 0.001 per spare step.
        assert!((Chain::optimal(20, 40) - 1.02).abs() < 1e-12);
    }

    #[test]
    fn random_policy_rarely_reaches_goal() {
        use rand::Rng;
        let mut env = Chain::new(10, 10).unwrap();
        let mut r = rng();
        let mut policy = RngStream::new(1, StreamId::Exploration);
        let episodes = 10_000;
        let mut hits = 0;
        for _ in 0..episodes {
            env.reset(&mut r);
            loop {
                let s = env.step(policy.random_range(0..2), &mut r).unwrap();
                if s.terminal {
                    hits += 1;
                }
                if s.done() {
                    break;
                }
            }
        }
        let freq = hits as f64 / episodes as f64;
        assert!(freq < 0.02, "goal frequency {freq}");
        assert!(freq <= 0.5f64.powi(9) * 10.0);
    }
}
