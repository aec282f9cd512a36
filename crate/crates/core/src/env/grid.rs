use crate::env::{EnvSpec, EnvStep, EpisodeClock};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

/// A walled `width x height` grid. The agent starts at `(0, 0)` and earns 1
/// for reaching `(width-1, height-1)`. Bumping a wall leaves it in place.
#[derive(Clone, Debug)]
pub struct GridWorld {
    spec: EnvSpec,
    width: usize,
    height: usize,
    pos: (usize, usize),
    clock: EpisodeClock,
}

impl GridWorld {
    pub fn new(width: usize, height: usize, cap: usize) -> Result<Self> {
        if width < 2 || height < 2 || cap < 1 {
            return Err(Error::Config(
                "grid needs width, height >= 2 and cap >= 1".into(),
            ));
        }
        let shortest = width + height - 2;
        let spec = EnvSpec {
            name: format!("grid:{width}x{height}:{cap}"),
            obs_dim: 2,
            actions: 4,
            cap,
            reward_bound: 1.0,
            optimal_return: if cap >= shortest { 1.0 } else { 0.0 },
            success_return: 1.0,
        };
        Ok(Self {
            spec,
            width,
            height,
            pos: (0, 0),
            clock: EpisodeClock::default(),
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn position(&self) -> (usize, usize) {
        self.pos
    }

    fn observation(&self) -> Vec<f64> {
        vec![
            self.pos.0 as f64 / (self.width - 1) as f64,
            self.pos.1 as f64 / (self.height - 1) as f64,
        ]
    }

    pub fn reset(&mut self, _rng: &mut RngStream) -> Vec<f64> {
        self.pos = (0, 0);
        self.clock.reset();
        self.observation()
    }

    pub fn step(&mut self, action: usize, _rng: &mut RngStream) -> Result<EnvStep> {
        self.clock.check_running()?;
        let (x, y) = self.pos;
        self.pos = match action {
            UP => (x, (y + 1).min(self.height - 1)),
            RIGHT => ((x + 1).min(self.width - 1), y),
            DOWN => (x, y.saturating_sub(1)),
            _ => (x.saturating_sub(1), y),
        };
        let at_goal = self.pos == (self.width - 1, self.height - 1);
        let reward = if at_goal { 1.0 } else { 0.0 };
        let (terminal, truncated) = self.clock.tick(at_goal, self.spec.cap);
        Ok(EnvStep {
            observation: self.observation(),
            reward,
            terminal,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;

    #[test]
    fn starts_at_origin() {
        let mut g = GridWorld::new(5, 5, 40).unwrap();
        assert_eq!(
            g.reset(&mut RngStream::new(0, StreamId::Env)),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn wall_bump_keeps_position() {
        let mut g = GridWorld::new(5, 5, 40).unwrap();
        let mut r = RngStream::new(0, StreamId::Env);
        g.reset(&mut r);
        for a in [DOWN, LEFT] {
            let s = g.step(a, &mut r).unwrap();
            assert_eq!(g.position(), (0, 0));
            assert_eq!(s.reward, 0.0);
        }
    }

    #[test]
    fn shortest_path_scores_one() {
        let mut g = GridWorld::new(3, 3, 40).unwrap();
        let mut r = RngStream::new(0, StreamId::Env);
        g.reset(&mut r);
        let mut total = 0.0;
        for a in [RIGHT, RIGHT, UP, UP] {
            let s = g.step(a, &mut r).unwrap();
            total += s.reward;
            if s.done() {
                assert!(s.terminal);
            }
        }
        assert_eq!(total, 1.0);
        assert_eq!(g.spec().optimal_return, 1.0);
    }
}
