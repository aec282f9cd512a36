//! Seeded toy environments behind one step interface.
//!
//! | name                   | observation                     | actions | reward                                  |
//! |------------------------|---------------------------------|---------|-----------------------------------------|
//! | `chain:N[:cap]`        | one-hot position (N)            | 2       | left +0.001, right off the end +1       |
//! | `grid:W[xH][:cap]`     | normalised (x, y)               | 4       | +1 on reaching the far corner           |
//! | `bandit:m1,m2,...`     | constant `[1]`                  | arms    | arm mean + U[-0.1, 0.1], one step       |
//!
//! Episodes end at a terminal state or when the step cap is hit; a capped
//! step is flagged `truncated` (not terminal) so learners keep bootstrapping.

pub mod bandit;
pub mod chain;
pub mod grid;

pub use bandit::Bandit;
pub use chain::Chain;
pub use grid::GridWorld;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    /// The step cap was reached without a terminal transition.
    pub truncated: bool,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub actions: usize,
    pub cap: usize,
    /// Every reward satisfies `|r| <= reward_bound`.
    pub reward_bound: f64,
    /// Exact optimal undiscounted (expected) episode return.
    pub optimal_return: f64,
    /// An episode whose return reaches this value counts as solved.
    pub success_return: f64,
}

/// Parsed environment name, e.g. `chain:20:40`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EnvConfig {
    Chain {
        n: usize,
        cap: Option<usize>,
    },
    Grid {
        width: usize,
        height: usize,
        cap: Option<usize>,
    },
    Bandit {
        means: Vec<f64>,
    },
}

impl FromStr for EnvConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownEnv(s.to_string());
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| unknown());
        let mut parts = s.split(':');
        let kind = parts.next().ok_or_else(unknown)?;
        let args: Vec<&str> = parts.collect();
        match kind {
            "chain" => {
                let n = parse_usize(args.first().ok_or_else(unknown)?)?;
                let cap = args.get(1).map(|v| parse_usize(v)).transpose()?;
                if args.len() > 2 {
                    return Err(unknown());
                }
                Ok(EnvConfig::Chain { n, cap })
            }
            "grid" | "gridworld" => {
                let dims = args.first().copied().unwrap_or("5");
                let (width, height) = match dims.split_once('x') {
                    Some((w, h)) => (parse_usize(w)?, parse_usize(h)?),
                    None => {
                        let w = parse_usize(dims)?;
                        (w, w)
                    }
                };
                let cap = args.get(1).map(|v| parse_usize(v)).transpose()?;
                if args.len() > 2 {
                    return Err(unknown());
                }
                Ok(EnvConfig::Grid { width, height, cap })
            }
            "bandit" => {
                let list = args.first().ok_or_else(unknown)?;
                let means = list
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| unknown()))
                    .collect::<Result<Vec<_>>>()?;
                if args.len() > 1 {
                    return Err(unknown());
                }
                Ok(EnvConfig::Bandit { means })
            }
            _ => Err(unknown()),
        }
    }
}

impl fmt::Display for EnvConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvConfig::Chain { n, cap: None } => write!(f, "chain:{n}"),
            EnvConfig::Chain { n, cap: Some(c) } => write!(f, "chain:{n}:{c}"),
            EnvConfig::Grid { width, height, cap } => {
                write!(f, "grid:{width}x{height}")?;
                if let Some(c) = cap {
                    write!(f, ":{c}")?;
                }
                Ok(())
            }
            EnvConfig::Bandit { means } => {
                let list: Vec<String> = means.iter().map(|m| m.to_string()).collect();
                write!(f, "bandit:{}", list.join(","))
            }
        }
    }
}

impl TryFrom<String> for EnvConfig {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EnvConfig> for String {
    fn from(c: EnvConfig) -> String {
        c.to_string()
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<Env> {
        Ok(match self {
            EnvConfig::Chain { n, cap } => Env::Chain(Chain::new(*n, cap.unwrap_or(*n))?),
            EnvConfig::Grid { width, height, cap } => {
                let cap = cap.unwrap_or(4 * (width + height));
                Env::Grid(GridWorld::new(*width, *height, cap)?)
            }
            EnvConfig::Bandit { means } => {
                Env::Bandit(Bandit::new(means.clone(), bandit::DEFAULT_NOISE)?)
            }
        })
    }

    pub fn spec(&self) -> Result<EnvSpec> {
        Ok(self.build()?.spec().clone())
    }
}

/// A registered toy environment.
#[derive(Clone, Debug)]
pub enum Env {
    Chain(Chain),
    Grid(GridWorld),
    Bandit(Bandit),
}

impl Env {
    pub fn spec(&self) -> &EnvSpec {
        match self {
            Env::Chain(e) => e.spec(),
            Env::Grid(e) => e.spec(),
            Env::Bandit(e) => e.spec(),
        }
    }

    /// Starts a new episode and returns the initial observation.
    pub fn reset(&mut self, rng: &mut RngStream) -> Vec<f64> {
        match self {
            Env::Chain(e) => e.reset(rng),
            Env::Grid(e) => e.reset(rng),
            Env::Bandit(e) => e.reset(rng),
        }
    }

    /// Advances one step. Stepping a finished episode is a usage error.
    pub fn step(&mut self, action: usize, rng: &mut RngStream) -> Result<EnvStep> {
        if action >= self.spec().actions {
            return Err(Error::Usage(format!(
                "action {action} out of range for {} actions",
                self.spec().actions
            )));
        }
        match self {
            Env::Chain(e) => e.step(action, rng),
            Env::Grid(e) => e.step(action, rng),
            Env::Bandit(e) => e.step(action, rng),
        }
    }
}

/// Exact optimal return of a registered environment.
pub fn optimal_return(name: &str) -> Result<f64> {
    Ok(name.parse::<EnvConfig>()?.spec()?.optimal_return)
}

/// Tracks elapsed steps and the finished flag shared by every environment.
#[derive(Clone, Debug, Default)]
pub(crate) struct EpisodeClock {
    steps: usize,
    done: bool,
}

impl EpisodeClock {
    pub(crate) fn reset(&mut self) {
        *self = Self::default();
    }

    pub(crate) fn check_running(&self) -> Result<()> {
        if self.done {
            Err(Error::Usage(
                "step called on a finished episode; reset first".into(),
            ))
        } else {
            Ok(())
        }
    }

    /// Records one step and returns `(terminal, truncated)`.
    pub(crate) fn tick(&mut self, terminal: bool, cap: usize) -> (bool, bool) {
        self.steps += 1;
        let truncated = !terminal && self.steps >= cap;
        self.done = terminal || truncated;
        (terminal, truncated)
    }
}
