//! Noisy linear layers and the agents built on them.
//!
//! The crate provides:
//!
//! * [`noisy`]: plain and noisy linear layers with independent or factorised
//!   Gaussian noise and their initialisation rules;
//! * [`net`]: MLP composition with explicit noise samples and reverse-mode
//!   gradients for both μ and σ;
//! * [`value`]: DQN and dueling double-DQN agents, ε-greedy or noisy;
//! * [`a3c`]: n-step advantage actor-critic with a shared parameter store;
//! * [`env`]: seeded toy environments (chain, gridworld, bandit);
//! * [`metrics`]: score normalisation, aggregation and the Σ̄ diagnostic;
//! * [`harness`]: seeded experiments, evaluation and CSV/JSON output.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod a3c;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod harness;
pub mod math;
pub mod metrics;
pub mod net;
pub mod noisy;
pub mod optim;
pub mod par;
pub mod rng;
pub mod trace;
pub mod value;

pub use error::{Error, Result};
pub use math::Matrix;
pub use net::{Activation, GradientSet, HeadSpec, NetNoise, Network, NoiseSpec};
pub use noisy::{LayerNoise, LinearLayer, NoiseKind, NoisyLinear};
pub use par::Execution;
pub use rng::{RngStream, StreamId, Streams};
