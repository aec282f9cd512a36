//! Opt-in log of noise sampling and use, for auditing the noise discipline.

use std::collections::BTreeSet;

use crate::net::{NetNoise, NoiseOrigin};
use crate::rng::StreamId;

/// What happened to a network noise sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseEvent {
    /// A fresh sample was drawn.
    Sampled(NoiseOrigin),
    /// A forward pass consumed the sample with this origin.
    Used {
        origin: Option<NoiseOrigin>,
        role: NoiseRole,
    },
}

/// Which forward pass consumed a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseRole {
    /// Online network on minibatch states.
    Online,
    /// Target network on next states.
    Target,
    /// Online network choosing bootstrap actions (double DQN).
    Selection,
    /// Acting in the environment.
    Acting,
    /// Any forward pass inside an actor-critic rollout.
    Rollout,
}

#[derive(Clone, Debug, Default)]
pub struct NoiseLog {
    enabled: bool,
    events: Vec<NoiseEvent>,
}

impl NoiseLog {
    pub fn enabled() -> Self {
        Self {
            enabled: true,
            events: Vec::new(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn sampled(&mut self, noise: &NetNoise) {
        if let (true, Some(origin)) = (self.enabled, noise.origin) {
            self.events.push(NoiseEvent::Sampled(origin));
        }
    }

    pub fn used(&mut self, noise: &NetNoise, role: NoiseRole) {
        if self.enabled {
            self.events.push(NoiseEvent::Used {
                origin: noise.origin,
                role,
            });
        }
    }

    pub fn events(&self) -> &[NoiseEvent] {
        &self.events
    }

    pub fn take(&mut self) -> Vec<NoiseEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn clear(&mut self) {
        self.events.clear();
    }
}

/// Origins of all `Sampled` events.
pub fn sampled_origins(events: &[NoiseEvent]) -> Vec<NoiseOrigin> {
    events
        .iter()
        .filter_map(|e| match e {
            NoiseEvent::Sampled(o) => Some(*o),
            NoiseEvent::Used { .. } => None,
        })
        .collect()
}

/// Distinct streams that produced samples.
pub fn sampled_streams(events: &[NoiseEvent]) -> BTreeSet<StreamId> {
    sampled_origins(events)
        .into_iter()
        .map(|o| o.stream)
        .collect()
}

/// Distinct sample identities consumed with `role`.
pub fn used_with_role(events: &[NoiseEvent], role: NoiseRole) -> Vec<Option<NoiseOrigin>> {
    let mut seen = Vec::new();
    for e in events {
        if let NoiseEvent::Used { origin, role: r } = e {
            if *r == role && !seen.contains(origin) {
                seen.push(*origin);
            }
        }
    }
    seen
}
