//! Versioned JSON checkpoints.
//!
//! ```json
//! {
//!   "format": "noisynet-checkpoint",
//!   "version": 1,
//!   "architecture": "q" | "dueling" | "actor_critic",
//!   "network": { "trunk": [...], "heads": [[...], ...] }
//! }
//! ```
//!
//! Each layer is `{"layer": {"type": "plain", "w": M, "b": [...]}, "activation": ...}`
//! or `{"layer": {"type": "noisy", "mu_w": M, "sigma_w": M, "mu_b": [...],
//! "sigma_b": [...], "kind": "independent" | "factorised"}, ...}` where a
//! matrix `M` is `{"rows": q, "cols": p, "data": [row-major values]}`.
//! Floats are written with shortest round-trip formatting, so a save/load
//! cycle is lossless.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Network;

pub const FORMAT: &str = "noisynet-checkpoint";
pub const VERSION: u32 = 1;

/// How the heads of a network are interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Single head of action values.
    Q,
    /// Value head then advantage head.
    Dueling,
    /// Softmax policy head then value head.
    ActorCritic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub network: Network,
}

impl Checkpoint {
    pub fn new(architecture: Architecture, network: Network) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            architecture,
            network,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unexpected format tag `{}`",
                ckpt.format
            )));
        }
        if ckpt.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                ckpt.version
            )));
        }
        ckpt.network.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{HeadSpec, NoiseSpec};
    use crate::noisy::NoiseKind;
    use crate::rng::{RngStream, StreamId};

    #[test]
    fn save_load_is_lossless() {
        let spec = NoiseSpec {
            kind: NoiseKind::Factorised,
            sigma0: 0.5,
            all_layers: false,
        };
        let net = Network::build(
            4,
            &[8],
            &[HeadSpec::linear(1), HeadSpec::linear(3)],
            Some(spec),
            &mut RngStream::new(1, StreamId::Init),
        )
        .unwrap();
        let ckpt = Checkpoint::new(Architecture::Dueling, net);
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        assert_eq!(back, ckpt);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn rejects_foreign_or_future_files() {
        let net = Network::build(
            2,
            &[],
            &[HeadSpec::linear(2)],
            None,
            &mut RngStream::new(1, StreamId::Init),
        )
        .unwrap();
        let mut ckpt = Checkpoint::new(Architecture::Q, net);
        ckpt.version = 99;
        assert!(matches!(
            Checkpoint::from_json(&ckpt.to_json().unwrap()),
            Err(Error::Checkpoint(_))
        ));
        ckpt.version = VERSION;
        ckpt.format = "something-else".into();
        assert!(matches!(
            Checkpoint::from_json(&ckpt.to_json().unwrap()),
            Err(Error::Checkpoint(_))
        ));
    }
}
