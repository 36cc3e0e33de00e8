//! Policy checkpoint: a self-describing JSON container with layer shapes,
//! parameters, hyperparameters, normalization constants and the training
//! seed. Loading validates every shape.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rl::net::{Actor, Critic, Mlp, LOG_STD_MAX, LOG_STD_MIN};
use crate::rl::obs::ObsNorm;
use crate::rl::ppo::PpoHyper;
use crate::rl::reward::RewardWeights;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpWeights {
    fn from_net(net: &Mlp<f64>) -> Self {
        MlpWeights {
            input_dim: net.input_dim,
            hidden_dim: net.hidden_dim,
            w1: net.w1.clone(),
            b1: net.b1.clone(),
            w2: net.w2.clone(),
            b2: net.b2,
        }
    }

    fn to_net(&self) -> Mlp<f64> {
        Mlp {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2,
        }
    }

    fn shape_errors(&self, label: &str) -> Vec<String> {
        let mut errs = Vec::new();
        if self.w1.len() != self.input_dim * self.hidden_dim {
            errs.push(format!(
                "{label}.w1 has {} entries, expected {} ({} x {})",
                self.w1.len(),
                self.input_dim * self.hidden_dim,
                self.hidden_dim,
                self.input_dim
            ));
        }
        if self.b1.len() != self.hidden_dim {
            errs.push(format!(
                "{label}.b1 has {} entries, expected {}",
                self.b1.len(),
                self.hidden_dim
            ));
        }
        if self.w2.len() != self.hidden_dim {
            errs.push(format!(
                "{label}.w2 has {} entries, expected {}",
                self.w2.len(),
                self.hidden_dim
            ));
        }
        errs
    }

    fn all_finite(&self) -> bool {
        self.w1.iter().all(|x| x.is_finite())
            && self.b1.iter().all(|x| x.is_finite())
            && self.w2.iter().all(|x| x.is_finite())
            && self.b2.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub seed: u64,
    pub hyper: PpoHyper<f64>,
    pub obs_norm: ObsNorm<f64>,
    pub reward: RewardWeights<f64>,
    pub residual_limit: f64,
    pub log_std: f64,
    pub actor: MlpWeights,
    pub critic: MlpWeights,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read checkpoint {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("checkpoint {path} is not valid JSON: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
}

impl Checkpoint {
    pub fn from_policy(
        actor: &Actor<f64>,
        critic: &Critic<f64>,
        hyper: &PpoHyper<f64>,
        obs_norm: &ObsNorm<f64>,
        reward: &RewardWeights<f64>,
        seed: u64,
    ) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            seed,
            hyper: *hyper,
            obs_norm: *obs_norm,
            reward: *reward,
            residual_limit: actor.residual_limit,
            log_std: actor.log_std,
            actor: MlpWeights::from_net(&actor.net),
            critic: MlpWeights::from_net(&critic.net),
        }
    }

    /// Zero-weight policy: the actor mean is identically zero, which makes
    /// the combined controller coincide with the plain linear policy.
    pub fn zeroed(input_dim: usize, hidden_dim: usize, residual_limit: f64) -> Self {
        let zero = Mlp::<f64>::zeros(input_dim, hidden_dim);
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            seed: 0,
            hyper: PpoHyper::default(),
            obs_norm: ObsNorm::default(),
            reward: RewardWeights::default(),
            residual_limit,
            log_std: 0.0,
            actor: MlpWeights::from_net(&zero),
            critic: MlpWeights::from_net(&zero),
        }
    }

    pub fn validate(&self) -> Result<(), CheckpointError> {
        let mut errs = Vec::new();
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            errs.push(format!(
                "format_version {} unsupported (expected {})",
                self.format_version, CHECKPOINT_FORMAT_VERSION
            ));
        }
        errs.extend(self.actor.shape_errors("actor"));
        errs.extend(self.critic.shape_errors("critic"));
        if self.actor.input_dim != self.critic.input_dim {
            errs.push(format!(
                "actor input dim {} differs from critic input dim {}",
                self.actor.input_dim, self.critic.input_dim
            ));
        }
        if !(self.residual_limit > 0.0) {
            errs.push(format!(
                "residual_limit must be > 0, got {}",
                self.residual_limit
            ));
        }
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.log_std) {
            errs.push(format!(
                "log_std {} outside [{LOG_STD_MIN}, {LOG_STD_MAX}]",
                self.log_std
            ));
        }
        if !self.actor.all_finite() || !self.critic.all_finite() {
            errs.push("non-finite parameter value".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CheckpointError::Invalid(errs.join("; ")))
        }
    }

    pub fn to_actor(&self) -> Actor<f64> {
        Actor::new(self.actor.to_net(), self.log_std, self.residual_limit)
    }

    pub fn to_critic(&self) -> Critic<f64> {
        Critic::new(self.critic.to_net())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let json = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        fs::write(path, json).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|source| CheckpointError::Json {
                path: path.display().to_string(),
                source,
            })?;
        ck.validate()?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::obs::OBS_DIM;
    use crate::rng::Rng;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("perpl-ck-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn roundtrip_is_exact() {
        let mut rng = Rng::new(404);
        let actor = Actor::new(Mlp::init(OBS_DIM, 100, 0.01, &mut rng), -0.7, 3.0);
        let critic = Critic::new(Mlp::init(OBS_DIM, 100, 1.0, &mut rng));
        let ck = Checkpoint::from_policy(
            &actor,
            &critic,
            &PpoHyper::default(),
            &ObsNorm::default(),
            &RewardWeights::default(),
            1234,
        );
        let path = tmpfile("roundtrip.json");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(loaded, ck);
        assert_eq!(loaded.to_actor(), actor);
        assert_eq!(loaded.to_critic(), critic);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut ck = Checkpoint::zeroed(OBS_DIM, 10, 3.0);
        ck.actor.w1.pop();
        let err = ck.validate().unwrap_err();
        assert!(err.to_string().contains("actor.w1"));

        let mut ck = Checkpoint::zeroed(OBS_DIM, 10, 3.0);
        ck.critic.hidden_dim = 11;
        assert!(ck.validate().is_err());
    }

    #[test]
    fn zeroed_actor_outputs_zero() {
        let ck = Checkpoint::zeroed(OBS_DIM, 100, 3.0);
        ck.validate().unwrap();
        let actor = ck.to_actor();
        assert_eq!(actor.mean(&[0.3; OBS_DIM]), 0.0);
    }
}
