//! Residual policy learning: actor/critic networks, generalized advantage
//! estimation, the PPO update, the reward, and checkpoint serialization.

mod checkpoint;
mod gae;
mod net;
mod obs;
mod ppo;
mod reward;

pub use checkpoint::{Checkpoint, CheckpointError, MlpWeights};
pub use gae::{compute_advantages, GaeError, Transition};
pub use net::{gaussian_logprob, Actor, Critic, Mlp, MlpGrad, LOG_STD_MAX, LOG_STD_MIN};
pub use obs::{build_observation, ObsNorm, PredecessorObs, OBS_DIM};
pub use ppo::{
    batch_gradients, batch_loss, clipped_objective, flatten_params, ppo_update, set_params, Adam,
    PpoDiagnostics, PpoError, PpoHyper,
};
pub use reward::{reward, RewardWeights};
