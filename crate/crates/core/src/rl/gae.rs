//! Generalized advantage estimation over a collected trajectory.

use thiserror::Error;

use crate::real::Real;
use crate::rl::obs::OBS_DIM;

/// One collected environment step.
#[derive(Debug, Clone, Copy)]
pub struct Transition<T> {
    pub obs: [T; OBS_DIM],
    /// Residual action as executed by the sampler (m/s^2).
    pub action: T,
    /// Log-density of `action` under the collecting policy.
    pub log_prob: T,
    pub reward: T,
    /// Critic value estimate at `obs` when collected.
    pub value: T,
    /// Terminal flag: no bootstrapping across this step.
    pub done: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum GaeError {
    #[error("cannot compute advantages of an empty trajectory")]
    EmptyTrajectory,
}

/// GAE(gamma, lambda) advantages and value targets.
///
/// `bootstrap_value` is the critic estimate for the state after the last
/// transition (zero if the episode ended there). Raw advantages are
/// returned; batch normalization happens inside the PPO update.
pub fn compute_advantages<T: Real>(
    traj: &[Transition<T>],
    bootstrap_value: T,
    gamma: T,
    lambda: T,
) -> Result<(Vec<T>, Vec<T>), GaeError> {
    if traj.is_empty() {
        return Err(GaeError::EmptyTrajectory);
    }
    let n = traj.len();
    let mut advantages = vec![T::zero(); n];
    let mut returns = vec![T::zero(); n];
    let mut acc = T::zero();
    for t in (0..n).rev() {
        let (next_value, carry) = if traj[t].done {
            (T::zero(), T::zero())
        } else if t + 1 < n {
            (traj[t + 1].value, acc)
        } else {
            (bootstrap_value, acc)
        };
        let delta = traj[t].reward + gamma * next_value - traj[t].value;
        acc = delta + gamma * lambda * carry;
        advantages[t] = acc;
        returns[t] = acc + traj[t].value;
    }
    Ok((advantages, returns))
}
