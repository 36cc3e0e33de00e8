//! Policy observation: the ego error state plus the delayed states of up to
//! three predecessors, zero-padded with presence flags and scaled by fixed
//! normalization constants so the network sees O(1) inputs.

use serde::{Deserialize, Serialize};

use crate::controllers::ErrorState;
use crate::real::{lit, Real};

/// 3 ego entries + 4 entries (speed, accel, gap, presence) per predecessor.
pub const OBS_DIM: usize = 3 + 3 * 4;

/// Fixed observation scales. Constants rather than running statistics keep
/// rollouts reproducible; they are stored in every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de> + crate::real::Real"))]
#[serde(default, deny_unknown_fields)]
pub struct ObsNorm<T> {
    pub pos_err: T,
    pub speed_err: T,
    pub accel: T,
    pub pred_speed: T,
    pub pred_accel: T,
    pub gap: T,
}

impl<T: Real> Default for ObsNorm<T> {
    fn default() -> Self {
        ObsNorm {
            pos_err: lit(10.0),
            speed_err: lit(5.0),
            accel: lit(3.0),
            pred_speed: lit(20.0),
            pred_accel: lit(3.0),
            gap: lit(50.0),
        }
    }
}

/// Delayed view of one predecessor: its reported speed and acceleration,
/// and its reported position minus the ego's current position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredecessorObs<T> {
    pub speed: T,
    pub accel: T,
    pub gap: T,
}

/// Assemble the fixed-width observation vector. `preds` holds the nearest
/// predecessor first; missing slots are zero with a zero presence flag.
pub fn build_observation<T: Real>(
    err: &ErrorState<T>,
    preds: &[PredecessorObs<T>],
    norm: &ObsNorm<T>,
) -> [T; OBS_DIM] {
    assert!(preds.len() <= 3, "at most three predecessors observed");
    let mut obs = [T::zero(); OBS_DIM];
    obs[0] = err.delta_d() / norm.pos_err;
    obs[1] = err.delta_v() / norm.speed_err;
    obs[2] = err.accel() / norm.accel;
    for (k, p) in preds.iter().enumerate() {
        let base = 3 + 4 * k;
        obs[base] = p.speed / norm.pred_speed;
        obs[base + 1] = p.accel / norm.pred_accel;
        obs[base + 2] = p.gap / norm.gap;
        obs[base + 3] = T::one();
    }
    obs
}
