//! Step reward for the residual policy: quadratic penalties on headway
//! error, speed error and control effort, plus a flat penalty whenever the
//! safety barrier had to intervene.

use serde::{Deserialize, Serialize};

use crate::controllers::ErrorState;
use crate::real::{lit, Real};

/// Reward weights and reference scales. All overridable from the experiment
/// config; the defaults put roughly one reference deviation of each term at
/// the same order of magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de> + crate::real::Real"))]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights<T> {
    pub w_dist: T,
    pub w_speed: T,
    pub w_accel: T,
    pub w_barrier: T,
    /// Reference headway-error scale (m).
    pub dist_ref: T,
    /// Reference speed-error scale (m/s).
    pub speed_ref: T,
    /// Reference acceleration scale (m/s^2).
    pub accel_ref: T,
}

impl<T: Real> Default for RewardWeights<T> {
    fn default() -> Self {
        RewardWeights {
            w_dist: lit(1.0),
            w_speed: lit(0.5),
            w_accel: lit(0.1),
            w_barrier: lit(5.0),
            dist_ref: lit(10.0),
            speed_ref: lit(5.0),
            accel_ref: lit(3.0),
        }
    }
}

impl<T: Real> RewardWeights<T> {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("reward.dist_ref", self.dist_ref),
            ("reward.speed_ref", self.speed_ref),
            ("reward.accel_ref", self.accel_ref),
        ] {
            if !(v > T::zero()) {
                errs.push(format!("{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [
            ("reward.w_dist", self.w_dist),
            ("reward.w_speed", self.w_speed),
            ("reward.w_accel", self.w_accel),
            ("reward.w_barrier", self.w_barrier),
        ] {
            if v < T::zero() {
                errs.push(format!("{name} must be >= 0, got {v}"));
            }
        }
        errs
    }
}

/// Reward of a step that observed error state `s`, executed acceleration
/// command `executed_accel`, and tripped the barrier iff `barrier_activated`.
/// Maximal (zero) at perfect tracking with zero effort.
pub fn reward<T: Real>(
    s: &ErrorState<T>,
    executed_accel: T,
    barrier_activated: bool,
    w: &RewardWeights<T>,
) -> T {
    let dd = s.delta_d() / w.dist_ref;
    let dv = s.delta_v() / w.speed_ref;
    let ac = executed_accel / w.accel_ref;
    let mut r = -(w.w_dist * dd * dd + w.w_speed * dv * dv + w.w_accel * ac * ac);
    if barrier_activated {
        r -= w.w_barrier;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::compute_error_state;
    use crate::dynamics::{SimConfig, VehicleState};

    fn err(delta_d: f64, delta_v: f64) -> ErrorState<f64> {
        // assemble through the public constructor path
        let cfg = SimConfig::<f64>::default();
        let v = 10.0;
        let ego = VehicleState::new(0.0, v, 0.0);
        let pred = VehicleState::new(cfg.d0 + cfg.h_d * v + delta_d, v + delta_v, 0.0);
        compute_error_state(&ego, &pred, &cfg)
    }

    #[test]
    fn perfect_tracking_is_zero() {
        let w = RewardWeights::default();
        assert_eq!(reward(&err(0.0, 0.0), 0.0, false, &w), 0.0);
    }

    #[test]
    fn one_reference_distance_deviation() {
        let w = RewardWeights::default();
        assert!((reward(&err(10.0, 0.0), 0.0, false, &w) - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn all_terms_and_barrier() {
        let w = RewardWeights::default();
        let r = reward(&err(10.0, 5.0), 3.0, true, &w);
        assert!((r - (-6.6)).abs() < 1e-12);
    }
}
