//! Safety projection: clamp the combined control action into the set of
//! commands whose one-step-predicted time headway stays inside the safe
//! band.
//!
//! The constraint model is one forward step of the module's own discretized
//! dynamics: the ego vehicle passes through the actuator lag and the
//! kinematic integrator under the candidate command, while the predecessor
//! is propagated ballistically at its (delayed) reported speed. Predicted
//! headway is monotone in the command, so both interval endpoints are found
//! by bisection; the projection itself is then an exact minimum-deviation
//! clamp for this scalar action.

use crate::dynamics::{integrate_kinematics, step_actuator, SimConfig, VehicleState};
use crate::real::{lit, Real};
use crate::LOW_SPEED_CUTOFF;

/// Bisection tolerance on the interval endpoints (m/s^2).
pub const ENDPOINT_TOL: f64 = 1e-6;

/// Closed interval of admissible acceleration commands.
///
/// When `feasible` is false no command satisfies the headway constraint and
/// `lo == hi` holds the emergency action: maximum braking when the violation
/// is on the near-collision side, maximum allowed acceleration when the ego
/// vehicle cannot avoid falling too far behind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeActionInterval<T> {
    pub lo: T,
    pub hi: T,
    pub feasible: bool,
}

/// Predicted (bumper gap, ego speed) after one step under command `u`.
fn predict_one_step<T: Real>(
    ego: &VehicleState<T>,
    pred_delayed: &VehicleState<T>,
    u: T,
    cfg: &SimConfig<T>,
) -> (T, T) {
    let accel_next = step_actuator(ego.accel, u, cfg.tau_a, cfg.dt)
        .expect("validated config: 0 < dt <= tau_a");
    let ego_next = integrate_kinematics(
        VehicleState::new(ego.position, ego.speed, accel_next),
        cfg.dt,
    );
    let pred_pos_next = pred_delayed.position + pred_delayed.speed * cfg.dt;
    (pred_pos_next - ego_next.position, ego_next.speed)
}

/// Near-collision constraint. At driving speeds the predicted headway must
/// stay above the lower band edge; below the low-speed cutoff the headway is
/// undefined and the standstill spacing `d0` is required instead.
/// Satisfied for small commands, violated for large ones.
fn close_ok<T: Real>(gap_next: T, speed_next: T, cfg: &SimConfig<T>) -> bool {
    let eps = lit::<T>(LOW_SPEED_CUTOFF);
    if speed_next < eps {
        gap_next >= cfg.d0
    } else {
        gap_next - cfg.d0 >= cfg.safety_headway[0] * speed_next
    }
}

/// Falling-behind constraint: predicted headway must not exceed the upper
/// band edge, with the speed floored at the low-speed cutoff so a stopping
/// vehicle is compared against the gap it could cover at that cutoff.
/// Satisfied for large commands, violated for small ones.
fn far_ok<T: Real>(gap_next: T, speed_next: T, cfg: &SimConfig<T>) -> bool {
    let eps = lit::<T>(LOW_SPEED_CUTOFF);
    gap_next - cfg.d0 <= cfg.safety_headway[1] * speed_next.max(eps)
}

/// Admissible command interval for `ego` following `pred_delayed`.
///
/// Infeasibility is reported through the flag, never as an error; the
/// near-collision side wins when both band edges are unreachable.
pub fn admissible_interval<T: Real>(
    ego: &VehicleState<T>,
    pred_delayed: &VehicleState<T>,
    cfg: &SimConfig<T>,
) -> SafeActionInterval<T> {
    let (a_min, a_max) = (cfg.a_min_hard, cfg.a_max_hard);
    let tol = lit::<T>(ENDPOINT_TOL);

    let close_at = |u: T| {
        let (gap, speed) = predict_one_step(ego, pred_delayed, u, cfg);
        close_ok(gap, speed, cfg)
    };
    let far_at = |u: T| {
        let (gap, speed) = predict_one_step(ego, pred_delayed, u, cfg);
        far_ok(gap, speed, cfg)
    };

    if !close_at(a_min) {
        // even maximum braking ends up too close: emergency brake
        return SafeActionInterval {
            lo: a_min,
            hi: a_min,
            feasible: false,
        };
    }
    if !far_at(a_max) {
        // cannot catch up even at full acceleration: emergency accelerate
        return SafeActionInterval {
            lo: a_max,
            hi: a_max,
            feasible: false,
        };
    }

    // largest command still satisfying the near-collision constraint
    let hi = if close_at(a_max) {
        a_max
    } else {
        let (mut ok, mut bad) = (a_min, a_max);
        while bad - ok > tol {
            let mid = (ok + bad) / lit(2.0);
            if close_at(mid) {
                ok = mid;
            } else {
                bad = mid;
            }
        }
        ok
    };

    // smallest command still satisfying the falling-behind constraint
    let lo = if far_at(a_min) {
        a_min
    } else {
        let (mut bad, mut ok) = (a_min, a_max);
        while ok - bad > tol {
            let mid = (bad + ok) / lit(2.0);
            if far_at(mid) {
                ok = mid;
            } else {
                bad = mid;
            }
        }
        ok
    };

    if lo > hi {
        // band edges cross: no command satisfies both, treat as near-collision
        return SafeActionInterval {
            lo: a_min,
            hi: a_min,
            feasible: false,
        };
    }
    SafeActionInterval {
        lo,
        hi,
        feasible: true,
    }
}

/// Minimum-deviation projection of `combined` onto the interval. For this
/// scalar action the projection is exactly a clamp; an infeasible interval
/// carries its emergency action in `lo == hi`. The flag reports whether the
/// action was altered.
pub fn project<T: Real>(combined: T, interval: &SafeActionInterval<T>) -> (T, bool) {
    let safe = combined.max(interval.lo).min(interval.hi);
    let activated = !interval.feasible || safe != combined;
    (safe, activated)
}
