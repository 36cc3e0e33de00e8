//! Closed-form controllers: the constant-time-headway error state, the
//! linear feedback policy used as the physics prior, and the Intelligent
//! Driver Model for human-driven vehicles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{SimConfig, VehicleState};
use crate::real::{lit, Real};

/// Controller state triple `[delta_d, delta_v, accel]`.
///
/// `delta_d` is the gap error relative to the constant-time-headway target
/// `d0 + h_d * v`, measured against the delayed predecessor position;
/// `delta_v` is predecessor speed minus ego speed (delayed predecessor);
/// `accel` is the ego realized acceleration.
///
/// Build it with [`compute_error_state`]; higher layers should not assemble
/// the triple by hand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorState<T> {
    delta_d: T,
    delta_v: T,
    accel: T,
}

impl<T: Real> ErrorState<T> {
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) fn new(delta_d: T, delta_v: T, accel: T) -> Self {
        ErrorState {
            delta_d,
            delta_v,
            accel,
        }
    }

    pub fn delta_d(&self) -> T {
        self.delta_d
    }

    pub fn delta_v(&self) -> T {
        self.delta_v
    }

    pub fn accel(&self) -> T {
        self.accel
    }
}

/// Error state of `ego` against its (communication-delayed) predecessor.
pub fn compute_error_state<T: Real>(
    ego: &VehicleState<T>,
    pred_delayed: &VehicleState<T>,
    cfg: &SimConfig<T>,
) -> ErrorState<T> {
    ErrorState {
        delta_d: pred_delayed.position - ego.position - cfg.d0 - cfg.h_d * ego.speed,
        delta_v: pred_delayed.speed - ego.speed,
        accel: ego.accel,
    }
}

/// Feedback gains of the linear policy. The acceleration gain is fixed at
/// zero; the field exists so the policy is the full dot product with the
/// error state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de> + crate::real::Real"))]
#[serde(default, deny_unknown_fields)]
pub struct LinearGains<T> {
    pub k_d: T,
    pub k_v: T,
    pub k_a: T,
}

impl<T: Real> Default for LinearGains<T> {
    fn default() -> Self {
        LinearGains {
            k_d: lit(0.62),
            k_v: lit(0.37),
            k_a: T::zero(),
        }
    }
}

impl<T: Real> LinearGains<T> {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.k_d > T::zero()) {
            errs.push(format!("gains.k_d must be > 0, got {}", self.k_d));
        }
        if !(self.k_v > T::zero()) {
            errs.push(format!("gains.k_v must be > 0, got {}", self.k_v));
        }
        if self.k_a != T::zero() {
            errs.push(format!("gains.k_a must be 0, got {}", self.k_a));
        }
        errs
    }
}

/// Linear state-feedback acceleration command: `k . s`. Exactly linear in
/// the error state, so its response to out-of-range states is the scaled
/// response to in-range ones.
pub fn linear_policy<T: Real>(s: &ErrorState<T>, k: &LinearGains<T>) -> T {
    k.k_d * s.delta_d + k.k_v * s.delta_v + k.k_a * s.accel
}

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de> + crate::real::Real"))]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams<T> {
    /// Desired free-flow speed (m/s).
    pub v0: T,
    /// Safe time headway (s).
    pub t_head: T,
    /// Maximum acceleration (m/s^2).
    pub a_max: T,
    /// Comfortable deceleration (m/s^2).
    pub b_comf: T,
    /// Free-flow acceleration exponent.
    pub sigma: T,
    /// Minimum net distance at standstill (m).
    pub s0: T,
}

impl<T: Real> Default for IdmParams<T> {
    fn default() -> Self {
        IdmParams {
            v0: lit(20.3),
            t_head: lit(1.2),
            a_max: lit(1.9),
            b_comf: lit(3.9),
            sigma: lit(4.0),
            s0: lit(2.0),
        }
    }
}

impl<T: Real> IdmParams<T> {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("idm.v0", self.v0),
            ("idm.t_head", self.t_head),
            ("idm.a_max", self.a_max),
            ("idm.b_comf", self.b_comf),
            ("idm.s0", self.s0),
        ] {
            if !(v > T::zero()) {
                errs.push(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.sigma >= T::one()) {
            errs.push(format!("idm.sigma must be >= 1, got {}", self.sigma));
        }
        errs
    }

    /// Dynamic desired gap `s* = s0 + v T + v dv / (2 sqrt(a b))`.
    fn desired_gap(&self, speed: T, closing_speed: T) -> T {
        let two = lit::<T>(2.0);
        self.s0 + speed * self.t_head + speed * closing_speed / (two * (self.a_max * self.b_comf).sqrt())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum IdmError {
    #[error("IDM gap must be positive, got {gap} (collision state)")]
    NonPositiveGap { gap: f64 },
    #[error("no IDM equilibrium at speed {speed} >= desired speed {v0}")]
    SpeedAtOrAboveDesired { speed: f64, v0: f64 },
}

/// IDM acceleration before any realizable-bound clamp.
///
/// `gap` is the net (bumper-to-bumper) distance; `closing_speed` is ego
/// speed minus predecessor speed, the IDM sign convention. Note this is the
/// opposite sign of the controller error state's `delta_v`.
pub fn idm_accel_raw<T: Real>(
    ego_speed: T,
    gap: T,
    closing_speed: T,
    p: &IdmParams<T>,
) -> Result<T, IdmError> {
    if gap <= T::zero() {
        return Err(IdmError::NonPositiveGap {
            gap: gap.to_f64().unwrap_or(f64::NAN),
        });
    }
    let free = (ego_speed / p.v0).powf(p.sigma);
    let interaction = p.desired_gap(ego_speed, closing_speed) / gap;
    Ok(p.a_max * (T::one() - free - interaction * interaction))
}

/// IDM acceleration clamped to the realizable band.
pub fn idm_accel<T: Real>(
    ego_speed: T,
    gap: T,
    closing_speed: T,
    p: &IdmParams<T>,
    accel_bounds: (T, T),
) -> Result<T, IdmError> {
    let raw = idm_accel_raw(ego_speed, gap, closing_speed, p)?;
    Ok(raw.max(accel_bounds.0).min(accel_bounds.1))
}

/// Net gap at which IDM holds `speed` with zero acceleration and zero
/// closing speed: `s*(v, 0) / sqrt(1 - (v/v0)^sigma)`.
pub fn idm_equilibrium_gap<T: Real>(speed: T, p: &IdmParams<T>) -> Result<T, IdmError> {
    if speed >= p.v0 {
        return Err(IdmError::SpeedAtOrAboveDesired {
            speed: speed.to_f64().unwrap_or(f64::NAN),
            v0: p.v0.to_f64().unwrap_or(f64::NAN),
        });
    }
    let free = (speed / p.v0).powf(p.sigma);
    Ok(p.desired_gap(speed, T::zero()) / (T::one() - free).sqrt())
}
