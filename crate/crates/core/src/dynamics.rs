//! Longitudinal vehicle dynamics: first-order actuator lag, semi-implicit
//! Euler kinematics with a speed floor at zero, and the fixed-lag delay
//! buffer used for stale vehicle-to-vehicle state.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::{lit, Real};

/// Kinematic state of one vehicle at one timestep. `position` is the
/// front-bumper longitudinal coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState<T> {
    pub position: T,
    pub speed: T,
    pub accel: T,
}

impl<T: Real> VehicleState<T> {
    pub fn new(position: T, speed: T, accel: T) -> Self {
        VehicleState {
            position,
            speed,
            accel,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.speed.is_finite() && self.accel.is_finite()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("actuator time constant must be positive, got {tau_a}")]
    NonPositiveLag { tau_a: f64 },
    #[error("integration step {dt} exceeds actuator time constant {tau_a}")]
    StepExceedsLag { dt: f64, tau_a: f64 },
}

/// One explicit-Euler step of the first-order actuator lag
/// `da/dt = (u - a) / tau_a`: the realized acceleration moves a fraction
/// `dt/tau_a` of the way toward the command.
pub fn step_actuator<T: Real>(accel: T, command: T, tau_a: T, dt: T) -> Result<T, DynamicsError> {
    if tau_a <= T::zero() {
        return Err(DynamicsError::NonPositiveLag {
            tau_a: tau_a.to_f64().unwrap_or(f64::NAN),
        });
    }
    if dt > tau_a {
        return Err(DynamicsError::StepExceedsLag {
            dt: dt.to_f64().unwrap_or(f64::NAN),
            tau_a: tau_a.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(accel + dt * (command - accel) / tau_a)
}

/// Semi-implicit Euler kinematics with a speed floor at zero: the updated
/// speed drives the position update, and a vehicle that would reverse
/// instead stays put for the step.
pub fn integrate_kinematics<T: Real>(state: VehicleState<T>, dt: T) -> VehicleState<T> {
    debug_assert!(dt > T::zero());
    let speed = (state.speed + state.accel * dt).max(T::zero());
    VehicleState {
        position: state.position + speed * dt,
        speed,
        accel: state.accel,
    }
}

/// Fixed-lag delay buffer. A read after the push at step `t` returns the
/// sample pushed at step `t - lag_steps`; before the buffer has filled, the
/// earliest pushed sample is repeated.
#[derive(Debug, Clone)]
pub struct DelayLine<S> {
    lag_steps: usize,
    buf: VecDeque<S>,
}

impl<S: Clone> DelayLine<S> {
    pub fn new(lag_steps: usize) -> Self {
        DelayLine {
            lag_steps,
            buf: VecDeque::with_capacity(lag_steps + 1),
        }
    }

    pub fn lag_steps(&self) -> usize {
        self.lag_steps
    }

    pub fn push(&mut self, sample: S) {
        self.buf.push_back(sample);
        if self.buf.len() > self.lag_steps + 1 {
            self.buf.pop_front();
        }
    }

    /// Delayed sample, or `None` before anything was pushed.
    pub fn read(&self) -> Option<&S> {
        self.buf.front()
    }

    /// Push `sample` and return the delayed sample in one call.
    pub fn push_read(&mut self, sample: S) -> S {
        self.push(sample);
        self.buf.front().expect("non-empty after push").clone()
    }
}

/// Simulation-wide physical parameters.
///
/// `safety_headway` is the [lower, upper] time-headway band enforced by the
/// safety barrier. `a_min_hard`/`a_max_hard` bound every realizable
/// acceleration, wide enough to admit emergency braking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de> + crate::real::Real"))]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig<T> {
    pub dt: T,
    pub tau_a: T,
    pub tau_c: T,
    pub h_d: T,
    pub d0: T,
    pub vehicle_length: T,
    pub safety_headway: [T; 2],
    pub a_min_hard: T,
    pub a_max_hard: T,
}

impl<T: Real> Default for SimConfig<T> {
    fn default() -> Self {
        SimConfig {
            dt: lit(0.1),
            tau_a: lit(0.2),
            tau_c: lit(0.3),
            h_d: lit(2.0),
            d0: lit(4.0),
            vehicle_length: lit(4.0),
            safety_headway: [lit(1.0), lit(3.0)],
            a_min_hard: lit(-12.0),
            a_max_hard: lit(4.0),
        }
    }
}

impl<T: Real> SimConfig<T> {
    /// All violated constraints at once, as human-readable strings.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.dt > T::zero()) {
            errs.push(format!("sim.dt must be > 0, got {}", self.dt));
        }
        if !(self.tau_a > T::zero()) {
            errs.push(format!("sim.tau_a must be > 0, got {}", self.tau_a));
        }
        if self.tau_c < T::zero() {
            errs.push(format!("sim.tau_c must be >= 0, got {}", self.tau_c));
        }
        if self.dt > T::zero() {
            if self.tau_a > T::zero() && steps_for(self.tau_a, self.dt).is_none() {
                errs.push(format!(
                    "sim.tau_a ({}) must be an integer multiple of sim.dt ({})",
                    self.tau_a, self.dt
                ));
            }
            if self.tau_c >= T::zero() && steps_for(self.tau_c, self.dt).is_none() {
                errs.push(format!(
                    "sim.tau_c ({}) must be an integer multiple of sim.dt ({})",
                    self.tau_c, self.dt
                ));
            }
            if self.tau_a > T::zero() && self.dt > self.tau_a {
                errs.push(format!(
                    "sim.dt ({}) must not exceed sim.tau_a ({})",
                    self.dt, self.tau_a
                ));
            }
        }
        if !(self.safety_headway[0] < self.h_d && self.h_d < self.safety_headway[1]) {
            errs.push(format!(
                "sim.safety_headway must bracket sim.h_d: {} < {} < {} fails",
                self.safety_headway[0], self.h_d, self.safety_headway[1]
            ));
        }
        if !(self.d0 > T::zero()) {
            errs.push(format!("sim.d0 must be > 0, got {}", self.d0));
        }
        if !(self.vehicle_length > T::zero()) {
            errs.push(format!(
                "sim.vehicle_length must be > 0, got {}",
                self.vehicle_length
            ));
        }
        if !(self.a_min_hard < T::zero() && T::zero() < self.a_max_hard) {
            errs.push(format!(
                "sim acceleration bounds must satisfy a_min_hard < 0 < a_max_hard, got [{}, {}]",
                self.a_min_hard, self.a_max_hard
            ));
        }
        errs
    }

    /// Communication delay expressed in whole simulation steps.
    /// Valid configurations always divide exactly.
    pub fn comm_lag_steps(&self) -> usize {
        steps_for(self.tau_c, self.dt).expect("tau_c validated as multiple of dt")
    }
}

/// Number of steps in `tau`, or `None` if `tau` is not an integer multiple
/// of `dt` (to 1e-6 relative).
pub fn steps_for<T: Real>(tau: T, dt: T) -> Option<usize> {
    let ratio = (tau / dt).to_f64()?;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > 1e-6 * ratio.abs().max(1.0) || rounded < 0.0 {
        None
    } else {
        Some(rounded as usize)
    }
}
