//! Deterministic longitudinal control for mixed platoons of automated and
//! human-driven vehicles.
//!
//! The control scheme combines three layers:
//!
//! * a linear constant-time-headway feedback law (the physics prior),
//! * a residual policy trained with PPO that adds a bounded correction on
//!   top of the prior,
//! * a safety projection that clamps the combined command into the set of
//!   actions keeping the one-step-predicted headway inside a safe band.
//!
//! Vehicles experience a first-order actuator lag and receive predecessor
//! state over a fixed-delay channel. Human-driven vehicles follow the
//! Intelligent Driver Model on the true (undelayed) gap.
//!
//! The numeric core is generic over the scalar type through [`Real`]
//! (`f32` or `f64`); simulation artifacts such as traces, checkpoints and
//! reports are `f64`, and the crate root exports `f64` aliases for the
//! common types.

// Validation code uses `!(x > bound)` on purpose: a NaN parameter must fail
// the check, which the negated comparison guarantees.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod controllers;
pub mod dynamics;
pub mod engine;
pub mod metrics;
pub mod real;
pub mod rl;
pub mod rng;
pub mod scenarios;

pub use real::Real;

/// Speed (m/s) below which time headway is treated as undefined: the safety
/// barrier switches to a standstill gap constraint and the headway error
/// metric excludes the timestep.
pub const LOW_SPEED_CUTOFF: f64 = 0.5;

pub type VehicleState = dynamics::VehicleState<f64>;
pub type SimConfig = dynamics::SimConfig<f64>;
pub type ErrorState = controllers::ErrorState<f64>;
pub type LinearGains = controllers::LinearGains<f64>;
pub type IdmParams = controllers::IdmParams<f64>;
pub type SafeActionInterval = barrier::SafeActionInterval<f64>;
pub type PpoHyper = rl::PpoHyper<f64>;
pub type RewardWeights = rl::RewardWeights<f64>;
pub type ObsNorm = rl::ObsNorm<f64>;
pub type Transition = rl::Transition<f64>;
