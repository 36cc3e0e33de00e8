//! Closed-loop platoon simulation and the training/evaluation drivers.
//!
//! Per step: the lead vehicle follows its trajectory; every automated
//! follower reads communication-delayed predecessor states, combines the
//! linear prior with the residual policy and projects the sum through the
//! safety barrier; every human-driven follower applies the car-following
//! model to its true gap; then all followers advance through the actuator
//! lag and the kinematic integrator, and a collision check runs.
//!
//! A single episode is strictly single-threaded and deterministic.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{admissible_interval, project};
use crate::controllers::{compute_error_state, idm_accel, linear_policy, IdmError, IdmParams, LinearGains};
use crate::dynamics::{
    integrate_kinematics, step_actuator, DelayLine, DynamicsError, SimConfig, VehicleState,
};
use crate::metrics::{report, MetricsError, MetricsReport};
use crate::rl::{
    build_observation, compute_advantages, ppo_update, reward, Actor, Adam, Checkpoint, Critic,
    GaeError, Mlp, ObsNorm, PpoError, PpoHyper, PredecessorObs, RewardWeights, Transition,
};
use crate::rng::Rng;
use crate::scenarios::{LeadTrajectory, PlatoonSpec, ScenarioError, VehicleKind};

/// Hidden layer width of both policy networks.
pub const HIDDEN_UNITS: usize = 100;

/// Output-layer init scale for the actor; keeps the initial residual small
/// so training starts from the physics prior.
const ACTOR_OUTPUT_SCALE: f64 = 0.01;

/// Initial exploration log standard deviation.
const INIT_LOG_STD: f64 = -0.5;

/// Default residual action band half-width (m/s^2).
pub const DEFAULT_RESIDUAL_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    /// Linear prior only.
    Linear,
    /// Residual policy only (linear gains zeroed).
    Rl,
    /// Linear prior plus residual policy.
    Perpl,
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerKind::Linear => write!(f, "linear"),
            ControllerKind::Rl => write!(f, "rl"),
            ControllerKind::Perpl => write!(f, "perpl"),
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(ControllerKind::Linear),
            "rl" => Ok(ControllerKind::Rl),
            "perpl" => Ok(ControllerKind::Perpl),
            other => Err(format!(
                "unknown controller '{other}' (expected linear, rl or perpl)"
            )),
        }
    }
}

/// Simulation-wide parameter bundle.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimContext {
    pub cfg: SimConfig<f64>,
    pub gains: LinearGains<f64>,
    pub idm: IdmParams<f64>,
    pub reward: RewardWeights<f64>,
}

/// Actor/critic pair plus the observation scales they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub actor: Actor<f64>,
    pub critic: Critic<f64>,
    pub obs_norm: ObsNorm<f64>,
}

impl Policy {
    pub fn init(seed: u64, residual_limit: f64) -> Self {
        let mut rng = Rng::derive(seed, 0x501_1C7);
        let actor = Actor::new(
            Mlp::init(crate::rl::OBS_DIM, HIDDEN_UNITS, ACTOR_OUTPUT_SCALE, &mut rng),
            INIT_LOG_STD,
            residual_limit,
        );
        let critic = Critic::new(Mlp::init(crate::rl::OBS_DIM, HIDDEN_UNITS, 1.0, &mut rng));
        Policy {
            actor,
            critic,
            obs_norm: ObsNorm::default(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Self {
        Policy {
            actor: ck.to_actor(),
            critic: ck.to_critic(),
            obs_norm: ck.obs_norm,
        }
    }
}

/// Per-timestep, per-vehicle record of one episode. Columns are indexed
/// `[vehicle][step]`. For the lead vehicle the command column repeats its
/// realized acceleration; policy columns are zero for vehicles that carry
/// no controller of that kind.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub dt: f64,
    pub kinds: Vec<VehicleKind>,
    pub position: Vec<Vec<f64>>,
    pub speed: Vec<Vec<f64>>,
    pub accel: Vec<Vec<f64>>,
    pub cmd: Vec<Vec<f64>>,
    pub a_phy: Vec<Vec<f64>>,
    pub a_res: Vec<Vec<f64>>,
    pub a_safe: Vec<Vec<f64>>,
    pub barrier: Vec<Vec<bool>>,
    pub reward: Vec<Vec<f64>>,
    /// True on the final recorded step of an episode cut short by contact.
    pub collision: bool,
    pub collided_step: Option<usize>,
}

impl EpisodeTrace {
    fn new(kinds: Vec<VehicleKind>, dt: f64) -> Self {
        let n = kinds.len();
        EpisodeTrace {
            dt,
            kinds,
            position: vec![Vec::new(); n],
            speed: vec![Vec::new(); n],
            accel: vec![Vec::new(); n],
            cmd: vec![Vec::new(); n],
            a_phy: vec![Vec::new(); n],
            a_res: vec![Vec::new(); n],
            a_safe: vec![Vec::new(); n],
            barrier: vec![Vec::new(); n],
            reward: vec![Vec::new(); n],
            collision: false,
            collided_step: None,
        }
    }

    /// Zero-filled scaffold for metric tests.
    #[doc(hidden)]
    pub fn for_tests(kinds: Vec<VehicleKind>, steps: usize) -> Self {
        let n = kinds.len();
        EpisodeTrace {
            dt: 0.1,
            kinds,
            position: vec![vec![0.0; steps]; n],
            speed: vec![vec![0.0; steps]; n],
            accel: vec![vec![0.0; steps]; n],
            cmd: vec![vec![0.0; steps]; n],
            a_phy: vec![vec![0.0; steps]; n],
            a_res: vec![vec![0.0; steps]; n],
            a_safe: vec![vec![0.0; steps]; n],
            barrier: vec![vec![false; steps]; n],
            reward: vec![vec![0.0; steps]; n],
            collision: false,
            collided_step: None,
        }
    }

    pub fn n_vehicles(&self) -> usize {
        self.kinds.len()
    }

    pub fn len(&self) -> usize {
        self.position.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One row per (step, vehicle). Column order:
    /// step, vehicle, kind, position, speed, accel, cmd, a_phy, a_res,
    /// a_safe, barrier, reward, collision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "step,vehicle,kind,position,speed,accel,cmd,a_phy,a_res,a_safe,barrier,reward,collision\n",
        );
        for t in 0..self.len() {
            for v in 0..self.n_vehicles() {
                let _ = writeln!(
                    out,
                    "{t},{v},{},{},{},{},{},{},{},{},{},{},{}",
                    self.kinds[v],
                    self.position[v][t],
                    self.speed[v][t],
                    self.accel[v][t],
                    self.cmd[v][t],
                    self.a_phy[v][t],
                    self.a_res[v][t],
                    self.a_safe[v][t],
                    self.barrier[v][t] as u8,
                    self.reward[v][t],
                    (self.collision && t + 1 == self.len()) as u8,
                );
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("lead trajectory must have at least 2 steps, got {0}")]
    TrajectoryTooShort(usize),
    #[error("platoon initial speed {spec} does not match trajectory start {traj}")]
    InitialSpeedMismatch { spec: f64, traj: f64 },
    #[error("non-finite state at step {step}, vehicle {vehicle}")]
    NonFinite { step: usize, vehicle: usize },
    #[error("no trajectories supplied")]
    NoTrajectories,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Idm(#[from] IdmError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Gae(#[from] GaeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn check_finite(states: &[VehicleState<f64>], step: usize) -> Result<(), EngineError> {
    for (vehicle, s) in states.iter().enumerate() {
        if !s.is_finite() {
            return Err(EngineError::NonFinite { step, vehicle });
        }
    }
    Ok(())
}

enum Mode<'a> {
    Deterministic,
    Collect(&'a mut Rng),
}

fn simulate(
    ctx: &SimContext,
    platoon: &PlatoonSpec,
    lead: &LeadTrajectory,
    controller: ControllerKind,
    policy: Option<&Policy>,
    mut mode: Mode<'_>,
) -> Result<(EpisodeTrace, Vec<Vec<Transition<f64>>>), EngineError> {
    let cfg = &ctx.cfg;
    let n_steps = lead.len();
    if n_steps < 2 {
        return Err(EngineError::TrajectoryTooShort(n_steps));
    }
    if (platoon.initial_speed - lead.speeds[0]).abs() > 1e-9 {
        return Err(EngineError::InitialSpeedMismatch {
            spec: platoon.initial_speed,
            traj: lead.speeds[0],
        });
    }

    let kinds = platoon.kinds.clone();
    let n_veh = kinds.len();
    let mut states = crate::scenarios::init_equilibrium(platoon, cfg, &ctx.idm)?;
    let lag = cfg.comm_lag_steps();

    // Broadcast history: one delay line per vehicle, pre-filled with the
    // cruise states the platoon held before the episode started, so delayed
    // reads are exact from the first step.
    let mut lines: Vec<DelayLine<VehicleState<f64>>> =
        (0..n_veh).map(|_| DelayLine::new(lag)).collect();
    for j in (1..=lag).rev() {
        for (v, line) in lines.iter_mut().enumerate() {
            line.push(VehicleState::new(
                states[v].position - j as f64 * cfg.dt * states[v].speed,
                states[v].speed,
                0.0,
            ));
        }
    }
    states[0].accel = lead.accels[0];

    let cav_count = platoon.cav_count();
    let mut sequences: Vec<Vec<Transition<f64>>> = vec![Vec::new(); cav_count];
    let mut trace = EpisodeTrace::new(kinds.clone(), cfg.dt);

    'steps: for t in 0..n_steps {
        for (v, line) in lines.iter_mut().enumerate() {
            line.push(states[v]);
        }
        for v in 0..n_veh {
            trace.position[v].push(states[v].position);
            trace.speed[v].push(states[v].speed);
            trace.accel[v].push(states[v].accel);
            trace.cmd[v].push(0.0);
            trace.a_phy[v].push(0.0);
            trace.a_res[v].push(0.0);
            trace.a_safe[v].push(0.0);
            trace.barrier[v].push(false);
            trace.reward[v].push(0.0);
        }
        trace.cmd[0][t] = states[0].accel;

        let mut cmds = vec![0.0f64; n_veh];
        let mut cav_idx = 0usize;
        for n in 1..n_veh {
            match kinds[n] {
                VehicleKind::Cav => {
                    let delayed: Vec<VehicleState<f64>> = (1..=3)
                        .filter(|k| *k <= n)
                        .map(|k| *lines[n - k].read().expect("pre-filled line"))
                        .collect();
                    let err = compute_error_state(&states[n], &delayed[0], cfg);
                    let a_phy = if controller == ControllerKind::Rl {
                        0.0
                    } else {
                        linear_policy(&err, &ctx.gains)
                    };
                    let (a_res, sampled) = match (policy, &mut mode) {
                        (Some(p), Mode::Collect(rng)) => {
                            let preds: Vec<PredecessorObs<f64>> = delayed
                                .iter()
                                .map(|d| PredecessorObs {
                                    speed: d.speed,
                                    accel: d.accel,
                                    gap: d.position - states[n].position,
                                })
                                .collect();
                            let obs = build_observation(&err, &preds, &p.obs_norm);
                            let (action, log_prob) = p.actor.sample(&obs, rng);
                            let value = p.critic.value(&obs);
                            (action, Some((obs, log_prob, value)))
                        }
                        (Some(p), Mode::Deterministic) => {
                            let preds: Vec<PredecessorObs<f64>> = delayed
                                .iter()
                                .map(|d| PredecessorObs {
                                    speed: d.speed,
                                    accel: d.accel,
                                    gap: d.position - states[n].position,
                                })
                                .collect();
                            let obs = build_observation(&err, &preds, &p.obs_norm);
                            (p.actor.mean(&obs), None)
                        }
                        (None, _) => (0.0, None),
                    };
                    let interval = admissible_interval(&states[n], &delayed[0], cfg);
                    let (u, activated) = project(a_phy + a_res, &interval);
                    let r = reward(&err, u, activated, &ctx.reward);
                    trace.cmd[n][t] = u;
                    trace.a_phy[n][t] = a_phy;
                    trace.a_res[n][t] = a_res;
                    trace.a_safe[n][t] = u;
                    trace.barrier[n][t] = activated;
                    trace.reward[n][t] = r;
                    if let Some((obs, log_prob, value)) = sampled {
                        sequences[cav_idx].push(Transition {
                            obs,
                            action: a_res,
                            log_prob,
                            reward: r,
                            value,
                            done: false,
                        });
                    }
                    cmds[n] = u;
                    cav_idx += 1;
                }
                VehicleKind::Hv => {
                    let net_gap =
                        states[n - 1].position - states[n].position - cfg.vehicle_length;
                    let closing = states[n].speed - states[n - 1].speed;
                    let u = idm_accel(
                        states[n].speed,
                        net_gap,
                        closing,
                        &ctx.idm,
                        (cfg.a_min_hard, cfg.a_max_hard),
                    )?;
                    trace.cmd[n][t] = u;
                    cmds[n] = u;
                }
            }
        }

        if t + 1 == n_steps {
            break;
        }

        for n in 1..n_veh {
            let accel_next = step_actuator(states[n].accel, cmds[n], cfg.tau_a, cfg.dt)?;
            states[n] = integrate_kinematics(
                VehicleState::new(states[n].position, states[n].speed, accel_next),
                cfg.dt,
            );
        }
        let v_next = lead.speeds[t + 1];
        states[0] = VehicleState::new(
            states[0].position + v_next * cfg.dt,
            v_next,
            lead.accels[t + 1],
        );
        check_finite(&states, t + 1)?;
        for n in 1..n_veh {
            if states[n - 1].position - states[n].position <= cfg.vehicle_length {
                trace.collision = true;
                trace.collided_step = Some(t + 1);
                break 'steps;
            }
        }
    }

    for seq in &mut sequences {
        if let Some(last) = seq.last_mut() {
            last.done = true;
        }
    }
    Ok((trace, sequences))
}

/// Deterministic episode: the residual is the actor mean; no sampling.
pub fn run_episode(
    ctx: &SimContext,
    platoon: &PlatoonSpec,
    lead: &LeadTrajectory,
    controller: ControllerKind,
    policy: Option<&Policy>,
) -> Result<EpisodeTrace, EngineError> {
    simulate(ctx, platoon, lead, controller, policy, Mode::Deterministic)
        .map(|(trace, _)| trace)
}

/// Stochastic episode for training: residual actions are sampled and every
/// automated follower's transition sequence is returned alongside the trace.
pub fn run_episode_collect(
    ctx: &SimContext,
    platoon: &PlatoonSpec,
    lead: &LeadTrajectory,
    controller: ControllerKind,
    policy: &Policy,
    rng: &mut Rng,
) -> Result<(EpisodeTrace, Vec<Vec<Transition<f64>>>), EngineError> {
    simulate(
        ctx,
        platoon,
        lead,
        controller,
        Some(policy),
        Mode::Collect(rng),
    )
}

fn adapt_platoon(platoon: &PlatoonSpec, lead: &LeadTrajectory) -> PlatoonSpec {
    PlatoonSpec {
        kinds: platoon.kinds.clone(),
        initial_speed: lead.speeds[0],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub iterations: usize,
    pub seed: u64,
    pub controller: ControllerKind,
    pub residual_limit: f64,
    /// Emit an intermediate checkpoint every this many iterations (0: none).
    pub checkpoint_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            iterations: 150,
            seed: 0,
            controller: ControllerKind::Perpl,
            residual_limit: DEFAULT_RESIDUAL_LIMIT,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    /// Mean total episode reward per automated follower in this iteration.
    pub mean_reward: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub policy_objective: f64,
    pub episodes: usize,
}

/// (iteration, mean reward, value loss, clip fraction) rows.
pub fn learning_curve_csv(stats: &[IterationStats]) -> String {
    let mut out = String::from("iteration,mean_reward,value_loss,clip_fraction\n");
    for s in stats {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.iteration, s.mean_reward, s.value_loss, s.clip_fraction
        );
    }
    out
}

/// Alternate rollout collection and policy updates.
///
/// Episodes cycle round-robin over `trajectories`; each iteration collects
/// whole episodes until the rollout horizon is reached, computes advantages
/// per follower sequence, and runs one PPO update. `on_iteration` fires
/// after every update (for curve logging and periodic checkpoints).
pub fn train(
    ctx: &SimContext,
    platoon: &PlatoonSpec,
    trajectories: &[LeadTrajectory],
    hyper: &PpoHyper<f64>,
    settings: &TrainSettings,
    resume: Option<&Checkpoint>,
    mut on_iteration: impl FnMut(&IterationStats, Option<&Checkpoint>),
) -> Result<(Checkpoint, Vec<IterationStats>), EngineError> {
    if trajectories.is_empty() {
        return Err(EngineError::NoTrajectories);
    }
    let mut policy = match resume {
        Some(ck) => Policy::from_checkpoint(ck),
        None => Policy::init(settings.seed, settings.residual_limit),
    };
    let mut opt = Adam::new(crate::rl::flatten_params(&policy.actor, &policy.critic).len());
    let mut episode_counter: u64 = 0;
    let mut all_stats = Vec::with_capacity(settings.iterations);

    for iteration in 0..settings.iterations {
        let mut batch: Vec<Transition<f64>> = Vec::with_capacity(hyper.rollout_horizon);
        let mut advantages: Vec<f64> = Vec::with_capacity(hyper.rollout_horizon);
        let mut returns: Vec<f64> = Vec::with_capacity(hyper.rollout_horizon);
        let mut episode_rewards: Vec<f64> = Vec::new();

        while batch.len() < hyper.rollout_horizon {
            let lead = &trajectories[(episode_counter as usize) % trajectories.len()];
            let episode_platoon = adapt_platoon(platoon, lead);
            let mut ep_rng = Rng::derive(settings.seed, episode_counter);
            let (_, sequences) = run_episode_collect(
                ctx,
                &episode_platoon,
                lead,
                settings.controller,
                &policy,
                &mut ep_rng,
            )?;
            episode_counter += 1;
            for seq in sequences {
                if seq.is_empty() {
                    continue;
                }
                episode_rewards.push(seq.iter().map(|t| t.reward).sum());
                let (adv, ret) =
                    compute_advantages(&seq, 0.0, hyper.gamma, hyper.gae_lambda)?;
                batch.extend(seq);
                advantages.extend(adv);
                returns.extend(ret);
            }
        }

        // linear decay of the initial learning rate, floored at 10%
        let progress = iteration as f64 / settings.iterations.max(1) as f64;
        let scheduled = PpoHyper {
            lr: hyper.lr * (1.0 - progress).max(0.1),
            ..*hyper
        };
        let mut update_rng = Rng::derive(settings.seed, (1 << 40) + iteration as u64);
        let diag = ppo_update(
            &batch,
            &advantages,
            &returns,
            &mut policy.actor,
            &mut policy.critic,
            &mut opt,
            &scheduled,
            &mut update_rng,
        )?;

        let stats = IterationStats {
            iteration,
            mean_reward: episode_rewards.iter().sum::<f64>() / episode_rewards.len() as f64,
            value_loss: diag.value_loss,
            clip_fraction: diag.clip_fraction,
            policy_objective: diag.policy_objective,
            episodes: episode_rewards.len(),
        };
        let periodic = settings.checkpoint_every > 0
            && (iteration + 1) % settings.checkpoint_every == 0
            && iteration + 1 < settings.iterations;
        let ck = periodic.then(|| {
            Checkpoint::from_policy(
                &policy.actor,
                &policy.critic,
                hyper,
                &policy.obs_norm,
                &ctx.reward,
                settings.seed,
            )
        });
        on_iteration(&stats, ck.as_ref());
        all_stats.push(stats);
    }

    let final_ck = Checkpoint::from_policy(
        &policy.actor,
        &policy.critic,
        hyper,
        &policy.obs_norm,
        &ctx.reward,
        settings.seed,
    );
    Ok((final_ck, all_stats))
}

/// Aggregate evaluation outcome over a trajectory set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub per_traj: Vec<MetricsReport>,
    pub mean_headway_rmse: Option<f64>,
    pub mean_damping_ratio: Option<f64>,
    pub mean_comfort: f64,
    pub mean_barrier_pct: Option<f64>,
    pub collisions: usize,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Deterministic evaluation (actor mean, no sampling) over all trajectories.
pub fn evaluate(
    ctx: &SimContext,
    platoon: &PlatoonSpec,
    trajectories: &[LeadTrajectory],
    controller: ControllerKind,
    policy: Option<&Policy>,
    alpha: f64,
) -> Result<EvalOutcome, EngineError> {
    if trajectories.is_empty() {
        return Err(EngineError::NoTrajectories);
    }
    let mut per_traj = Vec::with_capacity(trajectories.len());
    for lead in trajectories {
        let episode_platoon = adapt_platoon(platoon, lead);
        let trace = run_episode(ctx, &episode_platoon, lead, controller, policy)?;
        per_traj.push(report(&trace, &ctx.cfg, alpha)?);
    }
    let mean_headway_rmse = mean_defined(per_traj.iter().map(|r| r.mean_headway_rmse));
    let mean_damping_ratio = mean_defined(per_traj.iter().map(|r| r.mean_damping_ratio));
    let mean_comfort =
        per_traj.iter().map(|r| r.mean_comfort).sum::<f64>() / per_traj.len() as f64;
    let mean_barrier_pct = mean_defined(per_traj.iter().map(|r| r.mean_barrier_pct));
    let collisions = per_traj.iter().filter(|r| r.collision).count();
    Ok(EvalOutcome {
        per_traj,
        mean_headway_rmse,
        mean_damping_ratio,
        mean_comfort,
        mean_barrier_pct,
        collisions,
    })
}
